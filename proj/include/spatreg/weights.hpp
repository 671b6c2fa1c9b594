#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "spatreg/error.hpp"
#include "spatreg/frame.hpp"
#include "spatreg/table.hpp"

namespace spatreg {

enum class weights_style { binary, row_standardized };

/// Sparse spatial weights. Rows hold (neighbour index, weight) pairs sorted by index;
/// self-neighbours are structurally impossible. Immutable once built.
class weights_matrix {
public:
    struct neighbour {
        std::size_t index;
        double weight;
    };

    weights_matrix(std::size_t n, std::vector<std::vector<neighbour>> rows, weights_style style,
                   bool symmetric_structure)
        : n_(n), rows_(std::move(rows)), style_(style), symmetric_(symmetric_structure) {
        if (rows_.size() != n_) throw data_error("weights: row count mismatch");
        for (std::size_t i = 0; i < n_; ++i) {
            auto& row = rows_[i];
            std::sort(row.begin(), row.end(),
                      [](const neighbour& a, const neighbour& b) { return a.index < b.index; });
            for (const auto& nb : row) {
                if (nb.index == i) throw data_error("weights: self-neighbour at unit " + std::to_string(i));
                if (nb.index >= n_) throw data_error("weights: neighbour index out of range");
                if (!(nb.weight >= 0.0)) throw data_error("weights: negative or NaN weight");
            }
            for (std::size_t k = 1; k < row.size(); ++k)
                if (row[k].index == row[k - 1].index)
                    throw data_error("weights: duplicate neighbour entry at unit " + std::to_string(i));
            if (row.empty()) islands_.push_back(i);
        }
    }

    std::size_t n() const { return n_; }
    weights_style style() const { return style_; }
    bool symmetric_structure() const { return symmetric_; }
    const std::vector<neighbour>& row(std::size_t i) const { return rows_[i]; }
    const std::vector<std::size_t>& islands() const { return islands_; }

    /// Aggregate of all weights, computed on demand.
    double s0() const {
        double s = 0.0;
        for (const auto& row : rows_)
            for (const auto& nb : row) s += nb.weight;
        return s;
    }

    double row_sum(std::size_t i) const {
        double s = 0.0;
        for (const auto& nb : rows_[i]) s += nb.weight;
        return s;
    }

    /// Spatial lag (W v) of a vector.
    arma::vec lag(const arma::vec& v) const {
        if (v.n_elem != n_) throw data_error("weights: vector length mismatch");
        arma::vec out(n_, arma::fill::zeros);
        for (std::size_t i = 0; i < n_; ++i)
            for (const auto& nb : rows_[i]) out(i) += nb.weight * v(nb.index);
        return out;
    }

    arma::mat dense() const {
        arma::mat W(n_, n_, arma::fill::zeros);
        for (std::size_t i = 0; i < n_; ++i)
            for (const auto& nb : rows_[i]) W(i, nb.index) = nb.weight;
        return W;
    }

private:
    std::size_t n_;
    std::vector<std::vector<neighbour>> rows_;
    weights_style style_;
    bool symmetric_;
    std::vector<std::size_t> islands_;
};

namespace detail {

inline double sq_dist(const arma::mat& xy, std::size_t i, std::size_t j) {
    const double dx = xy(i, 0) - xy(j, 0);
    const double dy = xy(i, 1) - xy(j, 1);
    return dx * dx + dy * dy;
}

} // namespace detail

/// Binary k-nearest-neighbour weights. Distance ties (including duplicate locations)
/// break by ascending unit index, so the structure is deterministic. Generally asymmetric.
inline weights_matrix build_knn(const spatial_frame& frame, std::size_t k) {
    const std::size_t n = frame.n();
    if (n < 2) throw data_error("build_knn: need at least 2 units");
    if (k < 1 || k > n - 1)
        throw data_error("build_knn: k = " + std::to_string(k) + " out of range [1, " +
                         std::to_string(n - 1) + "]");
    const arma::mat& xy = frame.locations();
    std::vector<std::vector<weights_matrix::neighbour>> rows(n);
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t i = 0; i < n; ++i) {
        cand.clear();
        cand.reserve(n - 1);
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) cand.emplace_back(detail::sq_dist(xy, i, j), j);
        // Pair ordering is (distance, index): ascending index is the distance tiebreak.
        std::nth_element(cand.begin(), cand.begin() + (k - 1), cand.end());
        std::sort(cand.begin(), cand.begin() + k);
        for (std::size_t c = 0; c < k; ++c) rows[i].push_back({cand[c].second, 1.0});
    }
    return weights_matrix(n, std::move(rows), weights_style::binary, false);
}

/// Symmetric binary weights from an explicit adjacency list (queen contiguity supplied
/// by upstream GIS topology). Units absent from every pair become islands.
inline weights_matrix build_contiguity(const spatial_frame& frame,
                                       const std::vector<std::pair<std::string, std::string>>& adjacency_pairs) {
    const std::size_t n = frame.n();
    std::set<std::pair<std::size_t, std::size_t>> edges;
    for (const auto& [a, b] : adjacency_pairs) {
        const std::size_t ia = frame.index_of(a);
        const std::size_t ib = frame.index_of(b);
        if (ia == ib) throw data_error("build_contiguity: self-pair ('" + a + "', '" + b + "')");
        edges.insert({std::min(ia, ib), std::max(ia, ib)});
    }
    std::vector<std::vector<weights_matrix::neighbour>> rows(n);
    for (const auto& [i, j] : edges) {
        rows[i].push_back({j, 1.0});
        rows[j].push_back({i, 1.0});
    }
    return weights_matrix(n, std::move(rows), weights_style::binary, true);
}

/// Symmetric binary weights with w_ij = 1 iff 0 < d_ij <= radius. Islands possible.
inline weights_matrix build_distance_band(const spatial_frame& frame, double radius) {
    if (!(radius > 0.0)) throw data_error("build_distance_band: radius must be positive");
    const std::size_t n = frame.n();
    const arma::mat& xy = frame.locations();
    const double r2 = radius * radius;
    std::vector<std::vector<weights_matrix::neighbour>> rows(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d2 = detail::sq_dist(xy, i, j);
            if (d2 > 0.0 && d2 <= r2) {
                rows[i].push_back({j, 1.0});
                rows[j].push_back({i, 1.0});
            }
        }
    }
    return weights_matrix(n, std::move(rows), weights_style::binary, true);
}

/// Divides every non-island row by its row sum; islands keep their all-zero row.
/// Preserves the sparsity pattern exactly; idempotent.
inline weights_matrix row_standardize(const weights_matrix& W) {
    std::vector<std::vector<weights_matrix::neighbour>> rows(W.n());
    for (std::size_t i = 0; i < W.n(); ++i) {
        const double s = W.row_sum(i);
        rows[i] = W.row(i);
        if (s > 0.0)
            for (auto& nb : rows[i]) nb.weight /= s;
    }
    return weights_matrix(W.n(), std::move(rows), weights_style::row_standardized,
                          W.symmetric_structure());
}

struct island_drop_result {
    spatial_frame frame;
    weights_matrix weights;
    std::vector<std::string> removed_ids;
    std::vector<std::size_t> kept_indices; // new index r held old index kept_indices[r]
};

/// Removes island units from both the frame and the matrix, remapping indices.
inline island_drop_result drop_islands(const spatial_frame& frame, const weights_matrix& W) {
    if (W.n() != frame.n()) throw data_error("drop_islands: weights/frame size mismatch");
    if (W.islands().empty()) {
        std::vector<std::size_t> identity(frame.n());
        for (std::size_t i = 0; i < frame.n(); ++i) identity[i] = i;
        return {frame, W, {}, std::move(identity)};
    }
    if (W.islands().size() == frame.n())
        throw data_error("drop_islands: every unit is an island");
    std::vector<bool> is_island(frame.n(), false);
    std::vector<std::string> removed;
    for (const std::size_t i : W.islands()) {
        is_island[i] = true;
        removed.push_back(frame.ids()[i]);
    }
    std::vector<std::size_t> keep;
    std::vector<std::size_t> new_index(frame.n(), 0);
    for (std::size_t i = 0; i < frame.n(); ++i) {
        if (!is_island[i]) {
            new_index[i] = keep.size();
            keep.push_back(i);
        }
    }
    std::vector<std::vector<weights_matrix::neighbour>> rows(keep.size());
    for (std::size_t r = 0; r < keep.size(); ++r)
        for (const auto& nb : W.row(keep[r]))
            rows[r].push_back({new_index[nb.index], nb.weight});
    return {frame.subset(keep),
            weights_matrix(keep.size(), std::move(rows), W.style(), W.symmetric_structure()),
            std::move(removed), std::move(keep)};
}

/// Parses a two-column delimited adjacency list of id pairs.
inline std::vector<std::pair<std::string, std::string>> parse_adjacency_pairs(std::string_view content,
                                                                              char delim = ',') {
    const text_table tab = parse_table(content, delim);
    if (tab.header.size() != 2)
        throw data_error("adjacency list must have exactly two columns, got " +
                         std::to_string(tab.header.size()));
    std::vector<std::pair<std::string, std::string>> pairs;
    pairs.reserve(tab.rows.size());
    for (const auto& row : tab.rows) pairs.emplace_back(row[0], row[1]);
    return pairs;
}

/// "id,neighbour_id,weight" triples in stable order (by id, then neighbour id).
inline std::string export_weights(const weights_matrix& W, const std::vector<std::string>& ids,
                                  char delim = ',') {
    if (ids.size() != W.n()) throw data_error("export_weights: id list size mismatch");
    std::string out = "id";
    out += delim;
    out += "neighbour_id";
    out += delim;
    out += "weight\n";
    std::vector<std::size_t> order(W.n());
    for (std::size_t i = 0; i < W.n(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
    for (const std::size_t i : order) {
        std::vector<weights_matrix::neighbour> row = W.row(i);
        std::sort(row.begin(), row.end(), [&](const auto& a, const auto& b) {
            return ids[a.index] < ids[b.index];
        });
        for (const auto& nb : row) {
            out += quote_field(ids[i], delim);
            out += delim;
            out += quote_field(ids[nb.index], delim);
            out += delim;
            out += format_number(nb.weight);
            out += '\n';
        }
    }
    return out;
}

} // namespace spatreg
