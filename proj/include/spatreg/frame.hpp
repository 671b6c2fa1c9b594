#pragma once

#include <armadillo>
#include <cctype>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "spatreg/error.hpp"
#include "spatreg/table.hpp"

namespace spatreg {

/// Observation table bound to planar (projected, meter-scale) 2-D locations.
/// Immutable after construction: all mutating operations return a new frame.
class spatial_frame {
public:
    spatial_frame() = default;

    spatial_frame(std::vector<std::string> ids, arma::mat xy,
                  std::vector<std::string> column_names, std::vector<arma::vec> column_data)
        : ids_(std::move(ids)), xy_(std::move(xy)), names_(std::move(column_names)),
          data_(std::move(column_data)) {
        validate();
    }

    std::size_t n() const { return ids_.size(); }
    const std::vector<std::string>& ids() const { return ids_; }
    const arma::mat& locations() const { return xy_; }
    double x(std::size_t i) const { return xy_(i, 0); }
    double y(std::size_t i) const { return xy_(i, 1); }
    const std::vector<std::string>& column_names() const { return names_; }

    bool has_column(std::string_view name) const {
        for (const auto& c : names_)
            if (c == name) return true;
        return false;
    }

    const arma::vec& column(std::string_view name) const {
        for (std::size_t j = 0; j < names_.size(); ++j)
            if (names_[j] == name) return data_[j];
        throw data_error("column not found: '" + std::string(name) + "'");
    }

    std::size_t index_of(std::string_view id) const {
        for (std::size_t i = 0; i < ids_.size(); ++i)
            if (ids_[i] == id) return i;
        throw data_error("unknown unit id: '" + std::string(id) + "'");
    }

    /// New frame with `name` set to `values` (replacing an existing column of that name).
    spatial_frame with_column(const std::string& name, arma::vec values) const {
        spatial_frame out = *this;
        for (std::size_t j = 0; j < out.names_.size(); ++j) {
            if (out.names_[j] == name) {
                out.data_[j] = std::move(values);
                out.validate();
                return out;
            }
        }
        out.names_.push_back(name);
        out.data_.push_back(std::move(values));
        out.validate();
        return out;
    }

    /// New frame restricted to the given unit indices, in the given order.
    spatial_frame subset(const std::vector<std::size_t>& keep) const {
        std::vector<std::string> ids;
        ids.reserve(keep.size());
        arma::mat xy(keep.size(), 2);
        for (std::size_t r = 0; r < keep.size(); ++r) {
            ids.push_back(ids_[keep[r]]);
            xy.row(r) = xy_.row(keep[r]);
        }
        std::vector<arma::vec> cols;
        cols.reserve(data_.size());
        for (const auto& col : data_) {
            arma::vec v(keep.size());
            for (std::size_t r = 0; r < keep.size(); ++r) v(r) = col(keep[r]);
            cols.push_back(std::move(v));
        }
        return spatial_frame(std::move(ids), std::move(xy), names_, std::move(cols));
    }

    /// Groups of unit indices sharing an exact location (only groups of size > 1).
    std::vector<std::vector<std::size_t>> duplicate_location_groups() const {
        std::map<std::pair<double, double>, std::vector<std::size_t>> seen;
        for (std::size_t i = 0; i < n(); ++i) seen[{xy_(i, 0), xy_(i, 1)}].push_back(i);
        std::vector<std::vector<std::size_t>> groups;
        for (auto& [loc, members] : seen)
            if (members.size() > 1) groups.push_back(std::move(members));
        return groups;
    }

private:
    void validate() const {
        const std::size_t n = ids_.size();
        if (n == 0) throw data_error("spatial frame must contain at least one unit");
        if (xy_.n_rows != n || xy_.n_cols != 2)
            throw data_error("location matrix must be n x 2");
        if (!xy_.is_finite()) throw data_error("non-finite coordinate");
        std::map<std::string_view, std::size_t> seen;
        for (const auto& id : ids_) {
            if (++seen[id] > 1) throw data_error("duplicate id '" + id + "'");
        }
        if (names_.size() != data_.size())
            throw data_error("column name/data size mismatch");
        std::map<std::string_view, int> cols;
        for (std::size_t j = 0; j < names_.size(); ++j) {
            if (++cols[names_[j]] > 1) throw data_error("duplicate column '" + names_[j] + "'");
            if (data_[j].n_elem != n)
                throw data_error("column '" + names_[j] + "' has length " +
                                 std::to_string(data_[j].n_elem) + ", expected " + std::to_string(n));
            if (!data_[j].is_finite())
                throw data_error("column '" + names_[j] + "' contains non-finite values");
        }
    }

    std::vector<std::string> ids_;
    arma::mat xy_;
    std::vector<std::string> names_;
    std::vector<arma::vec> data_;
};

/// Which column is the response, which are predictors, intercept on/off.
struct model_spec {
    std::string response;
    std::vector<std::string> predictors;
    bool include_intercept = true;

    void validate_against(const spatial_frame& frame) const {
        if (predictors.empty()) throw config_error("model spec: predictors must be non-empty");
        if (!frame.has_column(response))
            throw config_error("model spec: response column '" + response + "' not found");
        for (const auto& p : predictors) {
            if (p == response)
                throw config_error("model spec: response '" + response + "' listed as predictor");
            if (!frame.has_column(p))
                throw config_error("model spec: predictor column '" + p + "' not found");
        }
        for (std::size_t a = 0; a < predictors.size(); ++a)
            for (std::size_t b = a + 1; b < predictors.size(); ++b)
                if (predictors[a] == predictors[b])
                    throw config_error("model spec: predictor '" + predictors[a] + "' listed twice");
    }

    /// Design matrix in term order: intercept column first when enabled.
    arma::mat design(const spatial_frame& frame) const {
        const std::size_t n = frame.n();
        const std::size_t p = predictors.size() + (include_intercept ? 1 : 0);
        arma::mat X(n, p);
        std::size_t j = 0;
        if (include_intercept) X.col(j++).ones();
        for (const auto& name : predictors) X.col(j++) = frame.column(name);
        return X;
    }

    std::vector<std::string> term_names() const {
        std::vector<std::string> t;
        if (include_intercept) t.push_back("(Intercept)");
        t.insert(t.end(), predictors.begin(), predictors.end());
        return t;
    }
};

struct dropped_row {
    std::size_t row;        // 1-based data row index (excluding the header)
    std::string id;         // empty when the id cell itself was missing
    std::string column;     // first selected column found missing
};

struct load_report {
    std::vector<dropped_row> dropped;
    std::vector<std::vector<std::size_t>> duplicate_location_groups;
};

struct load_result {
    spatial_frame frame;
    load_report report;
};

namespace detail {

inline bool looks_geographic(std::string_view name) {
    std::string low;
    for (const char c : name) low += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return low == "lat" || low == "latitude" || low == "lon" || low == "lng" ||
           low == "long" || low == "longitude";
}

} // namespace detail

/// Parses delimited text into a validated spatial frame. Every column other than the id
/// becomes numeric data; rows with a missing (empty) cell in any column are dropped and
/// reported, while non-numeric content is a hard error. Coordinate columns named like
/// geographic axes (lat/lon variants) are rejected: all distance math here is planar meters.
inline load_result load_frame(std::string_view content, const std::string& id_column,
                              const std::string& x_column, const std::string& y_column,
                              char delim = ',') {
    const text_table tab = parse_table(content, delim);
    if (tab.rows.empty()) throw data_error("empty table: no data rows");
    if (id_column == x_column || id_column == y_column || x_column == y_column)
        throw data_error("id/x/y columns must be distinct");
    if (detail::looks_geographic(x_column) || detail::looks_geographic(y_column))
        throw data_error("coordinate columns must be planar meters, not geographic "
                         "latitude/longitude ('" + x_column + "', '" + y_column + "')");
    const std::size_t id_j = tab.column_index(id_column);
    const std::size_t x_j = tab.column_index(x_column);
    const std::size_t y_j = tab.column_index(y_column);

    std::vector<std::size_t> data_cols;
    std::vector<std::string> names;
    for (std::size_t j = 0; j < tab.header.size(); ++j) {
        if (j == id_j) continue;
        data_cols.push_back(j);
        names.push_back(tab.header[j]);
    }

    load_report report;
    std::vector<std::string> ids;
    std::vector<std::vector<double>> cols(data_cols.size());
    for (std::size_t r = 0; r < tab.rows.size(); ++r) {
        const auto& row = tab.rows[r];
        std::string missing_col;
        if (cell_is_missing(row[id_j])) {
            missing_col = id_column;
        } else {
            for (std::size_t c = 0; c < data_cols.size(); ++c) {
                if (cell_is_missing(row[data_cols[c]])) {
                    missing_col = names[c];
                    break;
                }
            }
        }
        if (!missing_col.empty()) {
            report.dropped.push_back({r + 1, cell_is_missing(row[id_j]) ? "" : row[id_j], missing_col});
            continue;
        }
        ids.push_back(row[id_j]);
        for (std::size_t c = 0; c < data_cols.size(); ++c) {
            const auto v = parse_number(row[data_cols[c]]);
            if (!v)
                throw data_error("non-numeric cell at row " + std::to_string(r + 1) +
                                 ", column '" + names[c] + "': '" + row[data_cols[c]] + "'");
            cols[c].push_back(*v);
        }
    }
    if (ids.empty()) throw data_error("empty table: every row was dropped as incomplete");

    const std::size_t n = ids.size();
    arma::mat xy(n, 2);
    std::vector<std::string> keep_names;
    std::vector<arma::vec> keep_data;
    for (std::size_t c = 0; c < data_cols.size(); ++c) {
        arma::vec v(n);
        for (std::size_t i = 0; i < n; ++i) v(i) = cols[c][i];
        // Match by table position, not name: a data column may legitimately share its
        // name with a coordinate header (e.g. a response called "y").
        if (data_cols[c] == x_j) {
            xy.col(0) = v;
        } else if (data_cols[c] == y_j) {
            xy.col(1) = v;
        } else {
            keep_names.push_back(names[c]);
            keep_data.push_back(std::move(v));
        }
    }
    spatial_frame frame(std::move(ids), std::move(xy), std::move(keep_names), std::move(keep_data));
    report.duplicate_location_groups = frame.duplicate_location_groups();
    return {std::move(frame), std::move(report)};
}

/// Appends (or overwrites) out = 100 * numerator / denominator. Re-deriving with the
/// same inputs is idempotent. Denominator entries must be strictly positive.
inline spatial_frame derive_share(const spatial_frame& frame, const std::string& numerator,
                                  const std::string& denominator, const std::string& out) {
    const arma::vec& num = frame.column(numerator);
    const arma::vec& den = frame.column(denominator);
    for (std::size_t i = 0; i < frame.n(); ++i) {
        if (den(i) <= 0.0)
            throw data_error("derive_share: nonpositive denominator '" + denominator +
                             "' at unit '" + frame.ids()[i] + "'");
    }
    return frame.with_column(out, 100.0 * num / den);
}

/// Delimited-text export; numbers are written in shortest exact round-trip form, so
/// load_frame(export_delimited(f)) reproduces f to the bit.
inline std::string export_delimited(const spatial_frame& frame, const std::string& id_column = "id",
                                    const std::string& x_column = "x",
                                    const std::string& y_column = "y", char delim = ',') {
    std::string out = quote_field(id_column, delim);
    out += delim;
    out += quote_field(x_column, delim);
    out += delim;
    out += quote_field(y_column, delim);
    for (const auto& name : frame.column_names()) {
        out += delim;
        out += quote_field(name, delim);
    }
    out += '\n';
    for (std::size_t i = 0; i < frame.n(); ++i) {
        out += quote_field(frame.ids()[i], delim);
        out += delim;
        out += format_number(frame.x(i));
        out += delim;
        out += format_number(frame.y(i));
        for (const auto& name : frame.column_names()) {
            out += delim;
            out += format_number(frame.column(name)(i));
        }
        out += '\n';
    }
    return out;
}

} // namespace spatreg
