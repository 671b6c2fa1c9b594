#pragma once

#include <algorithm>
#include <armadillo>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "spatreg/diagnostics.hpp"
#include "spatreg/error.hpp"
#include "spatreg/frame.hpp"
#include "spatreg/parallel.hpp"
#include "spatreg/rng.hpp"

namespace spatreg {

struct forest_hyperparameters {
    std::size_t n_trees = 500;
    std::size_t mtry = 0; // 0 resolves to ceil(p / 3), the regression convention
    std::size_t min_leaf_size = 5;
};

/// Axis-aligned binary regression tree; leaves predict the in-bag mean.
struct regression_tree {
    struct node {
        std::size_t feature = SIZE_MAX; // SIZE_MAX marks a leaf
        double threshold = 0.0;
        double value = 0.0;
        std::int32_t left = -1;
        std::int32_t right = -1;
    };
    std::vector<node> nodes;
    std::vector<std::size_t> in_bag; // bootstrap sample, with multiplicity, size n
    std::vector<std::size_t> oob;    // ascending unit indices never drawn

    double predict_row(const arma::mat& X, std::size_t row) const {
        std::int32_t cur = 0;
        while (nodes[cur].feature != SIZE_MAX)
            cur = X(row, nodes[cur].feature) <= nodes[cur].threshold ? nodes[cur].left
                                                                     : nodes[cur].right;
        return nodes[cur].value;
    }

    /// Prediction with one feature's value overridden (for permutation importance).
    double predict_row_swapped(const arma::mat& X, std::size_t row, std::size_t feature,
                               double replacement) const {
        std::int32_t cur = 0;
        while (nodes[cur].feature != SIZE_MAX) {
            const double v = nodes[cur].feature == feature ? replacement : X(row, nodes[cur].feature);
            cur = v <= nodes[cur].threshold ? nodes[cur].left : nodes[cur].right;
        }
        return nodes[cur].value;
    }
};

struct forest_model {
    std::vector<regression_tree> trees;
    arma::vec oob_predictions; // NaN for units never out-of-bag
    forest_hyperparameters hyper;
    std::uint64_t seed = 0;
    std::vector<std::string> predictor_names;
    std::string response_name;
};

struct importance_report {
    std::vector<std::string> predictors; // model order
    std::vector<double> pct_inc_mse;     // aligned with predictors
    double baseline_oob_mse = 0.0;
    std::vector<std::size_t> ranking; // indices into predictors, descending importance

    double value_of(const std::string& name) const {
        for (std::size_t j = 0; j < predictors.size(); ++j)
            if (predictors[j] == name) return pct_inc_mse[j];
        throw data_error("importance report: unknown predictor '" + name + "'");
    }
};

namespace detail {

struct split_choice {
    bool found = false;
    std::size_t feature = 0;
    double threshold = 0.0;
    double gain = 0.0;
};

// Best variance-reduction split of `sample` over the candidate features.
inline split_choice best_split(const arma::mat& X, const arma::vec& y,
                               const std::vector<std::size_t>& sample,
                               const std::vector<std::size_t>& features, std::size_t min_leaf) {
    const std::size_t m = sample.size();
    split_choice best;
    double sum = 0.0, sum2 = 0.0;
    for (const std::size_t idx : sample) {
        sum += y(idx);
        sum2 += y(idx) * y(idx);
    }
    const double sse_parent = sum2 - sum * sum / static_cast<double>(m);

    std::vector<std::size_t> order(m);
    for (const std::size_t f : features) {
        for (std::size_t i = 0; i < m; ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            const double va = X(sample[a], f), vb = X(sample[b], f);
            if (va != vb) return va < vb;
            return sample[a] < sample[b];
        });
        double lsum = 0.0, lsum2 = 0.0;
        for (std::size_t cut = 1; cut < m; ++cut) {
            const double yv = y(sample[order[cut - 1]]);
            lsum += yv;
            lsum2 += yv * yv;
            const double xl = X(sample[order[cut - 1]], f);
            const double xr = X(sample[order[cut]], f);
            if (xl == xr) continue; // can't separate equal values
            if (cut < min_leaf || m - cut < min_leaf) continue;
            const double rsum = sum - lsum, rsum2 = sum2 - lsum2;
            const double sse_l = lsum2 - lsum * lsum / static_cast<double>(cut);
            const double sse_r = rsum2 - rsum * rsum / static_cast<double>(m - cut);
            const double gain = sse_parent - sse_l - sse_r;
            if (gain > best.gain + 1e-12 ||
                (gain > best.gain - 1e-12 && best.found && f < best.feature)) {
                best.found = true;
                best.feature = f;
                best.threshold = xl + 0.5 * (xr - xl);
                best.gain = gain;
            }
        }
    }
    return best;
}

inline std::int32_t grow_tree(regression_tree& tree, const arma::mat& X, const arma::vec& y,
                              std::vector<std::size_t> sample, std::size_t mtry,
                              std::size_t min_leaf, rng& gen) {
    const std::size_t m = sample.size();
    double sum = 0.0;
    for (const std::size_t idx : sample) sum += y(idx);
    const double mean = sum / static_cast<double>(m);

    const auto make_leaf = [&]() {
        regression_tree::node leaf;
        leaf.value = mean;
        tree.nodes.push_back(leaf);
        return static_cast<std::int32_t>(tree.nodes.size() - 1);
    };
    if (m < 2 * min_leaf) return make_leaf();

    const std::size_t p = X.n_cols;
    const auto feature_pick = sample_without_replacement(p, std::min(mtry, p), gen);
    std::vector<std::size_t> features(feature_pick.begin(), feature_pick.end());
    std::sort(features.begin(), features.end()); // stable split scan order

    const auto split = best_split(X, y, sample, features, min_leaf);
    if (!split.found || split.gain <= 0.0) return make_leaf();

    std::vector<std::size_t> left, right;
    for (const std::size_t idx : sample)
        (X(idx, split.feature) <= split.threshold ? left : right).push_back(idx);
    sample.clear();
    sample.shrink_to_fit();

    regression_tree::node inner;
    inner.feature = split.feature;
    inner.threshold = split.threshold;
    inner.value = mean;
    tree.nodes.push_back(inner);
    const auto self = static_cast<std::int32_t>(tree.nodes.size() - 1);
    const auto l = grow_tree(tree, X, y, std::move(left), mtry, min_leaf, gen);
    const auto r = grow_tree(tree, X, y, std::move(right), mtry, min_leaf, gen);
    tree.nodes[self].left = l;
    tree.nodes[self].right = r;
    return self;
}

} // namespace detail

/// Bagged regression trees with variance-reduction splits over mtry sampled predictors.
/// Fully reproducible: tree t draws everything from the (seed, t) sub-stream.
inline forest_model fit_forest(const spatial_frame& frame, const model_spec& spec,
                               const forest_hyperparameters& hyper, std::uint64_t seed) {
    spec.validate_against(frame);
    const std::size_t n = frame.n();
    if (n < 10) throw data_error("fit_forest: need n >= 10");
    if (hyper.n_trees < 1) throw config_error("fit_forest: n_trees must be >= 1");
    if (hyper.min_leaf_size < 1) throw config_error("fit_forest: min_leaf_size must be >= 1");

    const std::size_t p = spec.predictors.size();
    arma::mat X(n, p);
    for (std::size_t j = 0; j < p; ++j) X.col(j) = frame.column(spec.predictors[j]);
    const arma::vec y = frame.column(spec.response);
    if (y.max() - y.min() <= 0.0) throw data_error("fit_forest: constant response");

    forest_model model;
    model.hyper = hyper;
    if (model.hyper.mtry == 0)
        model.hyper.mtry = (p + 2) / 3; // ceil(p/3)
    model.hyper.mtry = std::min(model.hyper.mtry, p);
    model.seed = seed;
    model.predictor_names = spec.predictors;
    model.response_name = spec.response;
    model.trees.resize(hyper.n_trees);

    parallel_for(hyper.n_trees, [&](std::size_t t) {
        rng gen(substream(seed, "forest_tree", t));
        regression_tree& tree = model.trees[t];
        tree.in_bag.resize(n);
        std::vector<bool> drawn(n, false);
        for (std::size_t i = 0; i < n; ++i) {
            const auto pick = static_cast<std::size_t>(gen.next_index(n));
            tree.in_bag[i] = pick;
            drawn[pick] = true;
        }
        for (std::size_t i = 0; i < n; ++i)
            if (!drawn[i]) tree.oob.push_back(i);
        detail::grow_tree(tree, X, y, tree.in_bag, model.hyper.mtry, model.hyper.min_leaf_size, gen);
    });

    model.oob_predictions.set_size(n);
    model.oob_predictions.fill(arma::datum::nan);
    arma::vec sum(n, arma::fill::zeros);
    arma::uvec count(n, arma::fill::zeros);
    for (const auto& tree : model.trees)
        for (const std::size_t i : tree.oob) {
            sum(i) += tree.predict_row(X, i);
            count(i) += 1;
        }
    for (std::size_t i = 0; i < n; ++i)
        if (count(i) > 0) model.oob_predictions(i) = sum(i) / static_cast<double>(count(i));
    return model;
}

/// Permutation importance: per tree, each predictor's out-of-bag values are shuffled and
/// the percent increase in that tree's OOB MSE is averaged over trees.
inline importance_report importance(const forest_model& model, const spatial_frame& frame,
                                    const model_spec& spec) {
    if (spec.predictors != model.predictor_names || spec.response != model.response_name)
        throw config_error("importance: model was fitted on a different specification");
    const std::size_t n = frame.n();
    const std::size_t p = model.predictor_names.size();
    arma::mat X(n, p);
    for (std::size_t j = 0; j < p; ++j) X.col(j) = frame.column(model.predictor_names[j]);
    const arma::vec y = frame.column(model.response_name);

    importance_report report;
    report.predictors = model.predictor_names;
    report.pct_inc_mse.assign(p, 0.0);

    double base_sse = 0.0;
    std::size_t base_count = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (std::isfinite(model.oob_predictions(i))) {
            const double e = y(i) - model.oob_predictions(i);
            base_sse += e * e;
            ++base_count;
        }
    }
    report.baseline_oob_mse = base_count > 0 ? base_sse / static_cast<double>(base_count) : 0.0;

    const std::size_t n_trees = model.trees.size();
    arma::mat pct(n_trees, p, arma::fill::zeros);
    arma::uvec usable(n_trees, arma::fill::zeros);
    parallel_for(n_trees, [&](std::size_t t) {
        const auto& tree = model.trees[t];
        const std::size_t m = tree.oob.size();
        if (m == 0) return;
        std::vector<double> base_pred(m);
        double mse_base = 0.0;
        for (std::size_t u = 0; u < m; ++u) {
            base_pred[u] = tree.predict_row(X, tree.oob[u]);
            const double e = y(tree.oob[u]) - base_pred[u];
            mse_base += e * e;
        }
        mse_base /= static_cast<double>(m);
        if (!(mse_base > 0.0)) return;
        usable(t) = 1;
        for (std::size_t j = 0; j < p; ++j) {
            rng gen(substream(substream(model.seed, "importance", t), "predictor", j));
            std::vector<double> values(m);
            for (std::size_t u = 0; u < m; ++u) values[u] = X(tree.oob[u], j);
            shuffle(values, gen);
            double mse_perm = 0.0;
            for (std::size_t u = 0; u < m; ++u) {
                const double pred = tree.predict_row_swapped(X, tree.oob[u], j, values[u]);
                const double e = y(tree.oob[u]) - pred;
                mse_perm += e * e;
            }
            mse_perm /= static_cast<double>(m);
            pct(t, j) = 100.0 * (mse_perm - mse_base) / mse_base;
        }
    });
    const double n_usable = static_cast<double>(arma::accu(usable));
    if (n_usable > 0.0)
        for (std::size_t j = 0; j < p; ++j) report.pct_inc_mse[j] = arma::accu(pct.col(j)) / n_usable;

    report.ranking.resize(p);
    for (std::size_t j = 0; j < p; ++j) report.ranking[j] = j;
    std::sort(report.ranking.begin(), report.ranking.end(), [&](std::size_t a, std::size_t b) {
        if (report.pct_inc_mse[a] != report.pct_inc_mse[b])
            return report.pct_inc_mse[a] > report.pct_inc_mse[b];
        return report.predictors[a] < report.predictors[b];
    });
    return report;
}

struct screen_result {
    std::vector<std::string> kept; // original order
    bool empty_warning = false;
};

/// Keeps predictors whose raw %IncMSE exceeds the threshold (default 10).
inline screen_result screen_by_importance(const importance_report& report, double threshold = 10.0) {
    screen_result res;
    for (std::size_t j = 0; j < report.predictors.size(); ++j)
        if (report.pct_inc_mse[j] > threshold) res.kept.push_back(report.predictors[j]);
    res.empty_warning = res.kept.empty();
    return res;
}

struct selection_drop {
    std::string predictor;
    std::string reason;
};

struct prune_result {
    std::vector<std::string> kept;
    std::vector<selection_drop> dropped;
};

/// Correlation pruning: while any pair exceeds the threshold, drop the predictor with the
/// most high-correlation partners; ties resolve to the lower-importance member, then to
/// the lexicographically later name.
inline prune_result prune_correlated(const spatial_frame& frame, std::vector<std::string> predictors,
                                     const importance_report& report, double corr_threshold = 0.8) {
    prune_result res;
    for (const auto& name : predictors) report.value_of(name); // report must cover everything
    while (predictors.size() > 1) {
        const std::size_t p = predictors.size();
        arma::mat X(frame.n(), p);
        for (std::size_t j = 0; j < p; ++j) X.col(j) = frame.column(predictors[j]);
        const arma::mat R = arma::cor(X);
        std::vector<std::size_t> partners(p, 0);
        bool any = false;
        for (std::size_t a = 0; a < p; ++a)
            for (std::size_t b = 0; b < p; ++b)
                if (a != b && std::fabs(R(a, b)) > corr_threshold) {
                    ++partners[a];
                    any = true;
                }
        if (!any) break;
        std::size_t victim = 0;
        for (std::size_t j = 1; j < p; ++j) {
            if (partners[j] > partners[victim]) {
                victim = j;
            } else if (partners[j] == partners[victim]) {
                const double ij = report.value_of(predictors[j]);
                const double iv = report.value_of(predictors[victim]);
                if (ij < iv || (ij == iv && predictors[j] > predictors[victim])) victim = j;
            }
        }
        res.dropped.push_back({predictors[victim],
                               "correlated with " + std::to_string(partners[victim]) +
                                   " predictor(s) above |r| = " + format_number(corr_threshold)});
        predictors.erase(predictors.begin() + static_cast<std::ptrdiff_t>(victim));
    }
    res.kept = std::move(predictors);
    return res;
}

struct vif_filter_result {
    std::vector<std::string> kept;
    std::vector<selection_drop> dropped;
};

/// Iteratively drops the highest-VIF predictor while any VIF exceeds the threshold
/// (default 5); exact collinearity sheds one infinite member per iteration.
inline vif_filter_result filter_by_vif(const spatial_frame& frame,
                                       std::vector<std::string> predictors,
                                       double vif_threshold = 5.0) {
    if (predictors.size() < 2) throw config_error("filter_by_vif: need at least 2 predictors");
    vif_filter_result res;
    while (predictors.size() >= 2) {
        const std::vector<double> v = vif(frame, predictors);
        std::size_t worst = 0;
        for (std::size_t j = 1; j < v.size(); ++j) {
            if (v[j] > v[worst] || (v[j] == v[worst] && predictors[j] > predictors[worst]))
                worst = j;
        }
        if (!(v[worst] > vif_threshold)) break;
        res.dropped.push_back({predictors[worst], "VIF " + format_number(v[worst]) + " > " +
                                                      format_number(vif_threshold)});
        predictors.erase(predictors.begin() + static_cast<std::ptrdiff_t>(worst));
    }
    res.kept = std::move(predictors);
    return res;
}

} // namespace spatreg
