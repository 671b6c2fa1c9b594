#pragma once

#include <armadillo>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "spatreg/error.hpp"
#include "spatreg/frame.hpp"
#include "spatreg/parallel.hpp"
#include "spatreg/rng.hpp"
#include "spatreg/weights.hpp"

namespace spatreg {

enum class test_alternative { greater, less, two_sided };

inline std::string to_string(test_alternative a) {
    switch (a) {
        case test_alternative::greater: return "greater";
        case test_alternative::less: return "less";
        default: return "two_sided";
    }
}

/// Permutation-inference settings. The seed is mandatory; every replicate derives its
/// own stream from (seed, replicate index), so results do not depend on thread count.
struct perm_options {
    std::uint64_t seed;
    int n_permutations = 999;
    std::optional<test_alternative> alternative; // statistic-specific default when unset
};

struct autocorr_result {
    std::string statistic_name;
    double statistic;
    double null_expectation;
    double pseudo_p;
    int n_permutations;
    test_alternative alternative;
    std::uint64_t seed;
};

enum class lisa_cluster { high_high, low_low, high_low, low_high, other_positive, negative, not_significant };

inline std::string to_string(lisa_cluster c) {
    switch (c) {
        case lisa_cluster::high_high: return "high_high";
        case lisa_cluster::low_low: return "low_low";
        case lisa_cluster::high_low: return "high_low";
        case lisa_cluster::low_high: return "low_high";
        case lisa_cluster::other_positive: return "other_positive";
        case lisa_cluster::negative: return "negative";
        default: return "not_significant";
    }
}

struct lisa_result {
    arma::vec local_stat;
    arma::vec pseudo_p;
    std::vector<lisa_cluster> cluster;
    double alpha;
    int n_permutations;
    std::uint64_t seed;
};

namespace detail {

inline void check_autocorr_inputs(const arma::vec& y, const weights_matrix& W) {
    if (y.n_elem != W.n()) throw data_error("autocorrelation: y length does not match weights");
    if (W.n() < 3) throw data_error("autocorrelation: need n >= 3");
    if (!W.islands().empty())
        throw data_error("autocorrelation: weights contain " + std::to_string(W.islands().size()) +
                         " island(s); drop them first");
    const arma::vec z = y - arma::mean(y);
    if (arma::dot(z, z) <= 0.0) throw data_error("autocorrelation: zero variance in y");
}

inline double moran_stat(const arma::vec& y, const weights_matrix& W, double s0) {
    const arma::vec z = y - arma::mean(y);
    double num = 0.0;
    for (std::size_t i = 0; i < W.n(); ++i)
        for (const auto& nb : W.row(i)) num += nb.weight * z(i) * z(nb.index);
    return static_cast<double>(W.n()) / s0 * num / arma::dot(z, z);
}

inline double geary_stat(const arma::vec& y, const weights_matrix& W, double s0) {
    const arma::vec z = y - arma::mean(y);
    double num = 0.0;
    for (std::size_t i = 0; i < W.n(); ++i)
        for (const auto& nb : W.row(i)) {
            const double d = y(i) - y(nb.index);
            num += nb.weight * d * d;
        }
    return (static_cast<double>(W.n()) - 1.0) * num / (2.0 * s0 * arma::dot(z, z));
}

template <typename StatFn>
autocorr_result permutation_test(const std::string& name, const arma::vec& y, const weights_matrix& W,
                                 const perm_options& opts, double null_expectation,
                                 test_alternative default_alt, StatFn stat) {
    check_autocorr_inputs(y, W);
    if (opts.n_permutations < 1) throw config_error("permutation test: n_permutations must be >= 1");
    const double s0 = W.s0();
    const double observed = stat(y, W, s0);
    const test_alternative alt = opts.alternative.value_or(default_alt);

    const std::size_t n = W.n();
    arma::vec replicated(static_cast<arma::uword>(opts.n_permutations));
    parallel_for(static_cast<std::size_t>(opts.n_permutations), [&](std::size_t k) {
        rng gen(substream(opts.seed, name, k));
        std::vector<std::size_t> perm(n);
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        shuffle(perm, gen);
        arma::vec yp(n);
        for (std::size_t i = 0; i < n; ++i) yp(i) = y(perm[i]);
        replicated(k) = stat(yp, W, s0);
    });

    int extreme = 0;
    for (const double t : replicated) {
        switch (alt) {
            case test_alternative::greater: extreme += (t >= observed); break;
            case test_alternative::less: extreme += (t <= observed); break;
            case test_alternative::two_sided:
                extreme += (std::fabs(t - null_expectation) >= std::fabs(observed - null_expectation));
                break;
        }
    }
    const double pseudo_p = (extreme + 1.0) / (opts.n_permutations + 1.0);
    return {name, observed, null_expectation, pseudo_p, opts.n_permutations, alt, opts.seed};
}

} // namespace detail

/// Global Moran's I with random-labelling permutation inference.
/// I = n * sum_ij w_ij (y_i - ybar)(y_j - ybar) / (S0 * sum_i (y_i - ybar)^2).
inline autocorr_result morans_i(const arma::vec& y, const weights_matrix& W, const perm_options& opts) {
    const double expectation = -1.0 / (static_cast<double>(W.n()) - 1.0);
    return detail::permutation_test("morans_i", y, W, opts, expectation,
                                    test_alternative::greater, detail::moran_stat);
}

/// Global Geary's C: squared neighbour differences over squared mean deviations.
/// Null expectation 1; values below 1 indicate positive spatial autocorrelation, so the
/// default alternative is "less".
inline autocorr_result gearys_c(const arma::vec& y, const weights_matrix& W, const perm_options& opts) {
    return detail::permutation_test("gearys_c", y, W, opts, 1.0, test_alternative::less,
                                    detail::geary_stat);
}

namespace detail {

struct lisa_context {
    arma::vec z;      // population-standardized y
    arma::vec zlag;   // W z
    std::size_t n;
};

inline lisa_context make_lisa_context(const arma::vec& y, const weights_matrix& W) {
    check_autocorr_inputs(y, W);
    lisa_context ctx;
    ctx.n = W.n();
    const arma::vec dev = y - arma::mean(y);
    const double sd_pop = std::sqrt(arma::dot(dev, dev) / static_cast<double>(ctx.n));
    ctx.z = dev / sd_pop;
    ctx.zlag = W.lag(ctx.z);
    return ctx;
}

// Smaller-tail pseudo-p of `observed` within `draws`.
inline double tail_pseudo_p(double observed, const std::vector<double>& draws) {
    int ge = 0, le = 0;
    for (const double t : draws) {
        ge += (t >= observed);
        le += (t <= observed);
    }
    return (std::min(ge, le) + 1.0) / (static_cast<double>(draws.size()) + 1.0);
}

} // namespace detail

/// Anselin's local Moran's I with conditional permutation (unit i held fixed, the rest
/// re-drawn without replacement). Significant units are labelled by the quadrant of
/// (z_i, spatial lag of z at i); the rest are not_significant.
inline lisa_result local_morans_i(const arma::vec& y, const weights_matrix& W, double alpha,
                                  int n_perm, std::uint64_t seed) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw config_error("local_morans_i: alpha must be in (0,1)");
    if (n_perm < 1) throw config_error("local_morans_i: n_perm must be >= 1");
    const auto ctx = detail::make_lisa_context(y, W);

    lisa_result res;
    res.local_stat.set_size(ctx.n);
    res.pseudo_p.set_size(ctx.n);
    res.cluster.assign(ctx.n, lisa_cluster::not_significant);
    res.alpha = alpha;
    res.n_permutations = n_perm;
    res.seed = seed;

    parallel_for(ctx.n, [&](std::size_t i) {
        const double observed = ctx.z(i) * ctx.zlag(i);
        res.local_stat(i) = observed;

        const auto& row = W.row(i);
        std::vector<std::size_t> others;
        others.reserve(ctx.n - 1);
        for (std::size_t j = 0; j < ctx.n; ++j)
            if (j != i) others.push_back(j);

        rng gen(substream(seed, "local_morans_i", i));
        std::vector<double> draws(static_cast<std::size_t>(n_perm));
        for (auto& d : draws) {
            const auto pick = sample_without_replacement(others.size(), row.size(), gen);
            double lag = 0.0;
            for (std::size_t t = 0; t < row.size(); ++t)
                lag += row[t].weight * ctx.z(others[pick[t]]);
            d = ctx.z(i) * lag;
        }
        res.pseudo_p(i) = detail::tail_pseudo_p(observed, draws);
        if (res.pseudo_p(i) <= alpha) {
            const bool z_high = ctx.z(i) >= 0.0;
            const bool lag_high = ctx.zlag(i) >= 0.0;
            res.cluster[i] = z_high ? (lag_high ? lisa_cluster::high_high : lisa_cluster::high_low)
                                    : (lag_high ? lisa_cluster::low_high : lisa_cluster::low_low);
        }
    });
    return res;
}

/// Local Geary c_i = sum_j w_ij (z_i - z_j)^2 with conditional permutation. Significant
/// low values indicate positive association (split into high_high / low_low /
/// other_positive by quadrant); significant high values are labelled negative.
inline lisa_result local_geary(const arma::vec& y, const weights_matrix& W, double alpha,
                               int n_perm, std::uint64_t seed) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw config_error("local_geary: alpha must be in (0,1)");
    if (n_perm < 1) throw config_error("local_geary: n_perm must be >= 1");
    const auto ctx = detail::make_lisa_context(y, W);

    lisa_result res;
    res.local_stat.set_size(ctx.n);
    res.pseudo_p.set_size(ctx.n);
    res.cluster.assign(ctx.n, lisa_cluster::not_significant);
    res.alpha = alpha;
    res.n_permutations = n_perm;
    res.seed = seed;

    parallel_for(ctx.n, [&](std::size_t i) {
        const auto& row = W.row(i);
        double observed = 0.0;
        for (const auto& nb : row) {
            const double d = ctx.z(i) - ctx.z(nb.index);
            observed += nb.weight * d * d;
        }
        res.local_stat(i) = observed;

        std::vector<std::size_t> others;
        others.reserve(ctx.n - 1);
        for (std::size_t j = 0; j < ctx.n; ++j)
            if (j != i) others.push_back(j);

        rng gen(substream(seed, "local_geary", i));
        std::vector<double> draws(static_cast<std::size_t>(n_perm));
        double perm_mean = 0.0;
        for (auto& d : draws) {
            const auto pick = sample_without_replacement(others.size(), row.size(), gen);
            double c = 0.0;
            for (std::size_t t = 0; t < row.size(); ++t) {
                const double diff = ctx.z(i) - ctx.z(others[pick[t]]);
                c += row[t].weight * diff * diff;
            }
            d = c;
            perm_mean += c;
        }
        perm_mean /= static_cast<double>(n_perm);
        res.pseudo_p(i) = detail::tail_pseudo_p(observed, draws);
        if (res.pseudo_p(i) <= alpha) {
            if (observed < perm_mean) {
                const bool z_high = ctx.z(i) >= 0.0;
                const bool lag_high = ctx.zlag(i) >= 0.0;
                if (z_high && lag_high) res.cluster[i] = lisa_cluster::high_high;
                else if (!z_high && !lag_high) res.cluster[i] = lisa_cluster::low_low;
                else res.cluster[i] = lisa_cluster::other_positive;
            } else {
                res.cluster[i] = lisa_cluster::negative;
            }
        }
    });
    return res;
}

/// Variance inflation factors: VIF_j = 1 / (1 - R2_j) from regressing predictor j on all
/// the others (with intercept). Exact collinearity reports +infinity rather than failing.
inline std::vector<double> vif(const spatial_frame& frame, const std::vector<std::string>& predictors) {
    if (predictors.size() < 2) throw config_error("vif: need at least 2 predictors");
    const std::size_t n = frame.n();
    const std::size_t p = predictors.size();
    arma::mat X(n, p);
    for (std::size_t j = 0; j < p; ++j) X.col(j) = frame.column(predictors[j]);

    std::vector<double> out(p);
    for (std::size_t j = 0; j < p; ++j) {
        arma::mat A(n, p); // intercept + the other predictors
        A.col(0).ones();
        std::size_t c = 1;
        for (std::size_t l = 0; l < p; ++l)
            if (l != j) A.col(c++) = X.col(l);
        const arma::vec target = X.col(j);
        arma::vec beta;
        const bool ok = arma::solve(beta, A, target);
        const arma::vec centered = target - arma::mean(target);
        const double tss = arma::dot(centered, centered);
        if (tss <= 0.0) {
            out[j] = std::numeric_limits<double>::infinity(); // constant column: collinear with intercept
            continue;
        }
        if (!ok) {
            out[j] = std::numeric_limits<double>::infinity();
            continue;
        }
        const arma::vec resid = target - A * beta;
        const double r2 = 1.0 - arma::dot(resid, resid) / tss;
        const double denom = 1.0 - r2;
        out[j] = denom < 1e-12 ? std::numeric_limits<double>::infinity() : 1.0 / denom;
    }
    return out;
}

/// BKW condition index: ratio of the extreme singular values of the design matrix after
/// scaling each column to unit Euclidean length. Rank deficiency reports +infinity.
inline double condition_index(const arma::mat& X) {
    if (X.n_cols < 1 || X.n_rows < 1) throw data_error("condition_index: empty design");
    arma::mat S = X;
    for (arma::uword j = 0; j < S.n_cols; ++j) {
        const double norm = arma::norm(S.col(j), 2);
        if (norm <= 0.0) throw data_error("condition_index: zero column " + std::to_string(j));
        S.col(j) /= norm;
    }
    arma::vec sv;
    if (!arma::svd(sv, S)) throw numeric_error("condition_index: SVD failed");
    const double smax = sv.max();
    const double smin = sv.min();
    if (smin <= smax * 1e-12) return std::numeric_limits<double>::infinity();
    return smax / smin;
}

} // namespace spatreg
