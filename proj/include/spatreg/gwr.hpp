#pragma once

#include <armadillo>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "spatreg/diagnostics.hpp"
#include "spatreg/error.hpp"
#include "spatreg/frame.hpp"
#include "spatreg/ols.hpp"
#include "spatreg/optimize.hpp"
#include "spatreg/parallel.hpp"
#include "spatreg/stats.hpp"
#include "spatreg/weights.hpp"

namespace spatreg {

enum class kernel_shape { gaussian, bisquare };

inline std::string to_string(kernel_shape s) { return s == kernel_shape::gaussian ? "gaussian" : "bisquare"; }

/// Kernel extent: a fixed distance in meters, or an adaptive k-nearest-neighbour count.
struct bandwidth_spec {
    enum class kind { fixed, adaptive };
    kind mode = kind::fixed;
    double distance = 0.0; // fixed mode
    std::size_t k = 0;     // adaptive mode

    static bandwidth_spec fixed(double d) {
        if (!(d > 0.0)) throw config_error("bandwidth: fixed distance must be positive");
        bandwidth_spec b;
        b.mode = kind::fixed;
        b.distance = d;
        return b;
    }
    static bandwidth_spec adaptive(std::size_t k) {
        if (k < 2) throw config_error("bandwidth: adaptive k must be >= 2");
        bandwidth_spec b;
        b.mode = kind::adaptive;
        b.k = k;
        return b;
    }
};

inline std::string to_string(const bandwidth_spec& b) {
    if (b.mode == bandwidth_spec::kind::fixed) return "fixed(" + format_number(b.distance) + ")";
    return "adaptive(" + std::to_string(b.k) + ")";
}

struct kernel_spec {
    kernel_shape shape = kernel_shape::gaussian;
    bandwidth_spec bandwidth;
};

/// Gaussian: exp(-1/2 (d/b)^2). Bisquare: (1 - (d/b)^2)^2 for d < b, else 0.
/// The weight at d = 0 is exactly 1 for both shapes.
inline double kernel_weight(double d, kernel_shape shape, double b) {
    if (!(d >= 0.0)) throw config_error("kernel_weight: distance must be nonnegative");
    if (!(b > 0.0)) throw config_error("kernel_weight: bandwidth must be positive");
    const double u = d / b;
    if (shape == kernel_shape::gaussian) return std::exp(-0.5 * u * u);
    if (u >= 1.0) return 0.0;
    const double t = 1.0 - u * u;
    return t * t;
}

enum class bandwidth_criterion { cv, aicc };

inline std::string to_string(bandwidth_criterion c) { return c == bandwidth_criterion::cv ? "cv" : "aicc"; }

/// One fitted coefficient surface per term plus the standard GWR diagnostics.
struct gwr_fit {
    std::vector<std::string> term_names;
    arma::mat local_coefficients; // n x p
    arma::mat local_std_errors;   // n x p
    arma::vec hat_diagonal;
    double effective_params = 0.0; // trace of the hat matrix
    arma::vec residuals;
    double rss = 0.0;
    double aicc = 0.0;
    double cv_score = 0.0;
    double r2 = 0.0;
    double adj_r2 = 0.0;
    arma::vec local_r2;
    arma::vec local_condition_numbers;
    arma::vec local_ridge; // zero everywhere for basic fits
    kernel_spec kernel;
    std::size_t n = 0;
    std::size_t p = 0;
    std::uint64_t response_sig = 0;
    arma::mat hat_matrix; // populated only on request

    // Multi-scale results only.
    std::vector<bandwidth_spec> term_bandwidths;
    std::vector<double> term_bandwidth_share; // share of the maximum bandwidth
    std::vector<bool> term_bandwidth_global;  // share >= 0.8
    std::vector<double> backfit_rss;          // RSS after each completed sweep
    bool converged = true;
    std::size_t sweeps = 0;
};

struct gwr_options {
    bool keep_hat_matrix = false;
};

namespace detail {

/// Pairwise geometry shared by every GWR computation on a frame.
struct gwr_geometry {
    arma::mat dist;                       // n x n Euclidean distances
    std::vector<arma::vec> sorted_other;  // per unit, ascending distances to the others
    double max_dist = 0.0;
    double min_nonzero_dist = 0.0;
    std::size_t n = 0;
};

inline gwr_geometry make_geometry(const spatial_frame& frame) {
    gwr_geometry g;
    g.n = frame.n();
    const arma::mat& xy = frame.locations();
    g.dist.set_size(g.n, g.n);
    double min_nz = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < g.n; ++i) {
        g.dist(i, i) = 0.0;
        for (std::size_t j = i + 1; j < g.n; ++j) {
            const double d = std::sqrt(sq_dist(xy, i, j));
            g.dist(i, j) = d;
            g.dist(j, i) = d;
            g.max_dist = std::max(g.max_dist, d);
            if (d > 0.0) min_nz = std::min(min_nz, d);
        }
    }
    g.min_nonzero_dist = std::isfinite(min_nz) ? min_nz : 0.0;
    g.sorted_other.resize(g.n);
    for (std::size_t i = 0; i < g.n; ++i) {
        arma::vec d(g.n - 1);
        std::size_t c = 0;
        for (std::size_t j = 0; j < g.n; ++j)
            if (j != i) d(c++) = g.dist(i, j);
        g.sorted_other[i] = arma::sort(d);
    }
    return g;
}

/// Per-unit bandwidths in meters: the fixed distance everywhere, or the distance to the
/// k-th nearest other unit (k clamped to n-1 so the top of the adaptive range stays usable).
inline arma::vec resolve_bandwidths(const gwr_geometry& g, const bandwidth_spec& bw) {
    arma::vec b(g.n);
    if (bw.mode == bandwidth_spec::kind::fixed) {
        b.fill(bw.distance);
        return b;
    }
    const std::size_t k = std::min(bw.k, g.n - 1);
    for (std::size_t i = 0; i < g.n; ++i) {
        b(i) = g.sorted_other[i](k - 1);
        if (!(b(i) > 0.0))
            throw data_error("gwr: adaptive bandwidth resolves to zero at unit " +
                             std::to_string(i) + " (duplicate locations)");
    }
    return b;
}

inline arma::vec local_kernel_weights(const gwr_geometry& g, std::size_t i, kernel_shape shape,
                                      double bandwidth, bool zero_self) {
    arma::vec w(g.n);
    for (std::size_t j = 0; j < g.n; ++j) w(j) = kernel_weight(g.dist(i, j), shape, bandwidth);
    if (zero_self) w(i) = 0.0;
    return w;
}

struct local_options {
    double cn_threshold = std::numeric_limits<double>::infinity();
    bool need_se = false;
    bool need_cn = false;
    bool need_hat_row = false;
    bool need_hat_self = false;
};

struct local_solution {
    arma::vec beta;
    arma::vec se_raw; // pre-sigma scaling
    arma::rowvec hat_row;
    double hat_self = std::numeric_limits<double>::quiet_NaN();
    double cn = std::numeric_limits<double>::quiet_NaN();
    double ridge = 0.0;
    bool ok = true;
};

/// Regularized condition number sqrt(eig_max / eig_min) of M + lambda * P where P is the
/// identity with the intercept position zeroed. At lambda = 0 this equals the condition
/// index of the column-scaled local design.
inline double regularized_condition(const arma::mat& M, double lambda, bool has_intercept) {
    arma::mat A = M;
    for (arma::uword j = has_intercept ? 1 : 0; j < A.n_cols; ++j) A(j, j) += lambda;
    arma::vec ev;
    if (!arma::eig_sym(ev, A)) return std::numeric_limits<double>::infinity();
    const double lo = ev.min(), hi = ev.max();
    if (!(hi > 0.0) || lo <= hi * 1e-24) return std::numeric_limits<double>::infinity();
    return std::sqrt(hi / lo);
}

/// One kernel-weighted local regression. Locations whose scaled-design condition number
/// stays at or below cn_threshold take the plain weighted-least-squares path; above it,
/// the smallest ridge bringing the regularized condition number back to the threshold is
/// found by bisection and applied to every non-intercept term.
inline local_solution solve_local(const arma::mat& X, const arma::vec& y, const arma::vec& w,
                                  std::size_t self, bool has_intercept, const local_options& opt) {
    const arma::uword p = X.n_cols;
    local_solution sol;

    arma::mat Xs;     // sqrt(w)-weighted design with unit-length columns
    arma::vec norms;  // the column lengths divided out
    arma::mat M;      // Xs' Xs
    bool scaled_ready = false;
    const bool want_cn = opt.need_cn || std::isfinite(opt.cn_threshold);
    if (want_cn) {
        const arma::vec ws = arma::sqrt(w);
        Xs = X.each_col() % ws;
        norms.set_size(p);
        bool zero_col = false;
        for (arma::uword j = 0; j < p; ++j) {
            norms(j) = arma::norm(Xs.col(j), 2);
            if (norms(j) <= 0.0) zero_col = true;
        }
        if (zero_col) {
            sol.cn = std::numeric_limits<double>::infinity();
        } else {
            Xs.each_row() /= norms.t();
            M = Xs.t() * Xs;
            arma::vec sv;
            if (arma::svd(sv, Xs) && sv.min() > sv.max() * 1e-12)
                sol.cn = sv.max() / sv.min();
            else
                sol.cn = std::numeric_limits<double>::infinity();
            scaled_ready = true;
        }
    }

    if (!(sol.cn > opt.cn_threshold)) {
        // Plain weighted least squares.
        const arma::mat XtW = (X.each_col() % w).t();
        const arma::mat A = XtW * X;
        if (!arma::solve(sol.beta, A, XtW * y, arma::solve_opts::likely_sympd + arma::solve_opts::no_approx)) {
            sol.ok = false;
            return sol;
        }
        if (!sol.beta.is_finite()) {
            sol.ok = false;
            return sol;
        }
        if (opt.need_se || opt.need_hat_row) {
            arma::mat C;
            if (!arma::solve(C, A, XtW, arma::solve_opts::likely_sympd + arma::solve_opts::no_approx)) {
                sol.ok = false;
                return sol;
            }
            if (opt.need_se) sol.se_raw = arma::sqrt(arma::sum(C % C, 1));
            if (opt.need_hat_row) {
                sol.hat_row = X.row(self) * C;
                sol.hat_self = sol.hat_row(self);
            }
        }
        if (opt.need_hat_self && !opt.need_hat_row) {
            arma::vec v;
            if (!arma::solve(v, A, X.row(self).t(), arma::solve_opts::likely_sympd + arma::solve_opts::no_approx)) {
                sol.ok = false;
                return sol;
            }
            sol.hat_self = arma::dot(X.row(self), v) * w(self);
        }
        return sol;
    }

    // Locally compensated ridge.
    if (!scaled_ready) {
        sol.ok = false;
        return sol;
    }
    const double tau = opt.cn_threshold;
    double lam_lo = 0.0;
    double lam_hi = 1e-10;
    bool reached = false;
    for (int step = 0; step < 90; ++step) {
        if (regularized_condition(M, lam_hi, has_intercept) <= tau) {
            reached = true;
            break;
        }
        lam_lo = lam_hi;
        lam_hi *= 2.0;
    }
    if (!reached) {
        sol.ok = false; // no ridge attains the threshold (collinearity involves the intercept)
        return sol;
    }
    for (int it = 0; it < 200; ++it) {
        const double kappa_hi = regularized_condition(M, lam_hi, has_intercept);
        if (kappa_hi >= tau * (1.0 - 1e-3) || (lam_hi - lam_lo) <= 1e-12 * std::max(1.0, lam_hi)) break;
        const double mid = 0.5 * (lam_lo + lam_hi);
        if (regularized_condition(M, mid, has_intercept) <= tau)
            lam_hi = mid;
        else
            lam_lo = mid;
    }
    sol.ridge = lam_hi;

    arma::mat A = M;
    for (arma::uword j = has_intercept ? 1 : 0; j < p; ++j) A(j, j) += sol.ridge;
    const arma::vec ws = arma::sqrt(w);
    const arma::vec ys = y % ws;
    arma::vec beta_s;
    if (!arma::solve(beta_s, A, Xs.t() * ys, arma::solve_opts::likely_sympd + arma::solve_opts::no_approx)) {
        sol.ok = false;
        return sol;
    }
    sol.beta = beta_s / norms;
    if (!sol.beta.is_finite()) {
        sol.ok = false;
        return sol;
    }
    if (opt.need_se || opt.need_hat_row || opt.need_hat_self) {
        arma::mat Cs; // (M + lambda P)^-1 Xs' diag(ws), mapping y to beta_s
        if (!arma::solve(Cs, A, (Xs.each_col() % ws).t(), arma::solve_opts::likely_sympd + arma::solve_opts::no_approx)) {
            sol.ok = false;
            return sol;
        }
        const arma::mat C = Cs.each_col() / norms;
        if (opt.need_se) sol.se_raw = arma::sqrt(arma::sum(C % C, 1));
        if (opt.need_hat_row || opt.need_hat_self) {
            sol.hat_row = X.row(self) * C;
            sol.hat_self = sol.hat_row(self);
        }
    }
    return sol;
}

inline void validate_gwr_inputs(const gwr_geometry& g, const arma::mat& X, const kernel_spec& kernel) {
    if (kernel.bandwidth.mode == bandwidth_spec::kind::adaptive) {
        if (kernel.bandwidth.k > g.n)
            throw config_error("gwr: adaptive k exceeds the number of units");
        if (kernel.bandwidth.k < X.n_cols + 1)
            throw config_error("gwr: adaptive k must be at least p + 1 = " +
                               std::to_string(X.n_cols + 1));
    }
}

/// The standard corrected AIC for GWR: 2n ln(sigma_ml) + n ln(2pi) + n (n + trS)/(n - 2 - trS).
inline double gwr_aicc(double rss, double n, double tr_s) {
    if (n - 2.0 - tr_s <= 0.0) return std::numeric_limits<double>::infinity();
    const double sigma2 = rss / n;
    return n * std::log(sigma2) + n * std::log(2.0 * arma::datum::pi) + n * (n + tr_s) / (n - 2.0 - tr_s);
}

/// CV and AICc evaluation used by the bandwidth search; any unsolvable location makes the
/// candidate infinite rather than failing the search.
inline double gwr_criterion_value(const gwr_geometry& g, const arma::mat& X, const arma::vec& y,
                                  const kernel_spec& kernel, bandwidth_criterion crit,
                                  bool has_intercept) {
    const std::size_t n = g.n;
    arma::vec bw;
    try {
        bw = resolve_bandwidths(g, kernel.bandwidth);
    } catch (const error&) {
        return std::numeric_limits<double>::infinity();
    }
    arma::vec part(n);
    std::atomic<bool> failed{false};
    if (crit == bandwidth_criterion::cv) {
        parallel_for(n, [&](std::size_t i) {
            if (failed.load(std::memory_order_relaxed)) return;
            const arma::vec w = local_kernel_weights(g, i, kernel.shape, bw(i), true);
            local_options o;
            const auto sol = solve_local(X, y, w, i, has_intercept, o);
            if (!sol.ok) {
                failed.store(true, std::memory_order_relaxed);
                return;
            }
            const double e = y(i) - arma::dot(X.row(i), sol.beta);
            part(i) = e * e;
        });
        if (failed.load()) return std::numeric_limits<double>::infinity();
        return arma::accu(part);
    }
    arma::vec hat(n);
    parallel_for(n, [&](std::size_t i) {
        if (failed.load(std::memory_order_relaxed)) return;
        const arma::vec w = local_kernel_weights(g, i, kernel.shape, bw(i), false);
        local_options o;
        o.need_hat_self = true;
        const auto sol = solve_local(X, y, w, i, has_intercept, o);
        if (!sol.ok || !std::isfinite(sol.hat_self)) {
            failed.store(true, std::memory_order_relaxed);
            return;
        }
        const double e = y(i) - arma::dot(X.row(i), sol.beta);
        part(i) = e * e;
        hat(i) = sol.hat_self;
    });
    if (failed.load()) return std::numeric_limits<double>::infinity();
    return gwr_aicc(arma::accu(part), static_cast<double>(n), arma::accu(hat));
}

} // namespace detail

struct bandwidth_search_result {
    bandwidth_spec bandwidth;
    double criterion_value = 0.0;
    bandwidth_criterion criterion = bandwidth_criterion::aicc;
    kernel_shape shape = kernel_shape::gaussian;
    std::vector<std::pair<double, double>> trace; // (candidate, criterion value)
    double share_of_max = 0.0; // fixed: distance / max distance; adaptive: k / n
    bool global_flag = false;  // share >= 0.8: the relationship is effectively global
};

namespace detail {

inline bandwidth_search_result select_bandwidth_on(const gwr_geometry& g, const arma::mat& X,
                                                   const arma::vec& y, kernel_shape shape,
                                                   bandwidth_spec::kind mode,
                                                   bandwidth_criterion crit, bool has_intercept) {
    const std::size_t n = g.n;
    const std::size_t p = X.n_cols;
    if (n < p + 2) throw data_error("select_bandwidth: need n >= p + 2");

    bandwidth_search_result res;
    res.criterion = crit;
    res.shape = shape;

    if (mode == bandwidth_spec::kind::fixed) {
        if (!(g.max_dist > 0.0)) throw data_error("select_bandwidth: all locations coincide");
        const double lo = std::max(g.min_nonzero_dist, 1e-12 * g.max_dist);
        const double hi = 1.5 * g.max_dist;
        const auto eval = [&](double b) {
            const double v = gwr_criterion_value(g, X, y, {shape, bandwidth_spec::fixed(b)}, crit,
                                                 has_intercept);
            res.trace.emplace_back(b, v);
            return v;
        };
        // Coarse scan (ties toward the larger bandwidth), then golden-section refinement.
        constexpr int scan_points = 17;
        double best_x = lo, best_f = std::numeric_limits<double>::infinity();
        const double step = (hi - lo) / (scan_points - 1);
        for (int s = 0; s < scan_points; ++s) {
            const double x = (s == scan_points - 1) ? hi : lo + step * s;
            const double fx = eval(x);
            if (fx < best_f || (fx == best_f && x > best_x)) {
                best_f = fx;
                best_x = x;
            }
        }
        if (!std::isfinite(best_f))
            throw numeric_error("select_bandwidth: criterion non-finite across the whole range");
        const double blo = std::max(lo, best_x - step);
        const double bhi = std::min(hi, best_x + step);
        const auto gold = golden_section_minimize(eval, blo, bhi, 1e-6 * (hi - lo));
        double sel_x = gold.x, sel_f = gold.fx;
        if (best_f < sel_f || (best_f == sel_f && best_x > sel_x)) {
            sel_x = best_x;
            sel_f = best_f;
        }
        res.bandwidth = bandwidth_spec::fixed(sel_x);
        res.criterion_value = sel_f;
        res.share_of_max = sel_x / g.max_dist;
        res.global_flag = res.share_of_max >= 0.8;
        return res;
    }

    // Adaptive: rounded golden-section over k with exhaustive refinement around the best.
    const std::size_t k_lo = std::max<std::size_t>(p + 2, 2);
    const std::size_t k_hi = n;
    if (k_lo > k_hi) throw data_error("select_bandwidth: adaptive range is empty");
    std::map<std::size_t, double> memo;
    const auto eval_k = [&](std::size_t k) {
        const auto it = memo.find(k);
        if (it != memo.end()) return it->second;
        const double v = gwr_criterion_value(g, X, y, {shape, bandwidth_spec::adaptive(k)}, crit,
                                             has_intercept);
        memo.emplace(k, v);
        res.trace.emplace_back(static_cast<double>(k), v);
        return v;
    };
    const auto eval_rounded = [&](double x) {
        const auto k = static_cast<std::size_t>(std::llround(
            std::clamp(x, static_cast<double>(k_lo), static_cast<double>(k_hi))));
        return eval_k(k);
    };
    double blo = static_cast<double>(k_lo), bhi = static_cast<double>(k_hi);
    if (k_hi - k_lo > 8) {
        const int prescan = static_cast<int>(std::min<std::size_t>(33, (k_hi - k_lo) / 2 + 2));
        bracket_minimum(eval_rounded, blo, bhi, prescan, blo, bhi);
        golden_section_minimize(eval_rounded, blo, bhi, 1.0);
    } else {
        for (std::size_t k = k_lo; k <= k_hi; ++k) eval_k(k);
    }
    // Best integer seen so far; ties toward the larger (smoother) k.
    std::size_t best_k = k_lo;
    double best_f = std::numeric_limits<double>::infinity();
    for (const auto& [k, v] : memo)
        if (v < best_f || (v == best_f && k > best_k)) {
            best_f = v;
            best_k = k;
        }
    // Local exhaustive refinement of +-2 around the incumbent.
    for (int pass = 0; pass < 8; ++pass) {
        bool moved = false;
        const std::size_t from = best_k > k_lo + 2 ? best_k - 2 : k_lo;
        const std::size_t to = best_k + 2 < k_hi ? best_k + 2 : k_hi;
        for (std::size_t k = from; k <= to; ++k) {
            const double v = eval_k(k);
            if (v < best_f || (v == best_f && k > best_k)) {
                best_f = v;
                best_k = k;
                moved = true;
            }
        }
        if (!moved) break;
    }
    if (!std::isfinite(best_f))
        throw numeric_error("select_bandwidth: criterion non-finite across the whole range");
    res.bandwidth = bandwidth_spec::adaptive(best_k);
    res.criterion_value = best_f;
    res.share_of_max = static_cast<double>(best_k) / static_cast<double>(n);
    res.global_flag = res.share_of_max >= 0.8;
    return res;
}

inline gwr_fit fit_gwr_impl(const spatial_frame& frame, const model_spec& spec,
                            const kernel_spec& kernel, double cn_threshold,
                            const gwr_options& options) {
    spec.validate_against(frame);
    const gwr_geometry g = make_geometry(frame);
    const arma::mat X = spec.design(frame);
    const arma::vec y = frame.column(spec.response);
    validate_gwr_inputs(g, X, kernel);
    const std::size_t n = g.n;
    const std::size_t p = X.n_cols;
    const bool intercept = spec.include_intercept;

    gwr_fit fit;
    fit.term_names = spec.term_names();
    fit.kernel = kernel;
    fit.n = n;
    fit.p = p;
    fit.response_sig = response_signature(y);
    fit.local_coefficients.set_size(n, p);
    fit.local_std_errors.set_size(n, p);
    fit.hat_diagonal.set_size(n);
    fit.residuals.set_size(n);
    fit.local_r2.set_size(n);
    fit.local_condition_numbers.set_size(n);
    fit.local_ridge.zeros(n);
    if (options.keep_hat_matrix) fit.hat_matrix.set_size(n, n);
    arma::vec cv_part(n);
    const arma::vec bw = resolve_bandwidths(g, kernel.bandwidth);

    std::vector<std::string> failures(n);
    parallel_for(n, [&](std::size_t i) {
        const arma::vec w = local_kernel_weights(g, i, kernel.shape, bw(i), false);
        detail::local_options o;
        o.cn_threshold = cn_threshold;
        o.need_se = true;
        o.need_cn = true;
        o.need_hat_self = true;
        o.need_hat_row = options.keep_hat_matrix;
        const auto sol = solve_local(X, y, w, i, intercept, o);
        if (!sol.ok) {
            failures[i] = "gwr: local design is rank deficient at unit '" + frame.ids()[i] +
                          "' (local condition number " + format_number(sol.cn) +
                          "); consider fit_lcr_gwr";
            return;
        }
        fit.local_coefficients.row(i) = sol.beta.t();
        fit.local_std_errors.row(i) = sol.se_raw.t(); // sigma-scaled below
        fit.hat_diagonal(i) = sol.hat_self;
        fit.local_condition_numbers(i) = sol.cn;
        fit.local_ridge(i) = sol.ridge;
        if (options.keep_hat_matrix) fit.hat_matrix.row(i) = sol.hat_row;
        const double fitted = arma::dot(X.row(i), sol.beta);
        fit.residuals(i) = y(i) - fitted;

        // Kernel-weighted local goodness of fit.
        const double wsum = arma::accu(w);
        const double ybar_w = arma::dot(w, y) / wsum;
        double rss_w = 0.0, tss_w = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double e_fit = y(j) - arma::dot(X.row(j), sol.beta);
            rss_w += w(j) * e_fit * e_fit;
            const double dev = y(j) - ybar_w;
            tss_w += w(j) * dev * dev;
        }
        fit.local_r2(i) = tss_w > 0.0 ? 1.0 - rss_w / tss_w : 0.0;

        // Leave-one-out score with the self-weight zeroed.
        arma::vec w_loo = w;
        w_loo(i) = 0.0;
        detail::local_options o_loo;
        o_loo.cn_threshold = cn_threshold;
        const auto sol_loo = solve_local(X, y, w_loo, i, intercept, o_loo);
        if (sol_loo.ok) {
            const double e = y(i) - arma::dot(X.row(i), sol_loo.beta);
            cv_part(i) = e * e;
        } else {
            cv_part(i) = std::numeric_limits<double>::infinity();
        }
    });
    for (const auto& f : failures)
        if (!f.empty()) throw numeric_error(f);

    fit.rss = arma::dot(fit.residuals, fit.residuals);
    fit.effective_params = arma::accu(fit.hat_diagonal);
    fit.cv_score = arma::accu(cv_part);
    const double dn = static_cast<double>(n);
    fit.aicc = detail::gwr_aicc(fit.rss, dn, fit.effective_params);
    const double sigma2 = fit.rss / std::max(dn - fit.effective_params, 1e-12);
    fit.local_std_errors *= std::sqrt(sigma2);
    const arma::vec dev = y - arma::mean(y);
    const double tss = arma::dot(dev, dev);
    fit.r2 = tss > 0.0 ? 1.0 - fit.rss / tss : 0.0;
    const double resid_df = dn - fit.effective_params;
    fit.adj_r2 = resid_df > 1.0 ? 1.0 - (1.0 - fit.r2) * (dn - 1.0) / (resid_df - 1.0)
                                : std::numeric_limits<double>::quiet_NaN();
    return fit;
}

} // namespace detail

/// Basic GWR: one kernel-weighted regression per location. Adaptive bandwidths resolve to
/// the distance to the k-th nearest other unit; the unit itself always joins its own
/// local fit with weight 1.
inline gwr_fit fit_gwr(const spatial_frame& frame, const model_spec& spec, const kernel_spec& kernel,
                       const gwr_options& options = {}) {
    return detail::fit_gwr_impl(frame, spec, kernel, std::numeric_limits<double>::infinity(), options);
}

/// Locally compensated ridge GWR: locations whose local condition number exceeds
/// cn_threshold get the smallest per-location ridge (intercept unpenalized) that brings
/// the regularized condition number back to the threshold. With an infinite threshold the
/// result is identical to fit_gwr.
inline gwr_fit fit_lcr_gwr(const spatial_frame& frame, const model_spec& spec,
                           const kernel_spec& kernel, double cn_threshold,
                           const gwr_options& options = {}) {
    if (!(cn_threshold > 1.0)) throw config_error("fit_lcr_gwr: cn_threshold must exceed 1");
    return detail::fit_gwr_impl(frame, spec, kernel, cn_threshold, options);
}

/// Condition index of the kernel-weighted, column-equilibrated local design at every
/// location. Rank-deficient locations report +infinity.
inline arma::vec local_condition_numbers(const spatial_frame& frame, const model_spec& spec,
                                         const kernel_spec& kernel) {
    spec.validate_against(frame);
    const detail::gwr_geometry g = detail::make_geometry(frame);
    const arma::mat X = spec.design(frame);
    detail::validate_gwr_inputs(g, X, kernel);
    const arma::vec bw = detail::resolve_bandwidths(g, kernel.bandwidth);
    const arma::vec& y = frame.column(spec.response);
    arma::vec out(g.n);
    parallel_for(g.n, [&](std::size_t i) {
        const arma::vec w = detail::local_kernel_weights(g, i, kernel.shape, bw(i), false);
        detail::local_options o;
        o.need_cn = true;
        const auto sol = detail::solve_local(X, y, w, i, spec.include_intercept, o);
        out(i) = sol.cn;
    });
    return out;
}

/// Bandwidth selection by golden-section search: continuous over distance for fixed mode,
/// rounded with +-2 exhaustive refinement over k for adaptive mode. Ties break toward the
/// larger (smoother) bandwidth; the search trace is retained for reporting.
inline bandwidth_search_result select_bandwidth(const spatial_frame& frame, const model_spec& spec,
                                                kernel_shape shape, bandwidth_spec::kind mode,
                                                bandwidth_criterion criterion) {
    spec.validate_against(frame);
    const detail::gwr_geometry g = detail::make_geometry(frame);
    const arma::mat X = spec.design(frame);
    const arma::vec y = frame.column(spec.response);
    return detail::select_bandwidth_on(g, X, y, shape, mode, criterion, spec.include_intercept);
}

struct msgwr_options {
    bandwidth_spec::kind mode = bandwidth_spec::kind::fixed;
    bandwidth_criterion criterion = bandwidth_criterion::aicc;
    std::size_t max_sweeps = 50;
    double tolerance = 1e-5; // max relative surface change at convergence
    bool track_hat_matrix = true;
};

/// Multi-scale GWR by backfitting: every term keeps its own bandwidth, re-optimized each
/// sweep on the term's partial residual. Sweeps stop at the surface-change tolerance, the
/// sweep budget, or as soon as a sweep fails to reduce RSS (the previous surfaces are then
/// kept, so the reported RSS path is non-increasing).
inline gwr_fit fit_msgwr(const spatial_frame& frame, const model_spec& spec, kernel_shape shape,
                         const msgwr_options& options = {}) {
    spec.validate_against(frame);
    const detail::gwr_geometry g = detail::make_geometry(frame);
    const arma::mat X = spec.design(frame);
    const arma::vec y = frame.column(spec.response);
    const std::size_t n = g.n;
    const std::size_t p = X.n_cols;
    const bool intercept = spec.include_intercept;

    // Initialization: ordinary GWR with one shared bandwidth.
    const auto init_search = detail::select_bandwidth_on(g, X, y, shape, options.mode,
                                                         options.criterion, intercept);
    const kernel_spec init_kernel{shape, init_search.bandwidth};
    gwr_options base_opts;
    const bool track_hat = options.track_hat_matrix && n <= 2000;
    base_opts.keep_hat_matrix = track_hat;
    gwr_fit base = detail::fit_gwr_impl(frame, spec, init_kernel,
                                        std::numeric_limits<double>::infinity(), base_opts);

    arma::mat B = base.local_coefficients; // n x p surfaces
    arma::mat F(n, p);
    for (std::size_t j = 0; j < p; ++j) F.col(j) = B.col(j) % X.col(j);
    arma::vec resid = y - arma::sum(F, 1);
    double rss_prev = arma::dot(resid, resid);

    // Per-term smoother tracking for the effective-parameter count.
    std::vector<arma::mat> S_term;
    arma::mat S_total;
    if (track_hat) {
        S_total = base.hat_matrix;
        S_term.assign(p, arma::mat(n, n));
        const arma::vec bw0 = detail::resolve_bandwidths(g, init_kernel.bandwidth);
        std::atomic<bool> init_failed{false};
        parallel_for(n, [&](std::size_t i) {
            const arma::vec w = detail::local_kernel_weights(g, i, init_kernel.shape, bw0(i), false);
            const arma::mat XtW = (X.each_col() % w).t();
            arma::mat C;
            if (!arma::solve(C, XtW * X, XtW,
                             arma::solve_opts::likely_sympd + arma::solve_opts::no_approx)) {
                init_failed.store(true, std::memory_order_relaxed);
                return;
            }
            for (std::size_t j = 0; j < p; ++j) S_term[j].row(i) = X(i, j) * C.row(j);
        });
        if (init_failed.load()) throw numeric_error("msgwr: initial local solve failed");
    }

    std::vector<bandwidth_spec> term_bw(p, init_search.bandwidth);
    arma::mat se_raw(n, p, arma::fill::zeros);
    std::vector<double> rss_path;
    bool converged = false;
    std::size_t sweeps_done = 0;

    for (std::size_t sweep = 1; sweep <= options.max_sweeps && !converged; ++sweep) {
        const arma::mat B_before = B;
        const arma::mat F_before = F;
        const arma::vec resid_before = resid;
        const auto S_term_before = S_term;
        const arma::mat S_total_before = S_total;
        const auto term_bw_before = term_bw;
        const arma::mat se_raw_before = se_raw;

        for (std::size_t j = 0; j < p; ++j) {
            const arma::vec ej = resid + F.col(j);
            const arma::mat xj = X.col(j);
            const auto search = detail::select_bandwidth_on(g, xj, ej, shape, options.mode,
                                                            options.criterion, false);
            term_bw[j] = search.bandwidth;
            const arma::vec bwj = detail::resolve_bandwidths(g, search.bandwidth);

            arma::vec beta_j(n), se_j(n);
            arma::mat Si;
            if (track_hat) Si.set_size(n, n);
            std::atomic<bool> term_failed{false};
            parallel_for(n, [&](std::size_t i) {
                const arma::vec w = detail::local_kernel_weights(g, i, shape, bwj(i), false);
                const arma::vec wx = w % X.col(j);
                const double denom = arma::dot(wx, X.col(j));
                if (!(denom > 0.0)) {
                    term_failed.store(true, std::memory_order_relaxed);
                    return;
                }
                beta_j(i) = arma::dot(wx, ej) / denom;
                se_j(i) = arma::norm(wx, 2) / denom;
                if (track_hat) Si.row(i) = (X(i, j) / denom) * wx.t();
            });
            if (term_failed.load())
                throw numeric_error("msgwr: degenerate one-term fit for term '" +
                                    spec.term_names()[j] + "'");
            B.col(j) = beta_j;
            se_raw.col(j) = se_j;
            const arma::vec fj_new = beta_j % X.col(j);
            resid = ej - fj_new;
            F.col(j) = fj_new;
            if (track_hat) {
                const arma::mat drift = S_term[j] - S_total;
                S_term[j] = Si * drift + Si;
                S_total = S_term[j] - drift;
            }
        }

        const double rss_now = arma::dot(resid, resid);
        // The first sweep is always kept: the shared-bandwidth initializer may overfit,
        // so moving to per-term bandwidths can legitimately raise RSS once. From then on
        // a sweep that no longer improves the fit ends the backfit at the prior iterate,
        // which keeps the recorded sweep path non-increasing.
        if (sweep > 1 && rss_now > rss_prev * (1.0 + 1e-12) + 1e-12) {
            B = B_before;
            F = F_before;
            resid = resid_before;
            S_term = S_term_before;
            S_total = S_total_before;
            term_bw = term_bw_before;
            se_raw = se_raw_before;
            converged = true;
            break;
        }
        rss_path.push_back(rss_now);
        rss_prev = rss_now;
        sweeps_done = sweep;

        double max_change = 0.0;
        for (std::size_t j = 0; j < p; ++j) {
            const double scale = 1.0 + arma::abs(B_before.col(j)).max();
            max_change = std::max(max_change, arma::abs(B.col(j) - B_before.col(j)).max() / scale);
        }
        if (max_change < options.tolerance) converged = true;
    }

    gwr_fit fit;
    fit.term_names = spec.term_names();
    fit.kernel = init_kernel;
    fit.n = n;
    fit.p = p;
    fit.response_sig = response_signature(y);
    fit.local_coefficients = B;
    fit.residuals = resid;
    fit.rss = rss_prev;
    fit.term_bandwidths = term_bw;
    fit.backfit_rss = rss_path;
    fit.converged = converged;
    fit.sweeps = sweeps_done;
    fit.local_ridge.zeros(n);
    fit.local_r2.set_size(n);
    fit.local_r2.fill(arma::datum::nan);
    fit.local_condition_numbers.set_size(n);
    fit.local_condition_numbers.fill(arma::datum::nan);

    const double dn = static_cast<double>(n);
    if (track_hat) {
        fit.hat_diagonal = S_total.diag();
        fit.effective_params = arma::trace(S_total);
        fit.aicc = detail::gwr_aicc(fit.rss, dn, fit.effective_params);
        fit.hat_matrix = std::move(S_total);
    } else {
        fit.hat_diagonal.set_size(n);
        fit.hat_diagonal.fill(arma::datum::nan);
        fit.effective_params = std::numeric_limits<double>::quiet_NaN();
        fit.aicc = std::numeric_limits<double>::quiet_NaN();
    }
    const double sigma2 = std::isfinite(fit.effective_params)
                              ? fit.rss / std::max(dn - fit.effective_params, 1e-12)
                              : fit.rss / dn;
    fit.local_std_errors = se_raw * std::sqrt(sigma2);
    fit.cv_score = std::numeric_limits<double>::quiet_NaN();

    const arma::vec dev = y - arma::mean(y);
    const double tss = arma::dot(dev, dev);
    fit.r2 = tss > 0.0 ? 1.0 - fit.rss / tss : 0.0;
    const double resid_df = dn - fit.effective_params;
    fit.adj_r2 = resid_df > 1.0 ? 1.0 - (1.0 - fit.r2) * (dn - 1.0) / (resid_df - 1.0)
                                : std::numeric_limits<double>::quiet_NaN();

    // Share of the maximum bandwidth: >= 0.8 marks an effectively global term.
    fit.term_bandwidth_share.resize(p);
    fit.term_bandwidth_global.resize(p);
    for (std::size_t j = 0; j < p; ++j) {
        const double share = term_bw[j].mode == bandwidth_spec::kind::fixed
                                 ? term_bw[j].distance / g.max_dist
                                 : static_cast<double>(term_bw[j].k) / dn;
        fit.term_bandwidth_share[j] = share;
        fit.term_bandwidth_global[j] = share >= 0.8;
    }
    return fit;
}

/// Spatial autocorrelation of a fitted model's residuals (Geary's C by default).
inline autocorr_result residual_autocorrelation(const arma::vec& residuals, const weights_matrix& W,
                                                const perm_options& opts,
                                                const std::string& statistic = "gearys_c") {
    if (statistic == "gearys_c") return gearys_c(residuals, W, opts);
    if (statistic == "morans_i") return morans_i(residuals, W, opts);
    throw config_error("residual_autocorrelation: unknown statistic '" + statistic + "'");
}

/// Coefficient-surface export: one row per unit with betas, standard errors and the local
/// diagnostics, matching the GeoJSON property set.
inline std::string export_surfaces_csv(const gwr_fit& fit, const spatial_frame& frame,
                                       char delim = ',') {
    std::string out = "id";
    out += delim;
    out += "x";
    out += delim;
    out += "y";
    for (const auto& t : fit.term_names) out += delim + ("beta_" + t);
    for (const auto& t : fit.term_names) out += delim + ("se_" + t);
    out += delim;
    out += "local_r2";
    out += delim;
    out += "local_cn";
    out += delim;
    out += "local_ridge\n";
    for (std::size_t i = 0; i < fit.n; ++i) {
        out += quote_field(frame.ids()[i], delim);
        out += delim + format_number(frame.x(i)) + delim + format_number(frame.y(i));
        for (std::size_t j = 0; j < fit.p; ++j) out += delim + format_number(fit.local_coefficients(i, j));
        for (std::size_t j = 0; j < fit.p; ++j) out += delim + format_number(fit.local_std_errors(i, j));
        out += delim + format_number(fit.local_r2(i));
        out += delim + format_number(fit.local_condition_numbers(i));
        out += delim + format_number(fit.local_ridge(i));
        out += '\n';
    }
    return out;
}

/// Table-style fit summary: kernel, bandwidths, coefficient quartiles, diagnostics.
inline std::string summarize(const gwr_fit& fit) {
    std::string out = "Geographically Weighted Regression\n";
    out += "Kernel function: " + to_string(fit.kernel.shape) + "\n";
    if (!fit.term_bandwidths.empty()) {
        out += "Bandwidths for each coefficient:\n";
        for (std::size_t j = 0; j < fit.p; ++j) {
            out += "  " + fit.term_names[j] + ": " + to_string(fit.term_bandwidths[j]) +
                   " (share of max " + format_number(fit.term_bandwidth_share[j]) +
                   (fit.term_bandwidth_global[j] ? ", global" : ", local") + ")\n";
        }
    } else {
        out += "Bandwidth: " + to_string(fit.kernel.bandwidth) + "\n";
    }
    out += "Summary of GWR coefficient estimates:\n";
    out += "term,min,q1,median,q3,max\n";
    for (std::size_t j = 0; j < fit.p; ++j) {
        std::vector<double> col(fit.n);
        for (std::size_t i = 0; i < fit.n; ++i) col[i] = fit.local_coefficients(i, j);
        out += fit.term_names[j] + "," + format_number(quantile(col, 0.0)) + "," +
               format_number(quantile(col, 0.25)) + "," + format_number(quantile(col, 0.5)) + "," +
               format_number(quantile(col, 0.75)) + "," + format_number(quantile(col, 1.0)) + "\n";
    }
    out += "Diagnostic information\n";
    out += "Residual sum of squares: " + format_number(fit.rss) + "\n";
    out += "Effective parameters (trace S): " + format_number(fit.effective_params) + "\n";
    out += "R-square value: " + format_number(fit.r2) + "\n";
    out += "Adjusted R-square value: " + format_number(fit.adj_r2) + "\n";
    out += "AICc value: " + format_number(fit.aicc) + "\n";
    if (std::isfinite(fit.cv_score)) out += "CV score: " + format_number(fit.cv_score) + "\n";
    if (!fit.backfit_rss.empty()) {
        out += "Backfitting sweeps: " + std::to_string(fit.sweeps) +
               (fit.converged ? " (converged)" : " (budget exhausted)") + "\n";
    }
    return out;
}

} // namespace spatreg
