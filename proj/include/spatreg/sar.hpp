#pragma once

#include <armadillo>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "spatreg/error.hpp"
#include "spatreg/frame.hpp"
#include "spatreg/ols.hpp"
#include "spatreg/optimize.hpp"
#include "spatreg/stats.hpp"
#include "spatreg/weights.hpp"

namespace spatreg {

enum class sar_kind { lag, error };

inline std::string to_string(sar_kind k) { return k == sar_kind::lag ? "spatial_lag" : "spatial_error"; }

struct sar_fit {
    sar_kind kind = sar_kind::error;
    double spatial_parameter = 0.0; // rho for the lag model, lambda for the error model
    std::vector<std::string> term_names;
    arma::vec coefficients;
    arma::vec std_errors;
    double log_likelihood = 0.0;
    double aic = 0.0;
    double lr_statistic = 0.0; // vs the OLS fit of the same specification
    double lr_p_value = 1.0;
    arma::vec residuals; // innovation residuals epsilon-hat
    std::pair<double, double> parameter_bounds{0.0, 0.0};
    double sigma2 = 0.0;
    std::size_t n = 0;
    std::size_t p = 0;
    std::uint64_t response_sig = 0;
};

struct sar_options {
    /// Pin the spatial parameter instead of maximizing over it.
    std::optional<double> fixed_parameter;
};

/// Eigenvalues of the weights matrix, used for the log-determinant term and the feasible
/// parameter interval. Row-standardized weights derived from a symmetric binary structure
/// go through the similar symmetric matrix B_ij / sqrt(d_i d_j); anything else falls back
/// to the general eigensolver. Dense decomposition caps this at desk scale.
inline arma::cx_vec weights_eigenvalues(const weights_matrix& W) {
    const std::size_t n = W.n();
    bool equal_within_rows = true;
    for (std::size_t i = 0; i < n && equal_within_rows; ++i) {
        const auto& row = W.row(i);
        for (const auto& nb : row)
            if (std::fabs(nb.weight - row.front().weight) > 1e-14) {
                equal_within_rows = false;
                break;
            }
    }
    if (W.symmetric_structure() && W.style() == weights_style::row_standardized && equal_within_rows) {
        arma::mat M(n, n, arma::fill::zeros);
        arma::vec deg(n);
        for (std::size_t i = 0; i < n; ++i) deg(i) = static_cast<double>(W.row(i).size());
        for (std::size_t i = 0; i < n; ++i)
            for (const auto& nb : W.row(i)) M(i, nb.index) = 1.0 / std::sqrt(deg(i) * deg(nb.index));
        arma::vec ev;
        if (!arma::eig_sym(ev, M)) throw numeric_error("sar: symmetric eigendecomposition failed");
        return arma::cx_vec(ev, arma::vec(n, arma::fill::zeros));
    }
    if (W.symmetric_structure() && W.style() == weights_style::binary) {
        arma::vec ev;
        if (!arma::eig_sym(ev, W.dense())) throw numeric_error("sar: symmetric eigendecomposition failed");
        return arma::cx_vec(ev, arma::vec(n, arma::fill::zeros));
    }
    arma::cx_vec ev;
    if (!arma::eig_gen(ev, W.dense())) throw numeric_error("sar: eigendecomposition failed");
    return ev;
}

/// log |I - rho W| from the eigenvalues of W.
inline double log_det_from_eigenvalues(double rho, const arma::cx_vec& eigenvalues) {
    double s = 0.0;
    for (const auto& w : eigenvalues) s += std::log(std::abs(1.0 - rho * w));
    return s;
}

namespace detail {

inline void check_sar_inputs(const spatial_frame& frame, const model_spec& spec,
                             const weights_matrix& W) {
    spec.validate_against(frame);
    if (W.n() != frame.n()) throw data_error("sar: weights/frame size mismatch");
    if (W.style() != weights_style::row_standardized)
        throw data_error("sar: weights must be row-standardized");
    if (!W.islands().empty()) throw data_error("sar: weights contain islands; drop them first");
}

} // namespace detail

/// Concentrated (profile) log-likelihood of a SAR model as a function of the spatial
/// parameter. All heavy work (eigenvalues, lagged design) happens once at construction,
/// so the profile can be evaluated densely.
class sar_profile {
public:
    sar_profile(sar_kind kind, const spatial_frame& frame, const model_spec& spec,
                const weights_matrix& W)
        : kind_(kind) {
        detail::check_sar_inputs(frame, spec, W);
        X_ = spec.design(frame);
        y_ = frame.column(spec.response);
        n_ = static_cast<double>(frame.n());
        if (frame.n() <= X_.n_cols + 2)
            throw data_error("sar: too few observations for the parameter count");
        wy_ = W.lag(y_);
        eigenvalues_ = weights_eigenvalues(W);
        bounds_ = compute_bounds(eigenvalues_);
        if (kind_ == sar_kind::lag) {
            arma::vec b0, bl;
            arma::mat unused;
            detail::qr_least_squares(X_, y_, b0, unused);
            detail::qr_least_squares(X_, wy_, bl, unused);
            e0_ = y_ - X_ * b0;
            el_ = wy_ - X_ * bl;
        } else {
            WX_ = W.dense() * X_;
        }
    }

    sar_kind kind() const { return kind_; }
    const std::pair<double, double>& bounds() const { return bounds_; }
    const arma::cx_vec& eigenvalues() const { return eigenvalues_; }

    double loglik(double t) const {
        double rss;
        if (kind_ == sar_kind::lag) {
            const arma::vec e = e0_ - t * el_;
            rss = arma::dot(e, e);
        } else {
            rss = concentrate(t).rss;
        }
        return -0.5 * n_ * (std::log(2.0 * arma::datum::pi) + 1.0) -
               0.5 * n_ * std::log(rss / n_) + log_det_from_eigenvalues(t, eigenvalues_);
    }

    struct concentrated {
        arma::vec beta;
        arma::mat xtx_inv;
        arma::vec residuals;
        double rss;
    };

    /// GLS coefficients and innovation residuals at a given parameter value.
    concentrated concentrate(double t) const {
        concentrated c;
        if (kind_ == sar_kind::lag) {
            detail::qr_least_squares(X_, y_ - t * wy_, c.beta, c.xtx_inv);
            c.residuals = y_ - t * wy_ - X_ * c.beta;
        } else {
            detail::qr_least_squares(X_ - t * WX_, y_ - t * wy_, c.beta, c.xtx_inv);
            c.residuals = (y_ - t * wy_) - (X_ - t * WX_) * c.beta;
        }
        c.rss = arma::dot(c.residuals, c.residuals);
        return c;
    }

    const arma::vec& response() const { return y_; }
    std::size_t term_count() const { return X_.n_cols; }

private:
    static std::pair<double, double> compute_bounds(const arma::cx_vec& eigenvalues) {
        double omega_min = 0.0, omega_max = 0.0;
        bool any = false;
        for (const auto& w : eigenvalues) {
            if (std::fabs(w.imag()) > 1e-9 * (1.0 + std::abs(w))) continue;
            const double re = w.real();
            if (!any) {
                omega_min = omega_max = re;
                any = true;
            } else {
                omega_min = std::min(omega_min, re);
                omega_max = std::max(omega_max, re);
            }
        }
        if (!any || omega_min >= 0.0 || omega_max <= 0.0)
            throw numeric_error("sar: eigenvalues do not bound a feasible parameter interval");
        return {1.0 / omega_min, 1.0 / omega_max};
    }

    sar_kind kind_;
    arma::mat X_, WX_;
    arma::vec y_, wy_, e0_, el_;
    arma::cx_vec eigenvalues_;
    std::pair<double, double> bounds_;
    double n_ = 0.0;
};

/// ML fit of either SAR variant. The spatial parameter maximizes the concentrated
/// likelihood by a coarse bracket scan followed by golden-section refinement; the null
/// value 0 always stays in the candidate set, which keeps the LR statistic nonnegative.
inline sar_fit fit_sar(sar_kind kind, const spatial_frame& frame, const model_spec& spec,
                       const weights_matrix& W, const sar_options& opts = {}) {
    const sar_profile profile(kind, frame, spec, W);
    constexpr double delta = 1e-6;
    const double lo = profile.bounds().first + delta;
    const double hi = profile.bounds().second - delta;

    double param;
    if (opts.fixed_parameter) {
        param = *opts.fixed_parameter;
        if (param < lo || param > hi)
            throw config_error("sar: fixed parameter outside the feasible interval");
    } else {
        const auto neg = [&](double t) { return -profile.loglik(t); };
        double blo, bhi;
        bracket_minimum(neg, lo, hi, 33, blo, bhi);
        param = golden_section_minimize(neg, blo, bhi, 1e-8).x;
        if (lo < 0.0 && hi > 0.0 && profile.loglik(0.0) >= profile.loglik(param)) param = 0.0;
        const double range = hi - lo;
        if (param != 0.0 && (param - lo < 1e-5 * range || hi - param < 1e-5 * range))
            throw numeric_error("sar: optimizer converged at the parameter bound");
    }

    const auto c = profile.concentrate(param);
    const double dn = static_cast<double>(frame.n());

    sar_fit fit;
    fit.kind = kind;
    fit.spatial_parameter = param;
    fit.term_names = spec.term_names();
    fit.coefficients = c.beta;
    fit.residuals = c.residuals;
    fit.sigma2 = c.rss / dn;
    fit.std_errors = arma::sqrt(fit.sigma2 * c.xtx_inv.diag());
    fit.log_likelihood = profile.loglik(param);
    fit.aic = 2.0 * (static_cast<double>(profile.term_count()) + 2.0) - 2.0 * fit.log_likelihood;
    fit.parameter_bounds = profile.bounds();
    fit.n = frame.n();
    fit.p = profile.term_count();
    fit.response_sig = response_signature(profile.response());

    const ols_fit baseline = fit_ols(frame, spec);
    double lr = 2.0 * (fit.log_likelihood - baseline.log_likelihood);
    if (lr < 0.0 && lr > -1e-8) lr = 0.0; // round-off on the nested null
    if (lr < 0.0 && !opts.fixed_parameter)
        throw numeric_error("sar: likelihood fell below the OLS baseline");
    fit.lr_statistic = lr;
    fit.lr_p_value = chi2_pvalue_df1(lr);
    return fit;
}

inline sar_fit fit_spatial_lag(const spatial_frame& frame, const model_spec& spec,
                               const weights_matrix& W, const sar_options& opts = {}) {
    return fit_sar(sar_kind::lag, frame, spec, W, opts);
}

inline sar_fit fit_spatial_error(const spatial_frame& frame, const model_spec& spec,
                                 const weights_matrix& W, const sar_options& opts = {}) {
    return fit_sar(sar_kind::error, frame, spec, W, opts);
}

/// Fits both SAR variants and keeps the one with the higher log-likelihood; ties go to
/// the error model.
inline sar_fit choose_sar(const spatial_frame& frame, const model_spec& spec,
                          const weights_matrix& W) {
    const sar_fit lag = fit_spatial_lag(frame, spec, W);
    const sar_fit err = fit_spatial_error(frame, spec, W);
    return err.log_likelihood >= lag.log_likelihood ? err : lag;
}

/// Table-style summary: term, estimate, stars, then the spatial parameter, LR and AIC lines.
inline std::string summarize(const sar_fit& fit) {
    std::string out = (fit.kind == sar_kind::lag ? std::string("Spatial Lag Model")
                                                 : std::string("Spatial Error Model")) + "\n";
    out += "term,estimate,std_error,signif\n";
    for (std::size_t j = 0; j < fit.term_names.size(); ++j) {
        const double z = fit.coefficients(j) / fit.std_errors(j);
        const double pval = std::erfc(std::fabs(z) / std::sqrt(2.0));
        out += fit.term_names[j] + "," + format_number(fit.coefficients(j)) + "," +
               format_number(fit.std_errors(j)) + "," + significance_code(pval) + "\n";
    }
    out += "Observations," + std::to_string(fit.n) + "\n";
    out += "Log Likelihood," + format_number(fit.log_likelihood) + "\n";
    out += (fit.kind == sar_kind::lag ? std::string("Rho: ") : std::string("Lambda: ")) +
           format_number(fit.spatial_parameter) + ", LR test value: " +
           format_number(fit.lr_statistic) + ", p-value: " + format_number(fit.lr_p_value) + "\n";
    out += "AIC," + format_number(fit.aic) + "\n";
    out += "Note: *p<0.1; **p<0.05; ***p<0.01\n";
    return out;
}

} // namespace spatreg
