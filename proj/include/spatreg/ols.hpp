#pragma once

#include <armadillo>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "spatreg/error.hpp"
#include "spatreg/frame.hpp"
#include "spatreg/stats.hpp"

namespace spatreg {

/// FNV-1a over the raw bytes of y; lets model comparisons reject fits on different responses.
inline std::uint64_t response_signature(const arma::vec& y) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const double v : y) {
        unsigned char bytes[sizeof(double)];
        std::memcpy(bytes, &v, sizeof(double));
        for (const unsigned char b : bytes) {
            h ^= b;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

struct ols_fit {
    std::vector<std::string> term_names;
    arma::vec coefficients;
    arma::vec std_errors;
    arma::vec t_values;
    arma::vec residuals;
    double r2 = 0.0;
    double adj_r2 = 0.0;
    double residual_std_error = 0.0;
    double f_statistic = 0.0;
    double f_df1 = 0.0;
    double f_df2 = 0.0;
    double log_likelihood = 0.0;
    double aic = 0.0;
    std::size_t n = 0;
    std::size_t p = 0; // term count, intercept included
    bool intercept = true;
    std::uint64_t response_sig = 0;
};

namespace detail {

// Least squares through the economy QR of X; returns beta and (X'X)^-1 via R.
inline void qr_least_squares(const arma::mat& X, const arma::vec& y, arma::vec& beta,
                             arma::mat& xtx_inv) {
    arma::mat Q, R;
    if (!arma::qr_econ(Q, R, X)) throw numeric_error("ols: QR factorization failed");
    const double rmax = arma::abs(R.diag()).max();
    if (rmax <= 0.0 || arma::abs(R.diag()).min() <= rmax * 1e-12)
        throw numeric_error("ols: design matrix is rank deficient");
    beta = arma::solve(arma::trimatu(R), Q.t() * y);
    const arma::mat r_inv = arma::inv(arma::trimatu(R));
    xtx_inv = r_inv * r_inv.t();
}

} // namespace detail

/// Global ordinary least squares with the usual diagnostic set. The Gaussian
/// log-likelihood uses the ML variance RSS/n so AIC is comparable with the
/// ML-estimated spatial models; AIC = 2(p+1) - 2 logLik.
inline ols_fit fit_ols(const spatial_frame& frame, const model_spec& spec) {
    spec.validate_against(frame);
    const arma::mat X = spec.design(frame);
    const arma::vec y = frame.column(spec.response);
    const std::size_t n = frame.n();
    const std::size_t p = X.n_cols;
    if (n <= p)
        throw data_error("ols: n = " + std::to_string(n) + " must exceed term count " +
                         std::to_string(p));

    ols_fit fit;
    fit.term_names = spec.term_names();
    fit.n = n;
    fit.p = p;
    fit.intercept = spec.include_intercept;
    fit.response_sig = response_signature(y);

    arma::mat xtx_inv;
    detail::qr_least_squares(X, y, fit.coefficients, xtx_inv);
    fit.residuals = y - X * fit.coefficients;

    const double rss = arma::dot(fit.residuals, fit.residuals);
    const double dn = static_cast<double>(n), dp = static_cast<double>(p);
    const double sigma2 = rss / (dn - dp);
    fit.std_errors = arma::sqrt(sigma2 * xtx_inv.diag());
    fit.t_values = fit.coefficients / fit.std_errors;
    fit.residual_std_error = std::sqrt(sigma2);

    double tss;
    if (spec.include_intercept) {
        const arma::vec dev = y - arma::mean(y);
        tss = arma::dot(dev, dev);
    } else {
        tss = arma::dot(y, y);
    }
    fit.r2 = tss > 0.0 ? 1.0 - rss / tss : 0.0;
    if (spec.include_intercept) {
        fit.adj_r2 = 1.0 - (1.0 - fit.r2) * (dn - 1.0) / (dn - dp);
        if (p > 1) {
            fit.f_df1 = dp - 1.0;
            fit.f_df2 = dn - dp;
            fit.f_statistic = ((tss - rss) / fit.f_df1) / (rss / fit.f_df2);
        } else {
            fit.f_df1 = 0.0;
            fit.f_df2 = dn - 1.0;
            fit.f_statistic = std::numeric_limits<double>::quiet_NaN();
        }
    } else {
        fit.adj_r2 = 1.0 - (1.0 - fit.r2) * dn / (dn - dp);
        fit.f_df1 = dp;
        fit.f_df2 = dn - dp;
        const double mss = tss - rss;
        fit.f_statistic = (mss / fit.f_df1) / (rss / fit.f_df2);
    }

    fit.log_likelihood = -0.5 * dn * (std::log(2.0 * arma::datum::pi) + std::log(rss / dn) + 1.0);
    fit.aic = 2.0 * (dp + 1.0) - 2.0 * fit.log_likelihood;
    return fit;
}

struct model_criterion {
    std::string name;
    double criterion; // AIC or AICc, lower is better
    std::uint64_t response_sig;
};

struct ranking_entry {
    std::string name;
    double criterion;
    std::size_t rank; // 1 = best
};

/// Ascending ranking by information criterion, ties broken by model name. All entries
/// must describe fits of the same response vector.
inline std::vector<ranking_entry> compare_aic(std::vector<model_criterion> fits) {
    if (fits.empty()) throw config_error("compare_aic: no fits to rank");
    for (const auto& f : fits) {
        if (f.response_sig != fits.front().response_sig)
            throw data_error("compare_aic: fits do not share the same response vector");
        if (std::isnan(f.criterion))
            throw data_error("compare_aic: model '" + f.name + "' has no finite criterion");
    }
    std::sort(fits.begin(), fits.end(), [](const model_criterion& a, const model_criterion& b) {
        if (a.criterion != b.criterion) return a.criterion < b.criterion;
        return a.name < b.name;
    });
    std::vector<ranking_entry> out;
    out.reserve(fits.size());
    for (std::size_t i = 0; i < fits.size(); ++i)
        out.push_back({fits[i].name, fits[i].criterion, i + 1});
    return out;
}

/// Plain-text coefficient table: term, estimate, std. error, significance code.
inline std::string summarize(const ols_fit& fit) {
    std::string out = "OLS Regression Results\n";
    out += "term,estimate,std_error,t_value,signif\n";
    const double df = static_cast<double>(fit.n) - static_cast<double>(fit.p);
    for (std::size_t j = 0; j < fit.term_names.size(); ++j) {
        const double pval = t_pvalue_two_sided(fit.t_values(j), df);
        out += fit.term_names[j] + "," + format_number(fit.coefficients(j)) + "," +
               format_number(fit.std_errors(j)) + "," + format_number(fit.t_values(j)) + "," +
               significance_code(pval) + "\n";
    }
    out += "Observations," + std::to_string(fit.n) + "\n";
    out += "R2," + format_number(fit.r2) + "\n";
    out += "Adjusted R2," + format_number(fit.adj_r2) + "\n";
    out += "Residual Std. Error," + format_number(fit.residual_std_error) +
           " (df = " + format_number(df) + ")\n";
    if (std::isfinite(fit.f_statistic)) {
        const double fp = f_pvalue(fit.f_statistic, fit.f_df1, fit.f_df2);
        out += "F Statistic," + format_number(fit.f_statistic) + significance_code(fp) +
               " (df = " + format_number(fit.f_df1) + "; " + format_number(fit.f_df2) + ")\n";
    }
    out += "Log Likelihood," + format_number(fit.log_likelihood) + "\n";
    out += "AIC," + format_number(fit.aic) + "\n";
    out += "Note: *p<0.1; **p<0.05; ***p<0.01\n";
    return out;
}

} // namespace spatreg
