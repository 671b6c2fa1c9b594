#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "spatreg/error.hpp"

namespace spatreg {

namespace detail {

// Lentz continued fraction for the regularized incomplete beta function.
inline double betacf(double a, double b, double x) {
    constexpr int max_iter = 300;
    constexpr double eps = 3e-14;
    constexpr double fpmin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::fabs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) break;
    }
    return h;
}

} // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                         a * std::log(x) + b * std::log1p(-x);
    const double bt = std::exp(ln_bt);
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * detail::betacf(a, b, x) / a;
    return 1.0 - bt * detail::betacf(b, a, 1.0 - x) / b;
}

/// Two-sided p-value of a Student-t statistic with df degrees of freedom.
inline double t_pvalue_two_sided(double t, double df) {
    if (!std::isfinite(t)) return std::isnan(t) ? std::numeric_limits<double>::quiet_NaN() : 0.0;
    return incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

/// Upper-tail p-value of an F statistic with (df1, df2) degrees of freedom.
inline double f_pvalue(double f, double df1, double df2) {
    if (!std::isfinite(f) || f <= 0.0) return 1.0;
    return incomplete_beta(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f));
}

/// Upper-tail p-value of a chi-square statistic with one degree of freedom.
inline double chi2_pvalue_df1(double x) {
    if (!std::isfinite(x) || x <= 0.0) return 1.0;
    return std::erfc(std::sqrt(x / 2.0));
}

/// Significance code in the usual R convention: *** p<0.01, ** p<0.05, * p<0.1.
inline std::string significance_code(double p) {
    if (!std::isfinite(p)) return "";
    if (p < 0.01) return "***";
    if (p < 0.05) return "**";
    if (p < 0.1) return "*";
    return "";
}

/// Linear-interpolation quantile (R type 7) of a copy of v; q in [0, 1].
inline double quantile(std::vector<double> v, double q) {
    if (v.empty()) throw numeric_error("quantile of empty vector");
    std::sort(v.begin(), v.end());
    if (q <= 0.0) return v.front();
    if (q >= 1.0) return v.back();
    const double h = (static_cast<double>(v.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

} // namespace spatreg
