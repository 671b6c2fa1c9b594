#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>

namespace spatreg {

struct golden_result {
    double x;
    double fx;
};

/// Golden-section minimization of f over [a, b] to interval width xtol.
template <typename Fn>
golden_result golden_section_minimize(Fn f, double a, double b, double xtol, int max_iter = 300) {
    constexpr double inv_phi = 0.6180339887498949;
    double x1 = b - inv_phi * (b - a);
    double x2 = a + inv_phi * (b - a);
    double f1 = f(x1), f2 = f(x2);
    for (int it = 0; it < max_iter && (b - a) > xtol; ++it) {
        if (f1 <= f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        }
    }
    return f1 <= f2 ? golden_result{x1, f1} : golden_result{x2, f2};
}

/// Coarse scan to bracket the minimum before golden-section refinement. Returns the
/// sub-interval around the best of `points` evenly spaced samples.
template <typename Fn>
void bracket_minimum(Fn f, double a, double b, int points, double& lo, double& hi) {
    double best_x = a, best_f = std::numeric_limits<double>::infinity();
    const double step = (b - a) / (points - 1);
    for (int i = 0; i < points; ++i) {
        const double x = (i == points - 1) ? b : a + step * i;
        const double fx = f(x);
        if (fx < best_f) {
            best_f = fx;
            best_x = x;
        }
    }
    lo = std::max(a, best_x - step);
    hi = std::min(b, best_x + step);
}

} // namespace spatreg
