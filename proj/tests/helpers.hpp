#pragma once

#include <armadillo>
#include <string>
#include <vector>

#include "spatreg/frame.hpp"
#include "spatreg/rng.hpp"

namespace testutil {

/// Frame from explicit coordinates and named columns.
inline spatreg::spatial_frame make_frame(const std::vector<double>& xs, const std::vector<double>& ys,
                                         const std::vector<std::string>& names,
                                         const std::vector<std::vector<double>>& cols) {
    const std::size_t n = xs.size();
    std::vector<std::string> ids(n);
    arma::mat xy(n, 2);
    for (std::size_t i = 0; i < n; ++i) {
        ids[i] = "u" + std::to_string(i);
        xy(i, 0) = xs[i];
        xy(i, 1) = ys[i];
    }
    std::vector<arma::vec> data;
    for (const auto& c : cols) {
        arma::vec v(n);
        for (std::size_t i = 0; i < n; ++i) v(i) = c[i];
        data.push_back(std::move(v));
    }
    return spatreg::spatial_frame(std::move(ids), std::move(xy), names, std::move(data));
}

/// n units scattered uniformly in [0, extent]^2 with the given iid-normal columns.
inline spatreg::spatial_frame random_frame(std::size_t n, const std::vector<std::string>& names,
                                           std::uint64_t seed, double extent = 100.0) {
    spatreg::rng gen(seed);
    std::vector<std::string> ids(n);
    arma::mat xy(n, 2);
    for (std::size_t i = 0; i < n; ++i) {
        ids[i] = "u" + std::to_string(i);
        xy(i, 0) = extent * gen.next_double();
        xy(i, 1) = extent * gen.next_double();
    }
    std::vector<arma::vec> data;
    for (std::size_t c = 0; c < names.size(); ++c) {
        arma::vec v(n);
        for (std::size_t i = 0; i < n; ++i) v(i) = gen.next_normal();
        data.push_back(std::move(v));
    }
    return spatreg::spatial_frame(std::move(ids), std::move(xy), names, std::move(data));
}

} // namespace testutil
