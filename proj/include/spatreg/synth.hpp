#pragma once

#include <armadillo>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "spatreg/error.hpp"
#include "spatreg/frame.hpp"
#include "spatreg/rng.hpp"
#include "spatreg/weights.hpp"

namespace spatreg {

/// Coefficient surface over the unit grid: constant, linear in one coordinate, a
/// two-cluster step, or alternating stripes (several bands along one axis).
struct surface_spec {
    enum class kind { constant, linear, step, stripes };
    kind type = kind::constant;
    double value = 0.0;      // constant
    char axis = 'x';         // linear / step / stripes
    double low = 0.0;        // linear / step / stripes
    double high = 0.0;
    double breakpoint = 0.5; // step: fraction along the axis
    std::size_t count = 2;   // stripes: number of bands

    static surface_spec constant(double v) {
        surface_spec s;
        s.type = kind::constant;
        s.value = v;
        return s;
    }
    static surface_spec linear(char axis, double low, double high) {
        surface_spec s;
        s.type = kind::linear;
        s.axis = axis;
        s.low = low;
        s.high = high;
        return s;
    }
    static surface_spec step(char axis, double low, double high, double breakpoint = 0.5) {
        surface_spec s;
        s.type = kind::step;
        s.axis = axis;
        s.low = low;
        s.high = high;
        s.breakpoint = breakpoint;
        return s;
    }
    static surface_spec stripes(char axis, std::size_t count, double low, double high) {
        surface_spec s;
        s.type = kind::stripes;
        s.axis = axis;
        s.count = count;
        s.low = low;
        s.high = high;
        return s;
    }

    void validate() const {
        if (axis != 'x' && axis != 'y') throw config_error("surface: axis must be 'x' or 'y'");
        if (type == kind::stripes && count < 1) throw config_error("surface: stripes count must be >= 1");
        if (type == kind::step && !(breakpoint > 0.0 && breakpoint < 1.0))
            throw config_error("surface: step breakpoint must lie in (0,1)");
    }

    /// Value at fraction t in [0, 1] along the chosen axis.
    double at_fraction(double t) const {
        switch (type) {
            case kind::constant: return value;
            case kind::linear: return low + (high - low) * t;
            case kind::step: return t < breakpoint ? low : high;
            case kind::stripes: {
                auto band = static_cast<std::size_t>(t * static_cast<double>(count));
                if (band >= count) band = count - 1;
                return band % 2 == 0 ? low : high;
            }
        }
        return value;
    }
};

struct synth_predictor {
    std::string name;
    surface_spec beta;
};

/// Regular-grid generator: y = beta_0(u,v) + sum_j beta_j(u,v) x_j + u_err where the error
/// term follows u_err = lambda W u_err + eps over row-standardized rook contiguity.
struct synth_config {
    std::size_t nx = 2;
    std::size_t ny = 2;
    double spacing = 1.0;
    surface_spec intercept = surface_spec::constant(0.0);
    std::vector<synth_predictor> predictors;
    double noise_sigma = 1.0;
    double lambda = 0.0;
    std::string response_name = "y";
};

struct synth_result {
    spatial_frame frame;
    std::map<std::string, arma::vec> true_surfaces; // "(Intercept)" plus predictor names
    std::vector<std::pair<std::string, std::string>> rook_pairs; // grid adjacency, by id
};

inline synth_result generate_synthetic(const synth_config& cfg, std::uint64_t seed) {
    if (cfg.nx < 2 || cfg.ny < 2) throw config_error("synth: grid must be at least 2 x 2");
    if (!(cfg.spacing > 0.0)) throw config_error("synth: spacing must be positive");
    if (!(cfg.noise_sigma >= 0.0)) throw config_error("synth: noise sigma must be nonnegative");
    if (!(cfg.lambda > -1.0 && cfg.lambda < 1.0))
        throw config_error("synth: lambda must lie in (-1, 1)");
    cfg.intercept.validate();
    for (const auto& pr : cfg.predictors) {
        pr.beta.validate();
        if (pr.name.empty() || pr.name == cfg.response_name)
            throw config_error("synth: bad predictor name");
    }

    const std::size_t n = cfg.nx * cfg.ny;
    std::vector<std::string> ids(n);
    arma::mat xy(n, 2);
    for (std::size_t r = 0; r < cfg.ny; ++r) {
        for (std::size_t c = 0; c < cfg.nx; ++c) {
            const std::size_t i = r * cfg.nx + c;
            char buf[24];
            std::snprintf(buf, sizeof(buf), "u%05zu", i);
            ids[i] = buf;
            xy(i, 0) = static_cast<double>(c) * cfg.spacing;
            xy(i, 1) = static_cast<double>(r) * cfg.spacing;
        }
    }
    const double x_max = static_cast<double>(cfg.nx - 1) * cfg.spacing;
    const double y_max = static_cast<double>(cfg.ny - 1) * cfg.spacing;
    const auto fraction = [&](std::size_t i, char axis) {
        return axis == 'x' ? (x_max > 0.0 ? xy(i, 0) / x_max : 0.0)
                           : (y_max > 0.0 ? xy(i, 1) / y_max : 0.0);
    };

    synth_result out;
    arma::vec beta0(n);
    for (std::size_t i = 0; i < n; ++i) beta0(i) = cfg.intercept.at_fraction(fraction(i, cfg.intercept.axis));
    out.true_surfaces["(Intercept)"] = beta0;

    std::vector<arma::vec> xcols(cfg.predictors.size());
    arma::vec y = beta0;
    for (std::size_t j = 0; j < cfg.predictors.size(); ++j) {
        rng gen(substream(seed, "synth_predictor", j));
        arma::vec x(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            x(i) = gen.next_normal();
            b(i) = cfg.predictors[j].beta.at_fraction(fraction(i, cfg.predictors[j].beta.axis));
        }
        out.true_surfaces[cfg.predictors[j].name] = b;
        y += b % x;
        xcols[j] = std::move(x);
    }

    // Rook adjacency on the grid, row-standardized for the error process.
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t r = 0; r < cfg.ny; ++r) {
        for (std::size_t c = 0; c < cfg.nx; ++c) {
            const std::size_t i = r * cfg.nx + c;
            if (c + 1 < cfg.nx) edges.emplace_back(i, i + 1);
            if (r + 1 < cfg.ny) edges.emplace_back(i, i + cfg.nx);
        }
    }
    for (const auto& [a, b] : edges) out.rook_pairs.emplace_back(ids[a], ids[b]);

    rng noise_gen(substream(seed, "synth_noise"));
    arma::vec eps(n);
    for (std::size_t i = 0; i < n; ++i) eps(i) = cfg.noise_sigma * noise_gen.next_normal();
    if (cfg.lambda != 0.0) {
        arma::mat W(n, n, arma::fill::zeros);
        for (const auto& [a, b] : edges) {
            W(a, b) = 1.0;
            W(b, a) = 1.0;
        }
        for (std::size_t i = 0; i < n; ++i) {
            const double s = arma::accu(W.row(i));
            if (s > 0.0) W.row(i) /= s;
        }
        arma::vec u;
        if (!arma::solve(u, arma::eye(n, n) - cfg.lambda * W, eps))
            throw numeric_error("synth: failed to solve the error process");
        y += u;
    } else {
        y += eps;
    }

    std::vector<std::string> names{cfg.response_name};
    std::vector<arma::vec> data{y};
    for (std::size_t j = 0; j < cfg.predictors.size(); ++j) {
        names.push_back(cfg.predictors[j].name);
        data.push_back(xcols[j]);
    }
    out.frame = spatial_frame(std::move(ids), std::move(xy), std::move(names), std::move(data));
    return out;
}

/// Delimited export of the generator's true coefficient surfaces (oracle side-channel).
inline std::string export_true_surfaces(const synth_result& synth, char delim = ',') {
    std::string out = "id";
    for (const auto& [name, vec] : synth.true_surfaces) {
        out += delim;
        out += quote_field("beta_" + name, delim);
    }
    out += '\n';
    for (std::size_t i = 0; i < synth.frame.n(); ++i) {
        out += quote_field(synth.frame.ids()[i], delim);
        for (const auto& [name, vec] : synth.true_surfaces) {
            out += delim;
            out += format_number(vec(i));
        }
        out += '\n';
    }
    return out;
}

} // namespace spatreg
