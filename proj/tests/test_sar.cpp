#include <catch_amalgamated.hpp>

#include "spatreg/diagnostics.hpp"
#include "spatreg/ols.hpp"
#include "spatreg/sar.hpp"
#include "spatreg/synth.hpp"

#include "helpers.hpp"

using namespace spatreg;

namespace {

struct sar_instance {
    spatial_frame frame;
    weights_matrix weights;
};

// Grid frame with iid predictors, constant coefficients, and the rook weights.
sar_instance grid_instance(std::size_t nx, std::size_t ny, double lambda, double sigma,
                           std::uint64_t seed) {
    synth_config cfg;
    cfg.nx = nx;
    cfg.ny = ny;
    cfg.intercept = surface_spec::constant(1.0);
    cfg.predictors = {{"a", surface_spec::constant(2.0)}, {"b", surface_spec::constant(-1.0)}};
    cfg.noise_sigma = sigma;
    cfg.lambda = lambda;
    auto synth = generate_synthetic(cfg, seed);
    auto W = row_standardize(build_contiguity(synth.frame, synth.rook_pairs));
    return {std::move(synth.frame), std::move(W)};
}

const model_spec k_spec{"y", {"a", "b"}, true};

// Replace y with a spatial-lag process y = (I - rho W)^-1 (X beta + eps).
spatial_frame lag_process(const sar_instance& inst, double rho, double sigma, std::uint64_t seed) {
    const arma::mat X = k_spec.design(inst.frame);
    const arma::vec beta{1.0, 2.0, -1.0};
    rng gen(substream(seed, "lag_eps"));
    arma::vec eps(inst.frame.n());
    for (auto& e : eps) e = sigma * gen.next_normal();
    const arma::mat I = arma::eye(inst.frame.n(), inst.frame.n());
    const arma::vec y = arma::solve(I - rho * inst.weights.dense(), X * beta + eps);
    return inst.frame.with_column("y", y);
}

} // namespace

TEST_CASE("spatial lag fit on rho = 0 data collapses to OLS") {
    const auto inst = grid_instance(10, 10, 0.0, 1.0, 707);
    const auto sar = fit_spatial_lag(inst.frame, k_spec, inst.weights);
    const auto ols = fit_ols(inst.frame, k_spec);
    REQUIRE(std::fabs(sar.spatial_parameter) < 0.05);
    for (std::size_t j = 0; j < 3; ++j)
        REQUIRE(std::fabs(sar.coefficients(j) - ols.coefficients(j)) < 1e-2);
}

TEST_CASE("spatial lag fit recovers rho = 0.5 on generated data") {
    const auto inst = grid_instance(20, 10, 0.0, 0.0, 57);
    const auto frame = lag_process(inst, 0.5, 0.3, 57);
    const auto fit = fit_spatial_lag(frame, k_spec, inst.weights);
    REQUIRE(fit.spatial_parameter >= 0.4);
    REQUIRE(fit.spatial_parameter <= 0.6);
    REQUIRE(fit.lr_statistic > 0.0);
    REQUIRE(fit.spatial_parameter > fit.parameter_bounds.first);
    REQUIRE(fit.spatial_parameter < fit.parameter_bounds.second);
}

TEST_CASE("spatial error fit on lambda = 0 data collapses to OLS") {
    const auto inst = grid_instance(10, 10, 0.0, 1.0, 707);
    const auto sar = fit_spatial_error(inst.frame, k_spec, inst.weights);
    const auto ols = fit_ols(inst.frame, k_spec);
    REQUIRE(std::fabs(sar.spatial_parameter) < 0.05);
    for (std::size_t j = 0; j < 3; ++j)
        REQUIRE(std::fabs(sar.coefficients(j) - ols.coefficients(j)) < 1e-2);
}

TEST_CASE("spatial error fit recovers lambda = 0.6 at n = 200") {
    const auto inst = grid_instance(20, 10, 0.6, 1.0, 911);
    const auto fit = fit_spatial_error(inst.frame, k_spec, inst.weights);
    REQUIRE(fit.spatial_parameter >= 0.5);
    REQUIRE(fit.spatial_parameter <= 0.7);
}

TEST_CASE("forcing lambda = 0 reproduces the OLS log-likelihood") {
    const auto inst = grid_instance(8, 8, 0.4, 1.0, 77);
    sar_options opts;
    opts.fixed_parameter = 0.0;
    const auto sar = fit_spatial_error(inst.frame, k_spec, inst.weights, opts);
    const auto ols = fit_ols(inst.frame, k_spec);
    REQUIRE_THAT(sar.log_likelihood, Catch::Matchers::WithinAbs(ols.log_likelihood, 1e-8));
    REQUIRE(sar.spatial_parameter == 0.0);
}

TEST_CASE("choose_sar picks the generating model") {
    const auto lag_inst = grid_instance(16, 10, 0.0, 0.0, 401);
    const auto lag_frame = lag_process(lag_inst, 0.6, 0.3, 401);
    REQUIRE(choose_sar(lag_frame, k_spec, lag_inst.weights).kind == sar_kind::lag);

    const auto err_inst = grid_instance(16, 10, 0.6, 1.0, 402);
    REQUIRE(choose_sar(err_inst.frame, k_spec, err_inst.weights).kind == sar_kind::error);
}

TEST_CASE("with the spatial parameter pinned at zero both SAR variants equal OLS") {
    // The exact "both collapse to OLS" statement: at rho = lambda = 0 the lag and error
    // likelihoods coincide with the OLS likelihood. Freely estimated parameters on null
    // data carry O(lambda-hat^2) likelihood boosts, so those agree only loosely.
    const auto inst = grid_instance(10, 10, 0.0, 1.0, 515);
    sar_options pin;
    pin.fixed_parameter = 0.0;
    const auto lag = fit_spatial_lag(inst.frame, k_spec, inst.weights, pin);
    const auto err = fit_spatial_error(inst.frame, k_spec, inst.weights, pin);
    const auto ols = fit_ols(inst.frame, k_spec);
    REQUIRE_THAT(lag.log_likelihood, Catch::Matchers::WithinAbs(ols.log_likelihood, 1e-8));
    REQUIRE_THAT(err.log_likelihood, Catch::Matchers::WithinAbs(ols.log_likelihood, 1e-8));

    const auto lag_free = fit_spatial_lag(inst.frame, k_spec, inst.weights);
    const auto err_free = fit_spatial_error(inst.frame, k_spec, inst.weights);
    REQUIRE(std::fabs(lag_free.log_likelihood - err_free.log_likelihood) < 1.0);
    REQUIRE_NOTHROW(choose_sar(inst.frame, k_spec, inst.weights));
}

TEST_CASE("optimizer beats a 2001-point likelihood grid within 1e-6") {
    const auto inst = grid_instance(8, 8, 0.5, 1.0, 23);
    for (const auto kind : {sar_kind::lag, sar_kind::error}) {
        const sar_profile profile(kind, inst.frame, k_spec, inst.weights);
        const auto fit = fit_sar(kind, inst.frame, k_spec, inst.weights);
        const double lo = profile.bounds().first + 1e-6;
        const double hi = profile.bounds().second - 1e-6;
        double grid_max = -arma::datum::inf;
        for (int t = 0; t < 2001; ++t) {
            const double r = lo + (hi - lo) * static_cast<double>(t) / 2000.0;
            grid_max = std::max(grid_max, profile.loglik(r));
        }
        REQUIRE(fit.log_likelihood >= grid_max - 1e-6);
    }
}

TEST_CASE("log-determinant via eigenvalues matches the dense determinant") {
    // Symmetric-structure contiguity weights and asymmetric k-NN weights, n <= 150.
    const auto inst = grid_instance(12, 12, 0.0, 1.0, 5);
    const auto f = testutil::random_frame(120, {}, 6);
    const auto W_knn = row_standardize(build_knn(f, 5));
    for (const auto* W : {&inst.weights, &W_knn}) {
        const arma::cx_vec eigs = weights_eigenvalues(*W);
        const arma::mat D = W->dense();
        const arma::mat I = arma::eye(D.n_rows, D.n_cols);
        for (const double rho : {-0.7, -0.2, 0.0, 0.3, 0.8}) {
            double val, sign;
            arma::log_det(val, sign, I - rho * D);
            REQUIRE_THAT(log_det_from_eigenvalues(rho, eigs), Catch::Matchers::WithinAbs(val, 1e-6));
        }
    }
}

TEST_CASE("residuals of a well-specified error model carry no autocorrelation") {
    double sum_abs_i = 0.0;
    const int reps = 20;
    for (int rep = 0; rep < reps; ++rep) {
        const auto inst = grid_instance(10, 10, 0.5, 1.0, 6000 + static_cast<std::uint64_t>(rep));
        const auto fit = fit_spatial_error(inst.frame, k_spec, inst.weights);
        const auto res = morans_i(fit.residuals, inst.weights,
                                  {.seed = 1, .n_permutations = 19});
        sum_abs_i += std::fabs(res.statistic);
    }
    REQUIRE(sum_abs_i / reps < 2.0 / std::sqrt(100.0));
}

TEST_CASE("sar validates weights style and islands") {
    const auto inst = grid_instance(6, 6, 0.0, 1.0, 8);
    const auto binary = build_contiguity(inst.frame, {});
    REQUIRE_THROWS_AS(fit_spatial_error(inst.frame, k_spec, binary), data_error);
}

TEST_CASE("sar aic uses p + 2 parameters") {
    const auto inst = grid_instance(8, 8, 0.4, 1.0, 99);
    const auto fit = fit_spatial_error(inst.frame, k_spec, inst.weights);
    REQUIRE_THAT(fit.aic, Catch::Matchers::WithinAbs(
                              2.0 * (fit.p + 2.0) - 2.0 * fit.log_likelihood, 1e-10));
    REQUIRE(fit.lr_statistic >= -1e-8);
    const std::string s = summarize(fit);
    REQUIRE_THAT(s, Catch::Matchers::ContainsSubstring("Lambda: "));
    REQUIRE_THAT(s, Catch::Matchers::ContainsSubstring("LR test value: "));
}
