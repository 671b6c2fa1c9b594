#include <catch_amalgamated.hpp>

#include "spatreg/weights.hpp"

#include "helpers.hpp"
#include "oracles.hpp"

using namespace spatreg;

namespace {

std::vector<std::size_t> neighbour_indices(const weights_matrix& W, std::size_t i) {
    std::vector<std::size_t> out;
    for (const auto& nb : W.row(i)) out.push_back(nb.index);
    return out;
}

} // namespace

TEST_CASE("build_knn on three collinear points, k = 1") {
    const auto f = testutil::make_frame({0, 1, 3}, {0, 0, 0}, {}, {});
    const auto W = build_knn(f, 1);
    REQUIRE(neighbour_indices(W, 0) == std::vector<std::size_t>{1});
    REQUIRE(neighbour_indices(W, 1) == std::vector<std::size_t>{0});
    REQUIRE(neighbour_indices(W, 2) == std::vector<std::size_t>{1});
    REQUIRE(W.style() == weights_style::binary);
    REQUIRE(W.islands().empty());
}

TEST_CASE("build_knn with k = n-1 gives the complete graph minus self-loops") {
    const auto f = testutil::random_frame(8, {}, 11);
    const auto W = build_knn(f, 7);
    for (std::size_t i = 0; i < 8; ++i) {
        REQUIRE(W.row(i).size() == 7);
        for (const auto& nb : W.row(i)) REQUIRE(nb.index != i);
    }
}

TEST_CASE("build_knn matches the exhaustive distance-sort oracle") {
    const auto f = testutil::random_frame(10, {}, 21);
    const auto W = build_knn(f, 3);
    for (std::size_t i = 0; i < 10; ++i)
        REQUIRE(neighbour_indices(W, i) == oracle::knn_bruteforce(f.locations(), i, 3));
}

TEST_CASE("build_knn rejects out-of-range k") {
    const auto f = testutil::random_frame(5, {}, 3);
    REQUIRE_THROWS_AS(build_knn(f, 0), data_error);
    REQUIRE_THROWS_AS(build_knn(f, 5), data_error);
}

TEST_CASE("knn rows each hold k entries dominating every non-neighbour (n = 200)") {
    const auto f = testutil::random_frame(200, {}, 77);
    const std::size_t k = 6;
    const auto W = build_knn(f, k);
    const arma::mat& xy = f.locations();
    for (std::size_t i = 0; i < f.n(); ++i) {
        REQUIRE(W.row(i).size() == k);
        REQUIRE(neighbour_indices(W, i) == oracle::knn_bruteforce(xy, i, k));
        double worst = 0.0;
        std::vector<bool> is_nb(f.n(), false);
        for (const auto& nb : W.row(i)) {
            is_nb[nb.index] = true;
            worst = std::max(worst, detail::sq_dist(xy, i, nb.index));
        }
        for (std::size_t j = 0; j < f.n(); ++j)
            if (j != i && !is_nb[j]) REQUIRE(detail::sq_dist(xy, i, j) >= worst);
    }
}

TEST_CASE("build_contiguity marks absent units as islands") {
    const auto f = testutil::make_frame({0, 1, 2}, {0, 0, 0}, {}, {});
    // ids are u0, u1, u2
    const auto W = build_contiguity(f, {{"u0", "u1"}});
    REQUIRE(W.islands() == std::vector<std::size_t>{2});
    REQUIRE(neighbour_indices(W, 0) == std::vector<std::size_t>{1});
    REQUIRE(neighbour_indices(W, 1) == std::vector<std::size_t>{0});
}

TEST_CASE("build_contiguity symmetrizes and deduplicates pairs") {
    const auto f = testutil::make_frame({0, 1, 2}, {0, 0, 0}, {}, {});
    const auto a = build_contiguity(f, {{"u0", "u1"}});
    const auto b = build_contiguity(f, {{"u0", "u1"}, {"u1", "u0"}});
    for (std::size_t i = 0; i < 3; ++i)
        REQUIRE(neighbour_indices(a, i) == neighbour_indices(b, i));
}

TEST_CASE("build_contiguity on a 4-ring gives two neighbours per unit") {
    const auto f = testutil::make_frame({0, 1, 1, 0}, {0, 0, 1, 1}, {}, {});
    const auto W = build_contiguity(f, {{"u0", "u1"}, {"u1", "u2"}, {"u2", "u3"}, {"u3", "u0"}});
    for (std::size_t i = 0; i < 4; ++i) REQUIRE(W.row(i).size() == 2);
    REQUIRE(W.symmetric_structure());
}

TEST_CASE("build_contiguity rejects unknown ids and self-pairs") {
    const auto f = testutil::make_frame({0, 1}, {0, 0}, {}, {});
    REQUIRE_THROWS_AS(build_contiguity(f, {{"u0", "zz"}}), data_error);
    REQUIRE_THROWS_AS(build_contiguity(f, {{"u0", "u0"}}), data_error);
}

TEST_CASE("build_distance_band on a line") {
    const auto f = testutil::make_frame({0, 1, 3}, {0, 0, 0}, {}, {});
    const auto W = build_distance_band(f, 1.5);
    REQUIRE(neighbour_indices(W, 0) == std::vector<std::size_t>{1});
    REQUIRE(neighbour_indices(W, 1) == std::vector<std::size_t>{0});
    REQUIRE(W.islands() == std::vector<std::size_t>{2});
}

TEST_CASE("distance band saturates to the complete graph at large radius") {
    const auto f = testutil::random_frame(9, {}, 5);
    const auto W = build_distance_band(f, 1e9);
    for (std::size_t i = 0; i < 9; ++i) REQUIRE(W.row(i).size() == 8);
}

TEST_CASE("distance band below the minimum spacing leaves all units islands") {
    const auto f = testutil::make_frame({0, 10, 20}, {0, 0, 0}, {}, {});
    const auto W = build_distance_band(f, 1.0);
    REQUIRE(W.islands().size() == 3);
    REQUIRE_THROWS_AS(build_distance_band(f, 0.0), data_error);
}

TEST_CASE("row_standardize divides by row sums and is idempotent") {
    const auto f = testutil::random_frame(12, {}, 9);
    const auto W = build_knn(f, 4);
    const auto R = row_standardize(W);
    REQUIRE(R.style() == weights_style::row_standardized);
    for (std::size_t i = 0; i < 12; ++i) {
        for (const auto& nb : R.row(i)) REQUIRE(nb.weight == 0.25);
        REQUIRE(std::fabs(R.row_sum(i) - 1.0) < 1e-12);
    }
    const auto RR = row_standardize(R);
    for (std::size_t i = 0; i < 12; ++i) {
        REQUIRE(RR.row(i).size() == R.row(i).size());
        for (std::size_t c = 0; c < R.row(i).size(); ++c) {
            REQUIRE(RR.row(i)[c].index == R.row(i)[c].index);
            REQUIRE(RR.row(i)[c].weight == R.row(i)[c].weight);
        }
    }
}

TEST_CASE("row_standardize leaves island rows all-zero and preserves sparsity") {
    const auto f = testutil::make_frame({0, 1, 50}, {0, 0, 0}, {}, {});
    const auto W = build_distance_band(f, 2.0);
    const auto R = row_standardize(W);
    REQUIRE(R.row(2).empty());
    REQUIRE(R.islands() == std::vector<std::size_t>{2});
    for (std::size_t i = 0; i < 3; ++i) REQUIRE(R.row(i).size() == W.row(i).size());
}

TEST_CASE("drop_islands removes island units and reports them") {
    const auto f = testutil::make_frame({0, 1, 50}, {0, 0, 0}, {}, {});
    const auto W = build_distance_band(f, 2.0);
    const auto res = drop_islands(f, W);
    REQUIRE(res.frame.n() == 2);
    REQUIRE(res.removed_ids == std::vector<std::string>{"u2"});
    REQUIRE(res.weights.islands().empty());
}

TEST_CASE("drop_islands without islands returns the inputs unchanged") {
    const auto f = testutil::make_frame({0, 1}, {0, 0}, {}, {});
    const auto W = build_knn(f, 1);
    const auto res = drop_islands(f, W);
    REQUIRE(res.frame.n() == 2);
    REQUIRE(res.removed_ids.empty());
    REQUIRE(res.kept_indices == std::vector<std::size_t>{0, 1});
}

TEST_CASE("drop_islands remaps ring adjacency consistently") {
    // 4-ring in position order plus one isolated point; remap must preserve the cycle.
    const auto f = testutil::make_frame({0, 1, 1, 0, 90}, {0, 0, 1, 1, 90}, {}, {});
    const auto W = build_contiguity(f, {{"u0", "u1"}, {"u1", "u2"}, {"u2", "u3"}, {"u3", "u0"}});
    const auto res = drop_islands(f, W);
    REQUIRE(res.frame.n() == 4);
    REQUIRE(res.removed_ids == std::vector<std::string>{"u4"});
    // Recompute the expected adjacency from the kept ids and compare.
    std::vector<std::pair<std::string, std::string>> pairs{{"u0", "u1"}, {"u1", "u2"},
                                                           {"u2", "u3"}, {"u3", "u0"}};
    const auto expected = build_contiguity(res.frame, pairs);
    for (std::size_t i = 0; i < 4; ++i)
        REQUIRE(neighbour_indices(res.weights, i) == neighbour_indices(expected, i));
}

TEST_CASE("drop_islands fails when every unit is an island") {
    const auto f = testutil::make_frame({0, 100}, {0, 0}, {}, {});
    const auto W = build_distance_band(f, 1.0);
    REQUIRE_THROWS_AS(drop_islands(f, W), data_error);
}

TEST_CASE("symmetric builders produce structurally symmetric weights") {
    const auto f = testutil::random_frame(40, {}, 13);
    const auto W = build_distance_band(f, 30.0);
    arma::mat D = W.dense();
    REQUIRE(arma::approx_equal(D, D.t(), "absdiff", 0.0));
    for (std::size_t i = 0; i < f.n(); ++i) REQUIRE(D(i, i) == 0.0);
}

TEST_CASE("weights export uses stable id ordering") {
    const auto f = testutil::make_frame({0, 1, 3}, {0, 0, 0}, {}, {});
    const auto W = build_knn(f, 1);
    const std::string text = export_weights(W, f.ids());
    REQUIRE(text ==
            "id,neighbour_id,weight\n"
            "u0,u1,1\n"
            "u1,u0,1\n"
            "u2,u1,1\n");
}

TEST_CASE("adjacency pair parsing") {
    const auto pairs = parse_adjacency_pairs("from,to\na,b\nb,c\n");
    REQUIRE(pairs.size() == 2);
    REQUIRE(pairs[0] == std::pair<std::string, std::string>{"a", "b"});
    REQUIRE_THROWS_AS(parse_adjacency_pairs("a,b,c\n1,2,3\n"), data_error);
}
