#include "catuda/errors.hpp"
#include "catuda/eval.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

using namespace catuda;

TEST_CASE("accuracy counting") {
    Matrix p(4, 2);
    p << 0.9, 0.1, 0.2, 0.8, 0.6, 0.4, 0.3, 0.7;
    const std::vector<int> truth{0, 1, 0, 1};
    CHECK(accuracy(p, truth) == 1.0);
    CHECK(accuracy(p, std::vector<int>{1, 0, 1, 0}) == 0.0);
    CHECK(accuracy(p, std::vector<int>{0, 1, 1, 1}) == 0.75);
    CHECK_THROWS_AS(accuracy(p, std::vector<int>{0, 1}), ShapeError);

    Matrix tie(1, 3);
    tie << 0.4, 0.4, 0.2;
    CHECK(argmax_rows(tie) == std::vector<int>{0});
}

TEST_CASE("kmeans: one point per cluster") {
    std::mt19937_64 rng(2);
    const Matrix pts = oracle::random_matrix(6, 2, rng);
    const auto r = kmeans(pts, 6, 1);
    CHECK(r.inertia == 0.0);
    CHECK(std::set<int>(r.assignments.begin(), r.assignments.end()).size() == 6);
    CHECK_THROWS_AS(kmeans(pts, 7, 1), ParameterError);
}

TEST_CASE("kmeans: well separated blobs and determinism") {
    std::mt19937_64 rng(3);
    Matrix pts = oracle::random_matrix(60, 2, rng, 0.1);
    for (Eigen::Index i = 30; i < 60; ++i) pts(i, 0) += 50.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto r = kmeans(pts, 2, seed);
        for (Eigen::Index i = 1; i < 30; ++i) CHECK(r.assignments[static_cast<std::size_t>(i)] == r.assignments[0]);
        for (Eigen::Index i = 31; i < 60; ++i) CHECK(r.assignments[static_cast<std::size_t>(i)] == r.assignments[30]);
        CHECK(r.assignments[0] != r.assignments[30]);
        CHECK(r.assignments == kmeans(pts, 2, seed).assignments);
    }
}

TEST_CASE("kmeans: inertia never increases across Lloyd iterations") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix pts = oracle::random_matrix(80, 3, rng);
        const auto r = kmeans(pts, 5, static_cast<std::uint64_t>(trial));
        for (std::size_t i = 1; i < r.inertia_history.size(); ++i) {
            CHECK(r.inertia_history[i] <= r.inertia_history[i - 1] + 1e-12);
        }
        const auto best = kmeans_restarts(pts, 5, static_cast<std::uint64_t>(trial));
        for (std::uint64_t k = 0; k < 5; ++k) {
            CHECK(best.inertia <= kmeans(pts, 5, derive_seed(static_cast<std::uint64_t>(trial), {k})).inertia);
        }
    }
}

TEST_CASE("cluster accuracy by majority labeling") {
    CHECK(cluster_accuracy(std::vector<int>{0, 0, 1, 1}, std::vector<int>{1, 1, 0, 0}) == 1.0);
    CHECK(cluster_accuracy(std::vector<int>{0, 0, 0, 1}, std::vector<int>{0, 0, 1, 1}) == 0.75);
    CHECK(cluster_accuracy(std::vector<int>{0, 0, 0, 0}, std::vector<int>{0, 1, 0, 1}) == 0.5);
    CHECK_THROWS_AS(cluster_accuracy(std::vector<int>{0}, std::vector<int>{0, 1}), ShapeError);

    // Never below the majority class frequency.
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const auto a = oracle::random_labels(50, 4, rng);
        const auto y = oracle::random_labels(50, 3, rng);
        std::size_t best = 0;
        for (int c = 0; c < 3; ++c) best = std::max(best, static_cast<std::size_t>(std::count(y.begin(), y.end(), c)));
        CHECK(cluster_accuracy(a, y) >= static_cast<double>(best) / 50.0);
    }
}

TEST_CASE("JSD proxy limits") {
    CHECK(jsd_proxy(-2.0 * std::numbers::ln2) == doctest::Approx(0.0).epsilon(1e-15));
    // Critic saturated at the clamp: log(1 - 1e-12) twice.
    const double saturated = 2.0 * std::log1p(-1e-12);
    CHECK(jsd_proxy(saturated) == doctest::Approx(std::numbers::ln2).epsilon(1e-11));
    CHECK(jsd_proxy(-1.0) < jsd_proxy(-0.5));
}

TEST_CASE("selection rate uses a strict threshold") {
    CHECK(selection_rate(std::vector<double>(5, 1.0), 0.9) == 1.0);
    CHECK(selection_rate(std::vector<double>(5, 0.9), 0.9) == 0.0);
    CHECK(selection_rate(std::vector<double>{0.95, 0.5, 0.99, 0.1}, 0.9) == 0.5);
}

TEST_CASE("dataset CSV dump") {
    Matrix sx(2, 2), tx(1, 2);
    sx << 0.5, -1.0, 2.0, 3.25;
    tx << 1.0, 0.0;
    const DomainDataset ds(sx, {0, 1}, tx, {1}, 2);
    std::ostringstream os;
    write_dataset_csv(os, ds);
    CHECK(os.str() == "domain,class,x0,x1\nsource,0,0.5,-1\nsource,1,2,3.25\ntarget,1,1,0\n");
}
