#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <set>

#include "datseg/scenegen.hpp"
#include "test_util.hpp"

using namespace datseg;

TEST_CASE("spec with no objects yields floor and wall only") {
    SceneSpec spec;
    spec.min_instances = 0;
    spec.max_instances = 0;
    Rng rng(1);
    LabeledScene s = generate_scene(spec, rng);
    s.validate();
    CHECK(s.num_instances() == 2);
    std::set<long> classes(s.gt_classes.begin(), s.gt_classes.end());
    CHECK(classes == std::set<long>{0, 1});  // floor, wall
}

TEST_CASE("point count is exact and invariants hold") {
    SceneSpec spec;
    for (long n : {64L, 500L, 2048L}) {
        spec.n_points = n;
        Rng rng(static_cast<std::uint64_t>(n));
        LabeledScene s = generate_scene(spec, rng);
        s.validate();
        CHECK(s.cloud.n() == n);
        CHECK(s.cloud.feat_dim() == 4);
        CHECK(s.num_classes == 6);
    }
}

TEST_CASE("height channel is non-negative and near zero on the floor") {
    SceneSpec spec;
    Rng rng(2);
    LabeledScene s = generate_scene(spec, rng);
    for (long i = 0; i < s.cloud.n(); ++i) {
        double h = s.cloud.feats.at(i, 3);
        CHECK(h >= 0.0);
        if (s.gt_classes[static_cast<size_t>(i)] == 0) CHECK(h <= 5 * spec.noise_sigma);
    }
}

TEST_CASE("rgb features stay in the unit interval") {
    SceneSpec spec;
    Rng rng(3);
    LabeledScene s = generate_scene(spec, rng);
    for (long i = 0; i < s.cloud.n(); ++i)
        for (long c = 0; c < 3; ++c) {
            CHECK(s.cloud.feats.at(i, c) >= 0.0);
            CHECK(s.cloud.feats.at(i, c) <= 1.0);
        }
}

TEST_CASE("per-class color covariances differ pairwise") {
    SceneSpec spec;
    spec.n_points = 4096;
    // aggregate several scenes so every class has plenty of samples
    std::vector<std::vector<std::array<double, 3>>> samples(6);
    for (int sc = 0; sc < 6; ++sc) {
        Rng rng(100 + static_cast<std::uint64_t>(sc));
        LabeledScene s = generate_scene(spec, rng);
        for (long i = 0; i < s.cloud.n(); ++i)
            samples[static_cast<size_t>(s.gt_classes[static_cast<size_t>(i)])].push_back(
                {s.cloud.feats.at(i, 0), s.cloud.feats.at(i, 1), s.cloud.feats.at(i, 2)});
    }
    std::vector<std::array<double, 9>> covs;
    for (auto& cls : samples) {
        REQUIRE(cls.size() > 50);
        double mean[3] = {0, 0, 0};
        for (auto& s : cls)
            for (int d = 0; d < 3; ++d) mean[d] += s[static_cast<size_t>(d)];
        for (double& m : mean) m /= static_cast<double>(cls.size());
        std::array<double, 9> cov{};
        for (auto& s : cls)
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b)
                    cov[static_cast<size_t>(3 * a + b)] +=
                        (s[static_cast<size_t>(a)] - mean[a]) * (s[static_cast<size_t>(b)] - mean[b]);
        for (double& x : cov) x /= static_cast<double>(cls.size() - 1);
        covs.push_back(cov);
    }
    for (size_t a = 0; a < covs.size(); ++a)
        for (size_t b = a + 1; b < covs.size(); ++b) {
            double frob = 0;
            for (int j = 0; j < 9; ++j) {
                double t = covs[a][static_cast<size_t>(j)] - covs[b][static_cast<size_t>(j)];
                frob += t * t;
            }
            INFO("classes ", a, " vs ", b);
            CHECK(std::sqrt(frob) > 0.01);
        }
}

TEST_CASE("datasets are deterministic and scenes pairwise different") {
    SceneSpec spec;
    spec.n_points = 256;
    auto d1 = generate_dataset(spec, 5, 42);
    auto d2 = generate_dataset(spec, 5, 42);
    REQUIRE(d1.size() == 5);
    for (size_t i = 0; i < 5; ++i) {
        CHECK(d1[i].cloud.coords.v == d2[i].cloud.coords.v);
        CHECK(d1[i].cloud.feats.v == d2[i].cloud.feats.v);
        CHECK(d1[i].gt_classes == d2[i].gt_classes);
    }
    for (size_t a = 0; a < 5; ++a)
        for (size_t b = a + 1; b < 5; ++b) CHECK(d1[a].cloud.coords.v != d1[b].cloud.coords.v);
}

TEST_CASE("a 50-scene default set generates in well under a minute") {
    SceneSpec spec;
    auto start = std::chrono::steady_clock::now();
    auto d = generate_dataset(spec, 50, 7);
    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
    CHECK(d.size() == 50);
    CHECK(ms < 60000);
}

TEST_CASE("spec validation rejects degenerate settings") {
    SceneSpec spec;
    spec.n_points = 10;  // below the minimum
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
    spec = SceneSpec{};
    spec.room_x = -1;
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}
