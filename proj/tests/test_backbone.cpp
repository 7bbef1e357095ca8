#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <limits>
#include <numeric>

#include "datseg/backbone.hpp"
#include "test_util.hpp"

using namespace datseg;
using namespace datseg::testutil;

static PointCloud random_cloud(long n, long df, Rng& rng, double extent = 4.0) {
    PointCloud c;
    c.coords = Array({n, 3});
    c.feats = Array({n, df});
    for (double& x : c.coords.v) x = rng.uniform(0, extent);
    for (double& x : c.feats.v) x = rng.uniform(0, 1);
    return c;
}

TEST_CASE("knn on collinear points") {
    Array coords = Array::from({3, 3}, {0, 0, 0, 1, 0, 0, 5, 0, 0});
    auto nn = knn_index(coords, 2);
    CHECK(std::vector<long>(nn[0].begin(), nn[0].end()) == std::vector<long>{0, 1});
}

TEST_CASE("knn with k=1 returns self") {
    Rng rng(1);
    Array coords = random_array({10, 3}, rng, 0, 5);
    auto nn = knn_index(coords, 1);
    for (long i = 0; i < 10; ++i) {
        REQUIRE(nn[static_cast<size_t>(i)].size() == 1);
        CHECK(nn[static_cast<size_t>(i)][0] == i);
    }
}

TEST_CASE("knn matches exhaustive sort oracle on 64 points") {
    Rng rng(2);
    Array coords = random_array({64, 3}, rng, 0, 6);
    auto nn = knn_index(coords, 8);
    for (long i = 0; i < 64; ++i) {
        std::vector<std::pair<double, long>> dist;
        for (long j = 0; j < 64; ++j) {
            double d = 0;
            for (long c = 0; c < 3; ++c) {
                double t = coords.at(i, c) - coords.at(j, c);
                d += t * t;
            }
            dist.push_back({d, j});
        }
        std::sort(dist.begin(), dist.end());
        std::vector<long> expect;
        for (int q = 0; q < 8; ++q) expect.push_back(dist[static_cast<size_t>(q)].second);
        CHECK(nn[static_cast<size_t>(i)] == expect);
    }
}

TEST_CASE("knn rejects k larger than the cloud") {
    Array coords({4, 3});
    CHECK_THROWS_AS(knn_index(coords, 5), std::invalid_argument);
}

TEST_CASE("zero parameters give uniform predictions") {
    Rng rng(3);
    PointCloud cloud = random_cloud(20, 4, rng);
    ModelParams params = ModelParams::init(4, 6, rng);
    for (auto [name, member] : ModelParams::fields()) {
        (void)name;
        for (double& x : (params.*member).v) x = 0.0;
    }
    Array logits = forward_values(cloud, params);
    Array probs = predict_probabilities(logits);
    for (double p : probs.v) CHECK(p == doctest::Approx(1.0 / 6).epsilon(1e-12));
}

TEST_CASE("permuting the points permutes the logits rows") {
    Rng rng(4);
    PointCloud cloud = random_cloud(40, 4, rng);
    ModelParams params = ModelParams::init(4, 5, rng);
    Array base = forward_values(cloud, params);

    std::vector<long> perm(40);
    std::iota(perm.begin(), perm.end(), 0);
    for (long i = 39; i > 0; --i) std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(rng.uniform_int(i + 1))]);

    PointCloud shuffled;
    shuffled.coords = Array({40, 3});
    shuffled.feats = Array({40, 4});
    for (long i = 0; i < 40; ++i)
        for (long c = 0; c < 3; ++c) shuffled.coords.at(i, c) = cloud.coords.at(perm[static_cast<size_t>(i)], c);
    for (long i = 0; i < 40; ++i)
        for (long c = 0; c < 4; ++c) shuffled.feats.at(i, c) = cloud.feats.at(perm[static_cast<size_t>(i)], c);

    Array out = forward_values(shuffled, params);
    for (long i = 0; i < 40; ++i)
        for (long c = 0; c < 5; ++c)
            CHECK(out.at(i, c) == doctest::Approx(base.at(perm[static_cast<size_t>(i)], c)).epsilon(1e-12));
}

TEST_CASE("forward gradients match finite differences for inputs and parameters") {
    Rng rng(5);
    double worst = 0;
    for (int trial = 0; trial < 3; ++trial) {
        PointCloud cloud = random_cloud(10, 4, rng);
        ModelParams params = ModelParams::init(4, 3, rng, 6, 6, 3);
        Array w = random_array({10, 3}, rng);

        Graph g;
        auto nodes = forward(g, cloud, params, true, true);
        auto loss = g.sum(g.mul(nodes.logits, g.leaf(w, false)));
        auto grads = g.backward(loss);

        auto eval = [&](const PointCloud& cl, const ModelParams& pp) {
            // random well-separated points keep the knn structure stable
            // under the 1e-5 FD step, so FD probes the differentiated path
            Graph h;
            auto cn = h.leaf(cl.coords, false);
            auto fn = h.leaf(cl.feats, false);
            auto pn = register_params(h, pp, false);
            auto lg = forward_on_nodes(h, cn, fn, pn, pp.knn_k);
            double acc = 0;
            const Array& L = h.value(lg);
            for (long q = 0; q < L.size(); ++q) acc += L.v[static_cast<size_t>(q)] * w.v[static_cast<size_t>(q)];
            return acc;
        };

        double step = 1e-5;
        auto fd_vs = [&](double a, double n) {
            double scale = std::max({1.0, std::abs(a), std::abs(n)});
            worst = std::max(worst, std::abs(a - n) / scale);
        };
        // coordinates and features
        for (Graph::NodeId leaf_id : {nodes.coords, nodes.feats}) {
            const Array& ga = grads.at(leaf_id);
            Array& target = (leaf_id == nodes.coords) ? cloud.coords : cloud.feats;
            for (long j = 0; j < target.size(); ++j) {
                double saved = target.v[static_cast<size_t>(j)];
                target.v[static_cast<size_t>(j)] = saved + step;
                double fp = eval(cloud, params);
                target.v[static_cast<size_t>(j)] = saved - step;
                double fm = eval(cloud, params);
                target.v[static_cast<size_t>(j)] = saved;
                fd_vs(ga.v[static_cast<size_t>(j)], (fp - fm) / (2 * step));
            }
        }
        // a sample of parameter tensors
        auto fields = ModelParams::fields();
        for (size_t f = 0; f < fields.size(); ++f) {
            const Array& ga = grads.at(nodes.params[f]);
            Array& target = params.*(fields[f].second);
            for (long j = 0; j < target.size(); ++j) {
                double saved = target.v[static_cast<size_t>(j)];
                target.v[static_cast<size_t>(j)] = saved + step;
                double fp = eval(cloud, params);
                target.v[static_cast<size_t>(j)] = saved - step;
                double fm = eval(cloud, params);
                target.v[static_cast<size_t>(j)] = saved;
                fd_vs(ga.v[static_cast<size_t>(j)], (fp - fm) / (2 * step));
            }
        }
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("prediction tie rule and fixed rows") {
    Array logits = Array::from({2, 3}, {0, 0, 0, 1, 5, 2});
    Array probs = predict_probabilities(logits);
    for (long j = 0; j < 3; ++j) CHECK(probs.at(0, j) == doctest::Approx(1.0 / 3).epsilon(1e-12));
    auto labels = predict_labels(logits);
    CHECK(labels[0] == 0);
    CHECK(labels[1] == 1);
}

TEST_CASE("argmax matches a linear-scan oracle on random logits") {
    Rng rng(6);
    Array logits = random_array({50, 7}, rng, -3, 3);
    auto labels = predict_labels(logits);
    for (long i = 0; i < 50; ++i) {
        long best = 0;
        for (long j = 1; j < 7; ++j)
            if (logits.at(i, j) > logits.at(i, best)) best = j;
        CHECK(labels[static_cast<size_t>(i)] == best);
    }
}

TEST_CASE("probability rows sum to one") {
    Rng rng(7);
    Array probs = predict_probabilities(random_array({30, 6}, rng, -20, 20));
    for (long i = 0; i < 30; ++i) {
        double s = 0;
        for (long j = 0; j < 6; ++j) s += probs.at(i, j);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("cloud validation rejects mismatched rows and non-finite values") {
    PointCloud c;
    c.coords = Array({4, 3});
    c.feats = Array({3, 4});
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.feats = Array({4, 4});
    c.coords.v[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}
