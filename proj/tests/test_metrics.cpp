#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "datseg/metrics.hpp"
#include "datseg/scenegen.hpp"
#include "test_util.hpp"

using namespace datseg;
using namespace datseg::testutil;

static LabeledScene scene_with_labels(const std::vector<long>& gt, long k, Rng& rng) {
    LabeledScene s;
    long n = static_cast<long>(gt.size());
    s.cloud.coords = random_array({n, 3}, rng, 0, 4);
    s.cloud.feats = random_array({n, 4}, rng, 0, 1);
    s.gt_classes = gt;
    s.num_classes = k;
    // one instance per contiguous class run keeps validate() happy
    long inst = -1;
    long prev = -1;
    for (long c : gt) {
        if (c != prev) ++inst;
        s.instance_ids.push_back(inst);
        prev = c;
    }
    s.validate();
    return s;
}

TEST_CASE("perfect prediction scores miou one") {
    Rng rng(1);
    LabeledScene s = scene_with_labels({0, 0, 1, 1, 2, 2, 2}, 3, rng);
    Metrics m = compute_metrics({s.gt_classes}, {&s}, 3);
    CHECK(m.miou == doctest::Approx(1.0).epsilon(1e-12));
    for (long c = 0; c < 3; ++c) CHECK(m.iou[static_cast<size_t>(c)] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("single-class prediction on a balanced two-class set scores a quarter") {
    Rng rng(2);
    LabeledScene s = scene_with_labels({0, 0, 0, 0, 1, 1, 1, 1}, 2, rng);
    std::vector<long> pred(8, 0);
    Metrics m = compute_metrics({pred}, {&s}, 2);
    // class 0: I=4, U=8 -> 0.5; class 1: I=0, U=4 -> 0
    CHECK(m.iou[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(m.iou[1] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(m.miou == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("classes absent from ground truth and prediction are excluded") {
    Rng rng(3);
    LabeledScene s = scene_with_labels({0, 0, 1, 1}, 4, rng);
    Metrics m = compute_metrics({{0, 0, 1, 1}}, {&s}, 4);
    CHECK(std::isnan(m.iou[2]));
    CHECK(std::isnan(m.iou[3]));
    CHECK(m.miou == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("random confusion matches the set-arithmetic oracle") {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        long n = 30 + rng.uniform_int(100), k = 2 + rng.uniform_int(5);
        std::vector<long> gt, pred;
        for (long i = 0; i < n; ++i) {
            gt.push_back(rng.uniform_int(k));
            pred.push_back(rng.uniform_int(k));
        }
        // contiguous-instance constraint: sort gt so equal classes group up
        std::sort(gt.begin(), gt.end());
        LabeledScene s = scene_with_labels(gt, k, rng);
        Metrics m = compute_metrics({pred}, {&s}, k);

        double acc = 0;
        long present = 0;
        for (long c = 0; c < k; ++c) {
            std::set<long> gs, ps;
            for (long i = 0; i < n; ++i) {
                if (gt[static_cast<size_t>(i)] == c) gs.insert(i);
                if (pred[static_cast<size_t>(i)] == c) ps.insert(i);
            }
            std::set<long> inter, uni;
            std::set_intersection(gs.begin(), gs.end(), ps.begin(), ps.end(), std::inserter(inter, inter.end()));
            std::set_union(gs.begin(), gs.end(), ps.begin(), ps.end(), std::inserter(uni, uni.end()));
            CHECK(m.intersection[static_cast<size_t>(c)] == static_cast<long>(inter.size()));
            CHECK(m.unions[static_cast<size_t>(c)] == static_cast<long>(uni.size()));
            if (!gs.empty()) {
                acc += static_cast<double>(inter.size()) / static_cast<double>(uni.size());
                ++present;
            }
        }
        CHECK(std::abs(m.miou - acc / present) < 1e-12);
    }
}

TEST_CASE("metrics accumulate across scenes before dividing") {
    Rng rng(5);
    LabeledScene s1 = scene_with_labels({0, 0, 1, 1}, 2, rng);
    LabeledScene s2 = scene_with_labels({0, 1, 1, 1}, 2, rng);
    // scene 1 perfect, scene 2 all-zero prediction
    Metrics m = compute_metrics({{0, 0, 1, 1}, {0, 0, 0, 0}}, {&s1, &s2}, 2);
    // class 0: I = 2+1, U = 2+4; class 1: I = 2+0, U = 2+3
    CHECK(m.iou[0] == doctest::Approx(3.0 / 6.0).epsilon(1e-12));
    CHECK(m.iou[1] == doctest::Approx(2.0 / 5.0).epsilon(1e-12));
}

TEST_CASE("evaluate runs the model and matches manual prediction metrics") {
    SceneSpec spec;
    spec.n_points = 256;
    auto dataset = generate_dataset(spec, 3, 9);
    Rng rng(6);
    ModelParams params = ModelParams::init(4, 6, rng, 8, 8);

    Metrics ev = evaluate(dataset, params);
    std::vector<std::vector<long>> preds;
    std::vector<const LabeledScene*> ptrs;
    for (const auto& s : dataset) {
        preds.push_back(predict_labels(forward_values(s.cloud, params)));
        ptrs.push_back(&s);
    }
    Metrics man = compute_metrics(preds, ptrs, 6);
    CHECK(ev.miou == doctest::Approx(man.miou).epsilon(1e-12));
    for (size_t c = 0; c < 6; ++c) CHECK(ev.intersection[c] == man.intersection[c]);
}

TEST_CASE("evaluate rejects dimension mismatches") {
    SceneSpec spec;
    spec.n_points = 128;
    auto dataset = generate_dataset(spec, 1, 10);
    Rng rng(7);
    ModelParams wrong = ModelParams::init(7, 6, rng, 8, 8);  // feat_dim 7 vs scene 4
    CHECK_THROWS_AS(evaluate(dataset, wrong), std::invalid_argument);
}
