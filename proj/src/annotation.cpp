#include "datseg/annotation.hpp"

#include <algorithm>
#include <unordered_map>

namespace datseg {

void LabeledScene::validate() const {
    cloud.validate();
    long n = cloud.n();
    if (static_cast<long>(gt_classes.size()) != n || static_cast<long>(instance_ids.size()) != n)
        throw std::invalid_argument("LabeledScene: label arrays do not match point count");
    long ninst = num_instances();
    std::vector<long> inst_class(static_cast<size_t>(ninst), -1);
    std::vector<long> inst_count(static_cast<size_t>(ninst), 0);
    for (long i = 0; i < n; ++i) {
        long c = gt_classes[static_cast<size_t>(i)];
        long inst = instance_ids[static_cast<size_t>(i)];
        if (c < 0 || c >= num_classes) throw std::invalid_argument("LabeledScene: class out of range");
        if (inst < 0 || inst >= ninst) throw std::invalid_argument("LabeledScene: instance id out of range");
        auto k = static_cast<size_t>(inst);
        if (inst_class[k] == -1) inst_class[k] = c;
        if (inst_class[k] != c) throw std::invalid_argument("LabeledScene: instance spans multiple classes");
        ++inst_count[k];
    }
    for (long count : inst_count)
        if (count == 0) throw std::invalid_argument("LabeledScene: empty instance id (ids must be contiguous)");
}

long LabeledScene::num_instances() const {
    long mx = -1;
    for (long id : instance_ids) mx = std::max(mx, id);
    return mx + 1;
}

namespace {

std::vector<std::vector<long>> points_by_instance(const LabeledScene& scene) {
    std::vector<std::vector<long>> groups(static_cast<size_t>(scene.num_instances()));
    for (long i = 0; i < scene.cloud.n(); ++i)
        groups[static_cast<size_t>(scene.instance_ids[static_cast<size_t>(i)])].push_back(i);
    return groups;
}

}  // namespace

WeakLabels sample_otoc(const LabeledScene& scene, Rng& rng) {
    WeakLabels out;
    for (const auto& pts : points_by_instance(scene)) {
        long i = pts[static_cast<size_t>(rng.uniform_int(static_cast<long>(pts.size())))];
        out.entries.emplace_back(i, scene.gt_classes[static_cast<size_t>(i)]);
    }
    return out;
}

WeakLabels sample_ottc(const LabeledScene& scene, Rng& rng) {
    WeakLabels out;
    for (auto pts : points_by_instance(scene)) {
        long take = std::min<long>(3, static_cast<long>(pts.size()));
        // partial Fisher-Yates for `take` distinct picks
        for (long q = 0; q < take; ++q) {
            long r = q + rng.uniform_int(static_cast<long>(pts.size()) - q);
            std::swap(pts[static_cast<size_t>(q)], pts[static_cast<size_t>(r)]);
            long i = pts[static_cast<size_t>(q)];
            out.entries.emplace_back(i, scene.gt_classes[static_cast<size_t>(i)]);
        }
    }
    return out;
}

WeakLabels sample_fixed_k(const LabeledScene& scene, Rng& rng, long k) {
    long n = scene.cloud.n();
    if (n < k)
        throw std::invalid_argument("sample_fixed_k: scene has " + std::to_string(n) + " points, need " +
                                    std::to_string(k));
    std::vector<long> idx(static_cast<size_t>(n));
    for (long i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    WeakLabels out;
    for (long q = 0; q < k; ++q) {
        long r = q + rng.uniform_int(n - q);
        std::swap(idx[static_cast<size_t>(q)], idx[static_cast<size_t>(r)]);
        long i = idx[static_cast<size_t>(q)];
        out.entries.emplace_back(i, scene.gt_classes[static_cast<size_t>(i)]);
    }
    return out;
}

}  // namespace datseg
