#pragma once

#include <vector>

#include "datseg/backbone.hpp"
#include "datseg/rng.hpp"

namespace datseg {

struct LabeledScene {
    PointCloud cloud;
    std::vector<long> gt_classes;    // N, in [0, K_c)
    std::vector<long> instance_ids;  // N, contiguous per scene
    long num_classes = 0;
    void validate() const;
    long num_instances() const;
};

/// One uniformly chosen point per object instance ("one thing one click").
WeakLabels sample_otoc(const LabeledScene& scene, Rng& rng);

/// min(3, instance size) distinct points per instance ("one thing three clicks").
WeakLabels sample_ottc(const LabeledScene& scene, Rng& rng);

/// k distinct points uniformly over the whole scene.
WeakLabels sample_fixed_k(const LabeledScene& scene, Rng& rng, long k = 20);

}  // namespace datseg
