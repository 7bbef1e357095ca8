#pragma once

#include "datseg/annotation.hpp"

namespace datseg {

/// Synthetic indoor room: floor + walls + primitive objects with dense class
/// and instance labels. Class ids, in order: floor, wall, box, sphere,
/// cylinder, clutter (truncated when k_classes < 6).
struct SceneSpec {
    long n_points = 2048;
    long k_classes = 6;
    double room_x = 6.0, room_y = 6.0, room_z = 3.0;  // meters
    long min_instances = 1, max_instances = 2;        // per object class
    double noise_sigma = 0.01;                        // surface jitter, meters
    void validate() const;
};

LabeledScene generate_scene(const SceneSpec& spec, Rng& rng);

/// Scene i uses a seed derived from (seed, i); fully deterministic.
std::vector<LabeledScene> generate_dataset(const SceneSpec& spec, long n_scenes, std::uint64_t seed);

}  // namespace datseg
