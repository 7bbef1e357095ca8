#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "datseg/metrics.hpp"
#include "datseg/rad.hpp"
#include "datseg/trainer.hpp"

namespace datseg {

// Scene files are ASCII: line 1 "DATSEG v1"; line 2 "points N feat_dim D
// classes K"; then N lines "x y z f1 .. fD class instance". Values carry 17
// significant digits so write -> read -> write is byte-identical.
void write_scene(const std::filesystem::path& path, const LabeledScene& scene);
LabeledScene read_scene(const std::filesystem::path& path);

// Weak labels: one "index class" line per entry.
void write_weak_labels(const std::filesystem::path& path, const WeakLabels& labels);
WeakLabels read_weak_labels(const std::filesystem::path& path);

struct Manifest {
    long num_scenes = 0;
    long num_classes = 0;
    long feat_dim = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> scene_files;  // relative to the manifest directory
};
void write_manifest(const std::filesystem::path& path, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& path);
std::vector<LabeledScene> load_dataset(const std::filesystem::path& manifest_path);

// Checkpoint: magic + version, then named sections of shape + little-endian
// IEEE-754 doubles. knn k and layer dims travel in a "meta" section.
void write_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams read_checkpoint(const std::filesystem::path& path);

// Flat "key = value" config with '#' comments. Unknown keys are rejected.
struct ConfigError : std::runtime_error {
    int line;
    ConfigError(int line_, const std::string& msg)
        : std::runtime_error("line " + std::to_string(line_) + ": " + msg), line(line_) {}
};
struct ConfigEntry {
    int line;
    std::string key, value;
};
std::vector<ConfigEntry> parse_config_file(const std::filesystem::path& path);
std::vector<ConfigEntry> parse_config_text(const std::string& text);
/// Applies entries onto a TrainConfig; throws ConfigError on unknown keys or
/// malformed values.
void apply_config(TrainConfig& cfg, const std::vector<ConfigEntry>& entries);

void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& rows);
void write_metrics_report(const std::filesystem::path& path, const Metrics& m);

/// ASCII PLY with per-vertex colors (region id hashing or perturbation
/// magnitude ramp, chosen by the caller via the color array).
void write_ply(const std::filesystem::path& path, const Array& coords, const std::vector<std::array<int, 3>>& colors);

std::vector<std::array<int, 3>> region_colors(const SuperpointPartition& partition);
std::vector<std::array<int, 3>> magnitude_colors(const Array& original, const Array& transformed);

}  // namespace datseg
