#pragma once

#include <optional>
#include <string>

#include "datseg/lap.hpp"
#include "datseg/metrics.hpp"
#include "datseg/rad.hpp"

namespace datseg {

enum class NoiseBaseline { kOff, kCoords, kFeats, kBoth };

enum class Branch { kSegOnly, kLap, kRad, kNoise };

const char* branch_name(Branch b);

struct TrainConfig {
    double alpha = 2.0;
    double beta = 2.0;
    double lr = 0.01;
    long batch_scenes = 2;
    long steps = 200;
    double branch_prob = 0.5;  // probability of the LAP branch when both are on
    bool use_lap = true;
    bool use_rad = true;
    bool use_cpg = true;
    bool perturb_coords = true;
    bool both_branches = false;  // ablation mode: run LAP and RAD every step
    NoiseBaseline noise_baseline = NoiseBaseline::kOff;
    std::uint64_t seed = 0;
    long val_every = 50;
    LapConfig lap;
    RadConfig rad;
    void validate() const;
    std::string dump() const;
};

struct TrainState {
    ModelParams params;
    ClassCovarianceTracker tracker;
    long step = 0;
    TrainState(ModelParams p, long num_classes)
        : params(std::move(p)), tracker(num_classes, params.feat_dim()) {}
};

struct StepReport {
    long step = 0;
    Branch branch = Branch::kSegOnly;
    double l_seg = 0, l_lc = 0, l_rc = 0, l_total = 0;
};

struct TrainLogRow {
    StepReport report;
    double lr = 0;
};

/// Raised when the loss goes non-finite; carries the step and config dump.
struct TrainAbort : std::runtime_error {
    explicit TrainAbort(const std::string& msg) : std::runtime_error(msg) {}
};

/// One SGD step on one scene. L_seg always; one consistency branch per the
/// config (LAP with probability branch_prob, else RAD; disabled modules force
/// the other; both disabled is the pure baseline).
StepReport train_step(const LabeledScene& scene, const WeakLabels& weak, TrainState& state,
                      const TrainConfig& config, Rng& rng);

struct TrainResult {
    ModelParams params;
    std::vector<TrainLogRow> log;
    std::vector<std::pair<long, Metrics>> validations;
};

TrainResult train(const std::vector<LabeledScene>& dataset, const std::vector<WeakLabels>& weak_labels,
                  const TrainConfig& config,
                  const std::vector<LabeledScene>* validation = nullptr);

}  // namespace datseg
