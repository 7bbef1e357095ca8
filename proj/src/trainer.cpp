#include "datseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

namespace datseg {

const char* branch_name(Branch b) {
    switch (b) {
        case Branch::kSegOnly: return "seg";
        case Branch::kLap: return "lap";
        case Branch::kRad: return "rad";
        case Branch::kNoise: return "noise";
    }
    return "?";
}

void TrainConfig::validate() const {
    if (alpha < 0 || beta < 0) throw std::invalid_argument("TrainConfig: alpha/beta must be non-negative");
    if (lr <= 0) throw std::invalid_argument("TrainConfig: lr must be positive");
    if (batch_scenes < 1) throw std::invalid_argument("TrainConfig: batch_scenes must be >= 1");
    if (steps < 0) throw std::invalid_argument("TrainConfig: negative step count");
    if (branch_prob < 0 || branch_prob > 1) throw std::invalid_argument("TrainConfig: branch_prob outside [0,1]");
    lap.validate();
    rad.validate();
}

std::string TrainConfig::dump() const {
    std::ostringstream os;
    os << "alpha=" << alpha << " beta=" << beta << " lr=" << lr << " batch_scenes=" << batch_scenes
       << " steps=" << steps << " branch_prob=" << branch_prob << " use_lap=" << use_lap << " use_rad=" << use_rad
       << " use_cpg=" << use_cpg << " perturb_coords=" << perturb_coords << " both_branches=" << both_branches
       << " noise_baseline=" << static_cast<int>(noise_baseline) << " seed=" << seed << " xi_c=" << lap.xi_c
       << " xi_f=" << lap.xi_f << " eps_c=" << lap.eps_c << " eps_f=" << lap.eps_f << " xi_a=" << rad.xi_a
       << " eps_a=" << rad.eps_a << " cell_size=" << rad.cell_size;
    return os.str();
}

namespace {

struct GradAccum {
    std::vector<Array> grads;
    void add(const std::vector<Array>& g) {
        if (grads.empty()) {
            grads = g;
        } else {
            for (size_t i = 0; i < grads.size(); ++i)
                for (long j = 0; j < grads[i].size(); ++j)
                    grads[i].v[static_cast<size_t>(j)] += g[i].v[static_cast<size_t>(j)];
        }
    }
};

Branch pick_branch(const TrainConfig& cfg, Rng& rng) {
    if (cfg.noise_baseline != NoiseBaseline::kOff) return Branch::kNoise;
    bool lap_on = cfg.use_lap && cfg.alpha > 0;
    bool rad_on = cfg.use_rad && cfg.beta > 0;
    if (lap_on && rad_on) return rng.bernoulli(cfg.branch_prob) ? Branch::kLap : Branch::kRad;
    if (lap_on) return Branch::kLap;
    if (rad_on) return Branch::kRad;
    return Branch::kSegOnly;
}

struct SceneLosses {
    double l_seg = 0, l_lc = 0, l_rc = 0, l_total = 0;
};

/// Losses + parameter gradients for one scene under the chosen branch.
SceneLosses scene_step(const LabeledScene& scene, const WeakLabels& weak, TrainState& state,
                       const TrainConfig& cfg, Branch branch, const SuperpointPartition* partition, Rng& rng,
                       std::vector<Array>& out_grads) {
    bool run_lap = branch == Branch::kLap || (cfg.both_branches && branch != Branch::kNoise && cfg.use_lap && cfg.alpha > 0);
    bool run_rad = branch == Branch::kRad || (cfg.both_branches && branch != Branch::kNoise && cfg.use_rad && cfg.beta > 0);
    bool run_noise = branch == Branch::kNoise;

    Graph g;
    auto fn = forward(g, scene.cloud, state.params, false, true);

    // adversarial examples are produced outside the training graph; the
    // consistency gradient flows only through the transformed branch. The
    // clean logits already computed above double as the generators' target.
    std::optional<PerturbedCloud> lap_cloud;
    std::optional<RadResult> rad_result;
    const Array* clean_logits = run_lap || run_rad ? &g.value(fn.logits) : nullptr;
    if (run_lap) {
        if (cfg.use_cpg) {
            std::vector<long> pseudo = predict_labels(*clean_logits);
            state.tracker.update(scene.cloud.feats, pseudo);
        }
        lap_cloud = generate_lap(scene.cloud, state.params, cfg.lap, state.tracker, rng, nullptr, cfg.use_cpg,
                                 cfg.perturb_coords, clean_logits);
    }
    if (run_rad) rad_result = generate_rad(scene.cloud, *partition, state.params, cfg.rad, rng, nullptr, clean_logits);
    if (run_noise) {
        double ec = cfg.noise_baseline != NoiseBaseline::kFeats ? cfg.lap.eps_c : 0.0;
        double ef = cfg.noise_baseline != NoiseBaseline::kCoords ? cfg.lap.eps_f : 0.0;
        lap_cloud = generate_noise(scene.cloud, ec, ef, rng);
    }
    auto l_seg = g.cross_entropy_sparse(fn.logits, weak);
    auto total = l_seg;
    auto target = g.detach(g.softmax_rows(fn.logits));

    SceneLosses losses;
    losses.l_seg = g.value(l_seg).v[0];
    auto consistency = [&](const Array& coords, const Array& feats) {
        auto c = g.leaf(coords, false);
        auto f = g.leaf(feats, false);
        auto logits = forward_on_nodes(g, c, f, fn.params, state.params.knn_k);
        return g.kl_divergence_rows(target, g.log_softmax_rows(logits));
    };
    if (lap_cloud) {
        auto l_lc = consistency(lap_cloud->coords, lap_cloud->feats);
        losses.l_lc = g.value(l_lc).v[0];
        total = g.add(total, g.scale(l_lc, cfg.alpha));
    }
    if (rad_result) {
        auto l_rc = consistency(rad_result->coords, scene.cloud.feats);
        losses.l_rc = g.value(l_rc).v[0];
        total = g.add(total, g.scale(l_rc, cfg.beta));
    }
    losses.l_total = g.value(total).v[0];

    auto grads = g.backward(total);
    out_grads.clear();
    for (auto id : fn.params) out_grads.push_back(grads.at(id));
    return losses;
}

StepReport batch_step(const std::vector<const LabeledScene*>& scenes, const std::vector<const WeakLabels*>& weaks,
                      TrainState& state, const TrainConfig& cfg,
                      const std::vector<const SuperpointPartition*>& partitions, Rng& rng) {
    Branch branch = pick_branch(cfg, rng);
    GradAccum accum;
    SceneLosses mean{};
    std::vector<Array> grads;
    for (size_t s = 0; s < scenes.size(); ++s) {
        SceneLosses l = scene_step(*scenes[s], *weaks[s], state, cfg, branch, partitions[s], rng, grads);
        accum.add(grads);
        mean.l_seg += l.l_seg;
        mean.l_lc += l.l_lc;
        mean.l_rc += l.l_rc;
        mean.l_total += l.l_total;
    }
    double inv = 1.0 / static_cast<double>(scenes.size());
    mean.l_seg *= inv;
    mean.l_lc *= inv;
    mean.l_rc *= inv;
    mean.l_total *= inv;
    if (!std::isfinite(mean.l_total))
        throw TrainAbort("non-finite loss at step " + std::to_string(state.step) + " [" + cfg.dump() + "]");

    auto fields = ModelParams::fields();
    for (size_t i = 0; i < fields.size(); ++i) {
        Array& p = state.params.*(fields[i].second);
        const Array& grad = accum.grads[i];
        for (long j = 0; j < p.size(); ++j)
            p.v[static_cast<size_t>(j)] -= cfg.lr * inv * grad.v[static_cast<size_t>(j)];
    }

    StepReport rep;
    rep.step = state.step;
    rep.branch = branch;
    rep.l_seg = mean.l_seg;
    rep.l_lc = mean.l_lc;
    rep.l_rc = mean.l_rc;
    rep.l_total = mean.l_total;
    ++state.step;
    return rep;
}

}  // namespace

StepReport train_step(const LabeledScene& scene, const WeakLabels& weak, TrainState& state,
                      const TrainConfig& config, Rng& rng) {
    config.validate();
    SuperpointPartition part;
    bool need_partition = config.use_rad && config.beta > 0 && config.noise_baseline == NoiseBaseline::kOff;
    if (need_partition) part = partition_superpoints(scene.cloud, config.rad.cell_size);
    return batch_step({&scene}, {&weak}, state, config, {need_partition ? &part : nullptr}, rng);
}

TrainResult train(const std::vector<LabeledScene>& dataset, const std::vector<WeakLabels>& weak_labels,
                  const TrainConfig& config, const std::vector<LabeledScene>* validation) {
    config.validate();
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
    if (dataset.size() != weak_labels.size())
        throw std::invalid_argument("train: weak label count does not match scene count");
    long kc = dataset.front().num_classes;
    long df = dataset.front().cloud.feat_dim();
    for (const auto& s : dataset)
        if (s.num_classes != kc || s.cloud.feat_dim() != df)
            throw std::invalid_argument("train: scenes disagree on class count or feature dim");

    Rng rng(derive_seed(config.seed, 0xda7));
    TrainState state(ModelParams::init(df, kc, rng), kc);

    // superpoint partitions are deterministic per scene; compute once
    std::vector<SuperpointPartition> partitions;
    bool need_partition = config.use_rad && config.beta > 0 && config.noise_baseline == NoiseBaseline::kOff;
    if (need_partition)
        for (const auto& s : dataset) partitions.push_back(partition_superpoints(s.cloud, config.rad.cell_size));

    TrainResult result;
    std::vector<long> order(dataset.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<long>(i);
    size_t cursor = order.size();  // forces an initial shuffle

    for (long step = 0; step < config.steps; ++step) {
        std::vector<const LabeledScene*> batch;
        std::vector<const WeakLabels*> weaks;
        std::vector<const SuperpointPartition*> parts;
        for (long b = 0; b < config.batch_scenes; ++b) {
            if (cursor >= order.size()) {
                for (size_t i = order.size(); i > 1; --i)
                    std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(static_cast<long>(i)))]);
                cursor = 0;
            }
            long idx = order[cursor++];
            batch.push_back(&dataset[static_cast<size_t>(idx)]);
            weaks.push_back(&weak_labels[static_cast<size_t>(idx)]);
            parts.push_back(need_partition ? &partitions[static_cast<size_t>(idx)] : nullptr);
        }
        StepReport rep = batch_step(batch, weaks, state, config, parts, rng);
        result.log.push_back({rep, config.lr});
        if (validation && config.val_every > 0 && (step + 1) % config.val_every == 0)
            result.validations.emplace_back(step + 1, evaluate(*validation, state.params));
    }
    result.params = state.params;
    return result;
}

}  // namespace datseg
