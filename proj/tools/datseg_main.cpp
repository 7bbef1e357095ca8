#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "datseg/io.hpp"
#include "datseg/scenegen.hpp"

namespace fs = std::filesystem;
using namespace datseg;

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
    return h;
}

std::string scene_filename(long i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%04ld.scene", i);
    return buf;
}

/// Weak labels are a fixed annotation pass per dataset: derived from the
/// manifest seed (not the training seed) and persisted next to the scenes.
std::vector<WeakLabels> load_or_make_weak_labels(const fs::path& data_dir, const Manifest& manifest,
                                                 const std::vector<LabeledScene>& scenes,
                                                 const std::string& scheme) {
    std::vector<WeakLabels> out;
    for (size_t i = 0; i < scenes.size(); ++i) {
        fs::path weak_path = data_dir / (manifest.scene_files[i] + "." + scheme + ".weak");
        if (fs::exists(weak_path)) {
            out.push_back(read_weak_labels(weak_path));
            continue;
        }
        Rng rng(derive_seed(manifest.seed ^ 0x3ea1ULL ^ fnv1a(scheme), i));
        WeakLabels w;
        if (scheme == "otoc") w = sample_otoc(scenes[i], rng);
        else if (scheme == "ottc") w = sample_ottc(scenes[i], rng);
        else if (scheme == "points20") w = sample_fixed_k(scenes[i], rng, 20);
        else throw std::runtime_error("unknown label scheme '" + scheme + "'");
        write_weak_labels(weak_path, w);
        out.push_back(std::move(w));
    }
    return out;
}

int cmd_gen_data(const fs::path& out_dir, long n_scenes, long n_points, long k_classes, std::uint64_t seed) {
    SceneSpec spec;
    spec.n_points = n_points;
    spec.k_classes = k_classes;
    fs::create_directories(out_dir);
    auto scenes = generate_dataset(spec, n_scenes, seed);
    Manifest m;
    m.num_scenes = n_scenes;
    m.num_classes = k_classes;
    m.feat_dim = 4;
    m.seed = seed;
    for (long i = 0; i < n_scenes; ++i) {
        m.scene_files.push_back(scene_filename(i));
        write_scene(out_dir / m.scene_files.back(), scenes[static_cast<size_t>(i)]);
    }
    write_manifest(out_dir / "manifest.txt", m);
    std::cout << "wrote " << n_scenes << " scenes to " << out_dir << "\n";
    return 0;
}

struct TrainArgs {
    std::string data_dir, labels = "otoc", config_file, out_ckpt, log_file;
    bool no_lap = false, no_rad = false, no_cpg = false, no_coord_perturb = false, both_branches = false;
    std::string noise_baseline = "off";
    std::uint64_t seed = 0;
    long steps = -1;
    std::string val_data;
};

TrainConfig make_train_config(const TrainArgs& a) {
    TrainConfig cfg;
    if (!a.config_file.empty()) apply_config(cfg, parse_config_file(a.config_file));
    if (a.no_lap) cfg.use_lap = false;
    if (a.no_rad) cfg.use_rad = false;
    if (a.no_cpg) cfg.use_cpg = false;
    if (a.no_coord_perturb) cfg.perturb_coords = false;
    if (a.both_branches) cfg.both_branches = true;
    apply_config(cfg, {{0, "noise_baseline", a.noise_baseline}});
    cfg.seed = a.seed;
    if (a.steps >= 0) cfg.steps = a.steps;
    return cfg;
}

int cmd_train(const TrainArgs& a) {
    TrainConfig cfg = make_train_config(a);
    fs::path data_dir(a.data_dir);
    Manifest manifest = read_manifest(data_dir / "manifest.txt");
    auto scenes = load_dataset(data_dir / "manifest.txt");
    auto weak = load_or_make_weak_labels(data_dir, manifest, scenes, a.labels);

    std::vector<LabeledScene> val;
    if (!a.val_data.empty()) val = load_dataset(fs::path(a.val_data) / "manifest.txt");

    TrainResult result = train(scenes, weak, cfg, val.empty() ? nullptr : &val);
    write_checkpoint(a.out_ckpt, result.params);
    fs::path log = a.log_file.empty() ? fs::path(a.out_ckpt + ".log.csv") : fs::path(a.log_file);
    write_train_log(log, result.log);
    if (!result.validations.empty()) {
        std::ofstream vf(a.out_ckpt + ".val.csv");
        vf << "step,miou\n";
        char buf[32];
        for (auto& [step, m] : result.validations) {
            std::snprintf(buf, sizeof buf, "%.17g", m.miou);
            vf << step << ',' << buf << "\n";
        }
    }
    std::cout << "checkpoint " << a.out_ckpt << " after " << cfg.steps << " steps\n";
    return 0;
}

int cmd_eval(const std::string& data_dir, const std::string& ckpt, const std::string& report) {
    if (!fs::exists(ckpt)) {
        std::cerr << "missing checkpoint: " << ckpt << "\n";
        return 2;
    }
    auto scenes = load_dataset(fs::path(data_dir) / "manifest.txt");
    ModelParams params = read_checkpoint(ckpt);
    Metrics m = evaluate(scenes, params);
    write_metrics_report(report, m);
    std::cout << "mIoU " << m.miou << "\n";
    return 0;
}

int cmd_ablate(const std::string& data_dir, const std::string& labels, const std::vector<std::string>& grid,
               const std::string& out_dir, std::uint64_t seed, long steps, const std::string& eval_data) {
    // parse KEY=V1,V2,... specs into a Cartesian grid
    std::vector<std::pair<std::string, std::vector<std::string>>> axes;
    for (const auto& spec : grid) {
        auto eq = spec.find('=');
        if (eq == std::string::npos) throw std::runtime_error("bad --grid spec '" + spec + "'");
        std::vector<std::string> values;
        std::string rest = spec.substr(eq + 1);
        size_t pos = 0;
        while (pos != std::string::npos) {
            auto comma = rest.find(',', pos);
            values.push_back(rest.substr(pos, comma == std::string::npos ? comma : comma - pos));
            pos = comma == std::string::npos ? comma : comma + 1;
        }
        axes.emplace_back(spec.substr(0, eq), values);
    }
    fs::create_directories(out_dir);
    Manifest manifest = read_manifest(fs::path(data_dir) / "manifest.txt");
    auto scenes = load_dataset(fs::path(data_dir) / "manifest.txt");
    auto weak = load_or_make_weak_labels(data_dir, manifest, scenes, labels);
    std::vector<LabeledScene> eval_scenes;
    if (!eval_data.empty()) eval_scenes = load_dataset(fs::path(eval_data) / "manifest.txt");

    std::ofstream summary(fs::path(out_dir) / "summary.csv");
    for (const auto& [key, values] : axes) {
        (void)values;
        summary << key << ',';
    }
    summary << "miou\n";

    std::vector<size_t> idx(axes.size(), 0);
    long cell = 0;
    while (true) {
        TrainConfig cfg;
        std::vector<ConfigEntry> entries;
        for (size_t a = 0; a < axes.size(); ++a)
            entries.push_back({static_cast<int>(a + 1), axes[a].first, axes[a].second[idx[a]]});
        apply_config(cfg, entries);
        cfg.seed = seed;
        if (steps >= 0) cfg.steps = steps;
        TrainResult result = train(scenes, weak, cfg);
        Metrics m = evaluate(eval_scenes.empty() ? scenes : eval_scenes, result.params);
        fs::path cell_dir = fs::path(out_dir) / ("cell_" + std::to_string(cell));
        fs::create_directories(cell_dir);
        write_checkpoint(cell_dir / "model.ckpt", result.params);
        write_train_log(cell_dir / "train_log.csv", result.log);
        write_metrics_report(cell_dir / "report.csv", m);
        for (size_t a = 0; a < axes.size(); ++a) summary << axes[a].second[idx[a]] << ',';
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", m.miou);
        summary << buf << "\n";
        ++cell;
        size_t a = 0;
        for (; a < axes.size(); ++a) {
            if (++idx[a] < axes[a].second.size()) break;
            idx[a] = 0;
        }
        if (a == axes.size()) break;
    }
    std::cout << "ablation grid of " << cell << " cells written to " << out_dir << "\n";
    return 0;
}

int cmd_inspect(const std::string& scene_file, const std::string& ckpt, const std::string& emit_lap,
                const std::string& emit_rad, const std::string& emit_superpoints, std::uint64_t seed) {
    if (!fs::exists(ckpt)) {
        std::cerr << "missing checkpoint: " << ckpt << "\n";
        return 2;
    }
    LabeledScene scene = read_scene(scene_file);
    ModelParams params = read_checkpoint(ckpt);
    Rng rng(seed);
    RadConfig rad_cfg;
    auto partition = partition_superpoints(scene.cloud, rad_cfg.cell_size);
    if (!emit_superpoints.empty()) write_ply(emit_superpoints, scene.cloud.coords, region_colors(partition));
    if (!emit_lap.empty()) {
        ClassCovarianceTracker tracker(scene.num_classes, scene.cloud.feat_dim());
        tracker.update(scene.cloud.feats, predict_labels(forward_values(scene.cloud, params)));
        LapConfig lap_cfg;
        auto lap = generate_lap(scene.cloud, params, lap_cfg, tracker, rng);
        write_ply(emit_lap, lap.coords, magnitude_colors(scene.cloud.coords, lap.coords));
    }
    if (!emit_rad.empty()) {
        auto rad = generate_rad(scene.cloud, partition, params, rad_cfg, rng);
        write_ply(emit_rad, rad.coords, magnitude_colors(scene.cloud.coords, rad.coords));
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"weakly supervised point cloud segmentation with dual adaptive transformations"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic labeled dataset");
    std::string gen_out;
    long gen_scenes = 50, gen_points = 2048, gen_classes = 6;
    std::uint64_t gen_seed = 0;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--scenes", gen_scenes, "number of scenes");
    gen->add_option("--points", gen_points, "points per scene");
    gen->add_option("--classes", gen_classes, "number of classes (2-6)");
    gen->add_option("--seed", gen_seed, "dataset seed");

    // train
    auto* tr = app.add_subcommand("train", "train a model on weak labels");
    TrainArgs ta;
    tr->add_option("--data", ta.data_dir, "data directory with manifest")->required();
    tr->add_option("--labels", ta.labels, "otoc|ottc|points20");
    tr->add_option("--config", ta.config_file, "flat key=value config file");
    tr->add_option("--out", ta.out_ckpt, "output checkpoint")->required();
    tr->add_option("--log", ta.log_file, "training log CSV (default <out>.log.csv)");
    tr->add_option("--val-data", ta.val_data, "validation data directory");
    tr->add_flag("--no-lap", ta.no_lap, "disable local adaptive perturbation");
    tr->add_flag("--no-rad", ta.no_rad, "disable regional adaptive deformation");
    tr->add_flag("--no-cpg", ta.no_cpg, "iid feature directions instead of class-aware");
    tr->add_flag("--no-coord-perturb", ta.no_coord_perturb, "feature-only perturbation");
    tr->add_flag("--both-branches", ta.both_branches, "run both consistency branches every step");
    tr->add_option("--noise-baseline", ta.noise_baseline, "off|coords|feats|both");
    tr->add_option("--seed", ta.seed, "training seed");
    tr->add_option("--steps", ta.steps, "override step count");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ev_data, ev_ckpt, ev_report;
    ev->add_option("--data", ev_data, "data directory")->required();
    ev->add_option("--ckpt", ev_ckpt, "checkpoint file")->required();
    ev->add_option("--report", ev_report, "per-class IoU report CSV")->required();

    // ablate
    auto* ab = app.add_subcommand("ablate", "run a Cartesian config grid");
    std::string ab_data, ab_labels = "otoc", ab_out, ab_eval;
    std::vector<std::string> ab_grid;
    std::uint64_t ab_seed = 0;
    long ab_steps = -1;
    ab->add_option("--data", ab_data, "data directory")->required();
    ab->add_option("--labels", ab_labels, "otoc|ottc|points20");
    ab->add_option("--grid", ab_grid, "KEY=V1,V2,... (repeatable)")->required();
    ab->add_option("--out", ab_out, "output directory")->required();
    ab->add_option("--eval-data", ab_eval, "held-out data for the summary mIoU");
    ab->add_option("--seed", ab_seed, "training seed");
    ab->add_option("--steps", ab_steps, "override step count");

    // inspect
    auto* in = app.add_subcommand("inspect", "export transformed examples as PLY");
    std::string in_scene, in_ckpt, in_lap, in_rad, in_sp;
    std::uint64_t in_seed = 0;
    in->add_option("--scene", in_scene, "scene file")->required();
    in->add_option("--ckpt", in_ckpt, "checkpoint file")->required();
    in->add_option("--emit-lap", in_lap, "PLY path for the perturbed cloud");
    in->add_option("--emit-rad", in_rad, "PLY path for the deformed cloud");
    in->add_option("--emit-superpoints", in_sp, "PLY path for the partition");
    in->add_option("--seed", in_seed, "rng seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(gen_out, gen_scenes, gen_points, gen_classes, gen_seed);
        if (tr->parsed()) return cmd_train(ta);
        if (ev->parsed()) return cmd_eval(ev_data, ev_ckpt, ev_report);
        if (ab->parsed()) return cmd_ablate(ab_data, ab_labels, ab_grid, ab_out, ab_seed, ab_steps, ab_eval);
        if (in->parsed()) return cmd_inspect(in_scene, in_ckpt, in_lap, in_rad, in_sp, in_seed);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const TrainAbort& e) {
        std::cerr << "training aborted: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
