#include "datseg/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace datseg {

void SceneSpec::validate() const {
    if (n_points < 64) throw std::invalid_argument("SceneSpec: need at least 64 points");
    if (k_classes < 2 || k_classes > 6) throw std::invalid_argument("SceneSpec: k_classes must be in [2, 6]");
    if (room_x <= 0 || room_y <= 0 || room_z <= 0) throw std::invalid_argument("SceneSpec: extents must be positive");
    if (min_instances < 0 || max_instances < min_instances)
        throw std::invalid_argument("SceneSpec: bad instance range");
    if (noise_sigma < 0) throw std::invalid_argument("SceneSpec: negative noise sigma");
}

namespace {

enum ClassId { kFloor = 0, kWall = 1, kBox = 2, kSphere = 3, kCylinder = 4, kClutter = 5 };

struct ColorModel {
    double mean[3];
    double l[3][3];  // covariance factor; Sigma = L L^T, distinct per class
};

// Separated class means with class-distinct covariance structure: per-point
// color carries real class signal (so feature-robust solutions exist) while
// the spreads overlap enough that geometry still matters, and the per-class
// covariances stay measurably different.
const ColorModel kColors[6] = {
    {{0.10, 0.10, 0.12}, {{0.05, 0, 0}, {0, 0.04, 0}, {0, 0, 0.03}}},
    {{0.92, 0.92, 0.90}, {{0.09, 0, 0}, {0.08, 0.03, 0}, {0.08, 0.01, 0.03}}},
    {{0.88, 0.12, 0.12}, {{0.06, 0, 0}, {0, 0.10, 0}, {0, 0.05, 0.08}}},
    {{0.12, 0.12, 0.88}, {{0.02, 0, 0}, {0, 0.03, 0}, {0, 0, 0.12}}},
    {{0.12, 0.88, 0.12}, {{0.10, 0, 0}, {0.09, 0.03, 0}, {0, 0, 0.03}}},
    {{0.50, 0.50, 0.50}, {{0.15, 0, 0}, {0, 0.15, 0}, {0, 0, 0.15}}},
};

// relative point budget per class
const double kClassWeight[6] = {0.28, 0.24, 0.14, 0.14, 0.12, 0.08};

struct Instance {
    long class_id;
    // geometry parameters; meaning depends on class
    double cx = 0, cy = 0, cz = 0;
    double ax = 0, ay = 0, az = 0;  // half-sizes / radius / height
    double footprint = 0;           // xy bounding radius, 0 = no packing constraint
};

double clamp01(double x) { return std::min(1.0, std::max(0.0, x)); }

void sample_color(long cls, Rng& rng, double out[3]) {
    const ColorModel& m = kColors[cls];
    double z[3] = {rng.normal(), rng.normal(), rng.normal()};
    for (int i = 0; i < 3; ++i) {
        double v = m.mean[i];
        for (int j = 0; j < 3; ++j) v += m.l[i][j] * z[j];
        out[i] = clamp01(v);
    }
}

void sample_surface_point(const SceneSpec& spec, const Instance& inst, Rng& rng, double p[3]) {
    switch (inst.class_id) {
        case kFloor:
            p[0] = rng.uniform(0, spec.room_x);
            p[1] = rng.uniform(0, spec.room_y);
            p[2] = 0;
            break;
        case kWall: {
            long w = rng.uniform_int(4);
            double along = rng.uniform();
            p[2] = rng.uniform(0, spec.room_z);
            if (w == 0) { p[0] = 0; p[1] = along * spec.room_y; }
            else if (w == 1) { p[0] = spec.room_x; p[1] = along * spec.room_y; }
            else if (w == 2) { p[1] = 0; p[0] = along * spec.room_x; }
            else { p[1] = spec.room_y; p[0] = along * spec.room_x; }
            break;
        }
        case kBox: {
            double hx = inst.ax, hy = inst.ay, hz = inst.az;
            double areas[3] = {hy * hz, hx * hz, hx * hy};  // face pair areas (relative)
            double total = areas[0] + areas[1] + areas[2];
            double u = rng.uniform() * total;
            int axis = u < areas[0] ? 0 : (u < areas[0] + areas[1] ? 1 : 2);
            double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
            double local[3] = {rng.uniform(-hx, hx), rng.uniform(-hy, hy), rng.uniform(-hz, hz)};
            local[axis] = sign * (axis == 0 ? hx : axis == 1 ? hy : hz);
            p[0] = inst.cx + local[0];
            p[1] = inst.cy + local[1];
            p[2] = inst.cz + local[2];
            break;
        }
        case kSphere: {
            double v[3] = {rng.normal(), rng.normal(), rng.normal()};
            double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
            if (n == 0) { v[0] = 1; n = 1; }
            p[0] = inst.cx + inst.ax * v[0] / n;
            p[1] = inst.cy + inst.ax * v[1] / n;
            p[2] = inst.cz + inst.ax * v[2] / n;
            break;
        }
        case kCylinder: {
            double r = inst.ax, h = inst.az;
            double lateral = 2 * r * h;  // relative to cap area 2 * r^2 (pi cancels; caps ~ r^2 each)
            double caps = 2 * r * r;
            double theta = rng.uniform(0, 6.283185307179586);
            if (rng.uniform() * (lateral + caps) < lateral) {
                p[0] = inst.cx + r * std::cos(theta);
                p[1] = inst.cy + r * std::sin(theta);
                p[2] = rng.uniform(0, h);
            } else {
                double rr = r * std::sqrt(rng.uniform());
                p[0] = inst.cx + rr * std::cos(theta);
                p[1] = inst.cy + rr * std::sin(theta);
                p[2] = rng.bernoulli(0.5) ? h : 0.0;
            }
            break;
        }
        default: {  // clutter blob
            p[0] = inst.cx + 0.30 * rng.normal();
            p[1] = inst.cy + 0.30 * rng.normal();
            p[2] = inst.cz + 0.30 * rng.normal();
            p[0] = std::min(spec.room_x, std::max(0.0, p[0]));
            p[1] = std::min(spec.room_y, std::max(0.0, p[1]));
            p[2] = std::min(spec.room_z, std::max(0.0, p[2]));
        }
    }
}

}  // namespace

LabeledScene generate_scene(const SceneSpec& spec, Rng& rng) {
    spec.validate();

    std::vector<Instance> instances;
    instances.push_back({kFloor});
    if (spec.k_classes > kWall) instances.push_back({kWall});

    std::vector<Instance> placed;  // packing constraint applies to objects only
    auto place = [&](Instance inst) {
        const int kMaxRetries = 100;
        double margin = inst.footprint + 0.1;
        for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
            inst.cx = rng.uniform(margin, spec.room_x - margin);
            inst.cy = rng.uniform(margin, spec.room_y - margin);
            bool ok = true;
            for (const auto& other : placed) {
                double dx = inst.cx - other.cx, dy = inst.cy - other.cy;
                double lim = inst.footprint + other.footprint;
                if (dx * dx + dy * dy < lim * lim) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                placed.push_back(inst);
                instances.push_back(inst);
                return;
            }
        }
        throw std::runtime_error("generate_scene: infeasible packing after bounded retries");
    };

    for (long cls = kBox; cls < spec.k_classes; ++cls) {
        long count = spec.min_instances +
                     (spec.max_instances > spec.min_instances
                          ? rng.uniform_int(spec.max_instances - spec.min_instances + 1)
                          : 0);
        for (long c = 0; c < count; ++c) {
            Instance inst;
            inst.class_id = cls;
            switch (cls) {
                case kBox:
                    inst.ax = rng.uniform(0.5, 0.9);
                    inst.ay = rng.uniform(0.5, 0.9);
                    inst.az = rng.uniform(0.5, 0.9);
                    inst.cz = inst.az;  // resting on the floor
                    inst.footprint = std::sqrt(inst.ax * inst.ax + inst.ay * inst.ay);
                    place(inst);
                    break;
                case kSphere:
                    inst.ax = rng.uniform(0.5, 0.8);
                    inst.cz = rng.uniform(inst.ax, 1.5);
                    inst.footprint = inst.ax;
                    place(inst);
                    break;
                case kCylinder:
                    inst.ax = rng.uniform(0.35, 0.6);
                    inst.az = rng.uniform(1.2, 2.4);
                    inst.footprint = inst.ax;
                    place(inst);
                    break;
                default:  // clutter: no packing constraint
                    inst.cx = rng.uniform(0.3, spec.room_x - 0.3);
                    inst.cy = rng.uniform(0.3, spec.room_y - 0.3);
                    inst.cz = rng.uniform(0.1, 2.0);
                    instances.push_back(inst);
            }
        }
    }

    // point budget per instance: class weights split across the class's
    // instances, every instance gets at least one point, exact total
    long n_inst = static_cast<long>(instances.size());
    std::vector<long> per_class_count(6, 0);
    for (const auto& inst : instances) ++per_class_count[static_cast<size_t>(inst.class_id)];
    double weight_sum = 0;
    for (long cls = 0; cls < spec.k_classes; ++cls)
        if (per_class_count[static_cast<size_t>(cls)] > 0) weight_sum += kClassWeight[cls];
    std::vector<double> share(static_cast<size_t>(n_inst));
    for (long i = 0; i < n_inst; ++i) {
        long cls = instances[static_cast<size_t>(i)].class_id;
        share[static_cast<size_t>(i)] =
            kClassWeight[cls] / weight_sum / static_cast<double>(per_class_count[static_cast<size_t>(cls)]);
    }
    std::vector<long> budget(static_cast<size_t>(n_inst), 1);
    long assigned = n_inst;
    std::vector<std::pair<double, long>> remainder(static_cast<size_t>(n_inst));
    for (long i = 0; i < n_inst; ++i) {
        double exact = share[static_cast<size_t>(i)] * static_cast<double>(spec.n_points);
        long whole = std::max<long>(1, static_cast<long>(std::floor(exact)));
        assigned += whole - budget[static_cast<size_t>(i)];
        budget[static_cast<size_t>(i)] = whole;
        remainder[static_cast<size_t>(i)] = {exact - std::floor(exact), i};
    }
    std::sort(remainder.rbegin(), remainder.rend());
    long q = 0;
    while (assigned < spec.n_points) {
        ++budget[static_cast<size_t>(remainder[static_cast<size_t>(q % n_inst)].second)];
        ++assigned;
        ++q;
    }
    while (assigned > spec.n_points) {
        long i = remainder[static_cast<size_t>(q % n_inst)].second;
        if (budget[static_cast<size_t>(i)] > 1) {
            --budget[static_cast<size_t>(i)];
            --assigned;
        }
        ++q;
    }

    LabeledScene scene;
    scene.num_classes = spec.k_classes;
    scene.cloud.coords = Array({spec.n_points, 3});
    scene.cloud.feats = Array({spec.n_points, 4});
    scene.gt_classes.resize(static_cast<size_t>(spec.n_points));
    scene.instance_ids.resize(static_cast<size_t>(spec.n_points));
    long row = 0;
    for (long i = 0; i < n_inst; ++i) {
        const auto& inst = instances[static_cast<size_t>(i)];
        for (long b = 0; b < budget[static_cast<size_t>(i)]; ++b, ++row) {
            double p[3], color[3];
            sample_surface_point(spec, inst, rng, p);
            for (int j = 0; j < 3; ++j) p[j] += spec.noise_sigma * rng.normal();
            sample_color(inst.class_id, rng, color);
            for (int j = 0; j < 3; ++j) scene.cloud.coords.at(row, j) = p[j];
            for (int j = 0; j < 3; ++j) scene.cloud.feats.at(row, j) = color[j];
            scene.cloud.feats.at(row, 3) = std::max(0.0, p[2]);  // height above floor
            scene.gt_classes[static_cast<size_t>(row)] = inst.class_id;
            scene.instance_ids[static_cast<size_t>(row)] = i;
        }
    }
    scene.validate();
    return scene;
}

std::vector<LabeledScene> generate_dataset(const SceneSpec& spec, long n_scenes, std::uint64_t seed) {
    if (n_scenes < 1) throw std::invalid_argument("generate_dataset: need at least one scene");
    std::vector<LabeledScene> out;
    out.reserve(static_cast<size_t>(n_scenes));
    for (long i = 0; i < n_scenes; ++i) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        out.push_back(generate_scene(spec, rng));
    }
    return out;
}

}  // namespace datseg
