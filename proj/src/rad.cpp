#include "datseg/rad.hpp"

#include <array>
#include <cmath>
#include <map>
#include <stdexcept>
#include <tuple>

namespace datseg {

void RadConfig::validate() const {
    if (xi_a < 0 || eps_a < 0) throw std::invalid_argument("RadConfig: magnitudes must be non-negative");
    if (!use_translation && !use_scale && !use_rotation)
        throw std::invalid_argument("RadConfig: at least one transform type must be enabled");
    if (cell_size <= 0) throw std::invalid_argument("RadConfig: cell_size must be positive");
    if (ip < 1) throw std::invalid_argument("RadConfig: ip must be >= 1");
}

AffineParams AffineParams::identity(long num_regions) {
    AffineParams p;
    p.translation = Array({num_regions, 3});
    p.log_scale = Array({num_regions, 3});
    p.axis_angle = Array({num_regions, 3});
    return p;
}

SuperpointPartition partition_superpoints(const PointCloud& cloud, double cell_size) {
    cloud.validate();
    if (cell_size <= 0) throw std::invalid_argument("partition_superpoints: cell_size must be positive");
    long n = cloud.n();
    std::map<std::tuple<long, long, long>, std::vector<long>> cells;
    for (long i = 0; i < n; ++i) {
        auto key = std::make_tuple(static_cast<long>(std::floor(cloud.coords.at(i, 0) / cell_size)),
                                   static_cast<long>(std::floor(cloud.coords.at(i, 1) / cell_size)),
                                   static_cast<long>(std::floor(cloud.coords.at(i, 2) / cell_size)));
        cells[key].push_back(i);
    }
    std::vector<std::vector<long>> regions;
    regions.reserve(cells.size());
    for (auto& [key, pts] : cells) regions.push_back(std::move(pts));

    auto centroid = [&](const std::vector<long>& pts) {
        std::array<double, 3> c{0, 0, 0};
        for (long i : pts)
            for (int j = 0; j < 3; ++j) c[static_cast<size_t>(j)] += cloud.coords.at(i, j);
        for (int j = 0; j < 3; ++j) c[static_cast<size_t>(j)] /= static_cast<double>(pts.size());
        return c;
    };

    // merge undersized cells into the nearest larger region
    constexpr long kMinRegion = 5;
    std::vector<size_t> large, small;
    for (size_t r = 0; r < regions.size(); ++r)
        (static_cast<long>(regions[r].size()) >= kMinRegion ? large : small).push_back(r);
    if (large.empty()) {
        // degenerate tiny cloud: single region
        std::vector<long> all;
        for (auto& r : regions)
            for (long i : r) all.push_back(i);
        regions.clear();
        regions.push_back(std::move(all));
    } else if (!small.empty()) {
        std::vector<std::array<double, 3>> large_c;
        for (size_t r : large) large_c.push_back(centroid(regions[r]));
        for (size_t r : small) {
            auto c = centroid(regions[r]);
            size_t best = 0;
            double bestd = 1e300;
            for (size_t q = 0; q < large.size(); ++q) {
                double d = 0;
                for (int j = 0; j < 3; ++j) {
                    double dd = large_c[q][static_cast<size_t>(j)] - c[static_cast<size_t>(j)];
                    d += dd * dd;
                }
                if (d < bestd) {
                    bestd = d;
                    best = q;
                }
            }
            auto& dst = regions[large[best]];
            dst.insert(dst.end(), regions[r].begin(), regions[r].end());
            regions[r].clear();
        }
    }

    SuperpointPartition part;
    part.region_of.assign(static_cast<size_t>(n), -1);
    std::vector<std::vector<long>> kept;
    for (auto& r : regions)
        if (!r.empty()) kept.push_back(std::move(r));
    part.num_regions = static_cast<long>(kept.size());
    part.centroids = Array({part.num_regions, 3});
    for (long r = 0; r < part.num_regions; ++r) {
        auto c = centroid(kept[static_cast<size_t>(r)]);
        for (int j = 0; j < 3; ++j) part.centroids.at(r, j) = c[static_cast<size_t>(j)];
        for (long i : kept[static_cast<size_t>(r)]) part.region_of[static_cast<size_t>(i)] = r;
    }
    return part;
}

namespace {

// sin(a)/a and (1-cos a)/a^2 with series fallbacks, plus d/da terms over a
struct RotCoeffs {
    double a2, a, A, B, P, Q;  // P = A'(a)/a, Q = B'(a)/a
};

RotCoeffs rot_coeffs(const double w[3]) {
    RotCoeffs c{};
    c.a2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    c.a = std::sqrt(c.a2);
    if (c.a < 1e-4) {
        c.A = 1.0 - c.a2 / 6.0 + c.a2 * c.a2 / 120.0;
        c.B = 0.5 - c.a2 / 24.0 + c.a2 * c.a2 / 720.0;
        c.P = -1.0 / 3.0 + c.a2 / 30.0;
        c.Q = -1.0 / 12.0 + c.a2 / 180.0;
    } else {
        double s = std::sin(c.a), co = std::cos(c.a);
        c.A = s / c.a;
        c.B = (1.0 - co) / c.a2;
        c.P = (c.a * co - s) / (c.a2 * c.a);
        c.Q = (c.a * s - 2.0 * (1.0 - co)) / (c.a2 * c.a2);
    }
    return c;
}

void cross(const double a[3], const double b[3], double out[3]) {
    out[0] = a[1] * b[2] - a[2] * b[1];
    out[1] = a[2] * b[0] - a[0] * b[2];
    out[2] = a[0] * b[1] - a[1] * b[0];
}

bool identity_row(const Array& t, const Array& s, const Array& w, long r) {
    for (int j = 0; j < 3; ++j)
        if (t.at(r, j) != 0.0 || s.at(r, j) != 0.0 || w.at(r, j) != 0.0) return false;
    return true;
}

}  // namespace

Array rodrigues(const double w[3]) {
    RotCoeffs c = rot_coeffs(w);
    // R = I + A [w]x + B [w]x^2
    Array R({3, 3});
    double wx = w[0], wy = w[1], wz = w[2];
    R.at(0, 0) = 1.0 + c.B * (-(wy * wy + wz * wz));
    R.at(0, 1) = c.A * (-wz) + c.B * (wx * wy);
    R.at(0, 2) = c.A * (wy) + c.B * (wx * wz);
    R.at(1, 0) = c.A * (wz) + c.B * (wx * wy);
    R.at(1, 1) = 1.0 + c.B * (-(wx * wx + wz * wz));
    R.at(1, 2) = c.A * (-wx) + c.B * (wy * wz);
    R.at(2, 0) = c.A * (-wy) + c.B * (wx * wz);
    R.at(2, 1) = c.A * (wx) + c.B * (wy * wz);
    R.at(2, 2) = 1.0 + c.B * (-(wx * wx + wy * wy));
    return R;
}

namespace {

struct RegionXform {
    Array R;  // 3x3
    RotCoeffs rc;
    double t[3], s[3], w[3], c[3];
    bool is_identity;
};

std::vector<RegionXform> region_xforms(const SuperpointPartition& part, const AffineParams& p) {
    if (p.translation.rows() != part.num_regions || p.log_scale.rows() != part.num_regions ||
        p.axis_angle.rows() != part.num_regions)
        throw std::invalid_argument("apply_affine: params not indexed by region");
    std::vector<RegionXform> xf(static_cast<size_t>(part.num_regions));
    for (long r = 0; r < part.num_regions; ++r) {
        auto& x = xf[static_cast<size_t>(r)];
        for (int j = 0; j < 3; ++j) {
            x.t[j] = p.translation.at(r, j);
            x.s[j] = p.log_scale.at(r, j);
            x.w[j] = p.axis_angle.at(r, j);
            x.c[j] = part.centroids.at(r, j);
        }
        x.is_identity = identity_row(p.translation, p.log_scale, p.axis_angle, r);
        if (!x.is_identity) {
            x.R = rodrigues(x.w);
            x.rc = rot_coeffs(x.w);
        }
    }
    return xf;
}

Array apply_affine_values(const Array& coords, const SuperpointPartition& part, const std::vector<RegionXform>& xf) {
    long n = coords.rows();
    Array out = coords;
    for (long i = 0; i < n; ++i) {
        const auto& x = xf[static_cast<size_t>(part.region_of[static_cast<size_t>(i)])];
        if (x.is_identity) continue;  // bitwise identity for untouched regions
        double q[3], u[3];
        for (int j = 0; j < 3; ++j) q[j] = (coords.at(i, j) - x.c[j]) * std::exp(x.s[j]);
        for (int j = 0; j < 3; ++j)
            u[j] = x.R.at(j, 0) * q[0] + x.R.at(j, 1) * q[1] + x.R.at(j, 2) * q[2];
        for (int j = 0; j < 3; ++j) out.at(i, j) = u[j] + x.c[j] + x.t[j];
    }
    return out;
}

}  // namespace

Array apply_affine(const Array& coords, const SuperpointPartition& partition, const AffineParams& params) {
    return apply_affine_values(coords, partition, region_xforms(partition, params));
}

Graph::NodeId apply_affine_node(Graph& g, const Array& coords, const SuperpointPartition& partition,
                                Graph::NodeId translation, Graph::NodeId log_scale, Graph::NodeId axis_angle) {
    AffineParams p;
    p.translation = g.value(translation);
    p.log_scale = g.value(log_scale);
    p.axis_angle = g.value(axis_angle);
    auto xf = region_xforms(partition, p);
    Array value = apply_affine_values(coords, partition, xf);

    Array coords_c = coords;
    SuperpointPartition part_c = partition;
    auto bw = [coords_c, part_c, xf](const Array& gout, std::vector<Array*> gin) {
        Array* gt = gin[0];
        Array* gs = gin[1];
        Array* gw = gin[2];
        long n = coords_c.rows();
        for (long i = 0; i < n; ++i) {
            long r = part_c.region_of[static_cast<size_t>(i)];
            const auto& x = xf[static_cast<size_t>(r)];
            double go[3] = {gout.at(i, 0), gout.at(i, 1), gout.at(i, 2)};
            if (gt)
                for (int j = 0; j < 3; ++j) gt->at(r, j) += go[j];
            // recover q (pre-rotation scaled local offset) and raw offset
            double off[3], u[3];
            for (int j = 0; j < 3; ++j) off[j] = coords_c.at(i, j) - x.c[j];
            if (x.is_identity) {
                // R = I, exp(s) = 1
                if (gs)
                    for (int j = 0; j < 3; ++j) gs->at(r, j) += go[j] * off[j];
                if (gw) {
                    // d(R u)/dw_k at w=0 is e_k x u
                    double e0[3] = {1, 0, 0}, e1[3] = {0, 1, 0}, e2[3] = {0, 0, 1};
                    double cx[3];
                    cross(e0, off, cx);
                    gw->at(r, 0) += go[0] * cx[0] + go[1] * cx[1] + go[2] * cx[2];
                    cross(e1, off, cx);
                    gw->at(r, 1) += go[0] * cx[0] + go[1] * cx[1] + go[2] * cx[2];
                    cross(e2, off, cx);
                    gw->at(r, 2) += go[0] * cx[0] + go[1] * cx[1] + go[2] * cx[2];
                }
                continue;
            }
            for (int j = 0; j < 3; ++j) u[j] = off[j] * std::exp(x.s[j]);
            if (gs) {
                // d p'/d s_k = R[:,k] * exp(s_k) * off_k  =>  gs_k = (R^T go)_k * u_k
                for (int k = 0; k < 3; ++k) {
                    double rtg = x.R.at(0, k) * go[0] + x.R.at(1, k) * go[1] + x.R.at(2, k) * go[2];
                    gs->at(r, k) += rtg * u[k];
                }
            }
            if (gw) {
                // d(R u)/dw_k = P w_k (w x u) + A (e_k x u) + Q w_k (w x (w x u))
                //             + B (e_k x (w x u) + w x (e_k x u))
                double wxu[3], wxwxu[3];
                cross(x.w, u, wxu);
                cross(x.w, wxu, wxwxu);
                for (int k = 0; k < 3; ++k) {
                    double ek[3] = {0, 0, 0};
                    ek[k] = 1.0;
                    double ekxu[3], ekxwxu[3], wxekxu[3], d[3];
                    cross(ek, u, ekxu);
                    cross(ek, wxu, ekxwxu);
                    cross(x.w, ekxu, wxekxu);
                    for (int j = 0; j < 3; ++j)
                        d[j] = x.rc.P * x.w[k] * wxu[j] + x.rc.A * ekxu[j] + x.rc.Q * x.w[k] * wxwxu[j] +
                               x.rc.B * (ekxwxu[j] + wxekxu[j]);
                    gw->at(r, k) += go[0] * d[0] + go[1] * d[1] + go[2] * d[2];
                }
            }
        }
    };
    return g.custom("apply_affine", {translation, log_scale, axis_angle}, std::move(value), std::move(bw));
}

RadResult generate_rad(const PointCloud& cloud, const SuperpointPartition& partition, const ModelParams& params,
                       const RadConfig& config, Rng& rng, RadDiagnostics* diag, const Array* clean_logits) {
    config.validate();
    cloud.validate();
    long ks = partition.num_regions;

    Array p_clean = predict_probabilities(clean_logits ? *clean_logits : forward_values(cloud, params));

    auto sample_type = [&](bool enabled) {
        Array a({ks, 3});
        if (enabled) {
            for (double& x : a.v) x = rng.normal();
            normalize_rows(a);
        }
        return a;
    };
    AffineParams dir;
    dir.translation = sample_type(config.use_translation);
    dir.log_scale = sample_type(config.use_scale);
    dir.axis_angle = sample_type(config.use_rotation);

    RadDiagnostics local{};
    auto scaled = [](const Array& a, double f) {
        Array out = a;
        for (double& x : out.v) x *= f;
        return out;
    };

    AffineParams grads;
    for (int it = 0; it < config.ip; ++it) {
        Graph g;
        auto t_leaf = g.leaf(scaled(dir.translation, config.xi_a), true);
        auto s_leaf = g.leaf(scaled(dir.log_scale, config.xi_a), true);
        auto w_leaf = g.leaf(scaled(dir.axis_angle, config.xi_a), true);
        auto deformed = apply_affine_node(g, cloud.coords, partition, t_leaf, s_leaf, w_leaf);
        auto feats = g.leaf(cloud.feats, false);
        auto pn = register_params(g, params, false);
        auto logits = forward_on_nodes(g, deformed, feats, pn, params.knn_k);
        auto target = g.leaf(p_clean, false);
        auto lds = g.kl_divergence_rows(target, g.log_softmax_rows(logits));
        auto gm = g.backward(lds);
        local.lds = g.value(lds).v[0];
        grads.translation = gm.at(t_leaf);
        grads.log_scale = gm.at(s_leaf);
        grads.axis_angle = gm.at(w_leaf);
        dir.translation = grads.translation;
        dir.log_scale = grads.log_scale;
        dir.axis_angle = grads.axis_angle;
        if (!config.use_translation) dir.translation = Array({ks, 3});
        if (!config.use_scale) dir.log_scale = Array({ks, 3});
        if (!config.use_rotation) dir.axis_angle = Array({ks, 3});
        normalize_rows(dir.translation);
        normalize_rows(dir.log_scale);
        normalize_rows(dir.axis_angle);
    }

    auto project = [&](const Array& grad, bool enabled) {
        Array out({ks, 3});
        if (!enabled) return out;
        for (long r = 0; r < ks; ++r) {
            double nrm = row_norm(grad, r);
            if (nrm > 0.0) {
                for (int j = 0; j < 3; ++j) out.at(r, j) = config.eps_a * grad.at(r, j) / nrm;
            } else {
                ++local.zero_pairs;
            }
        }
        return out;
    };

    RadResult res;
    res.adaptive.translation = project(grads.translation, config.use_translation);
    res.adaptive.log_scale = project(grads.log_scale, config.use_scale);
    res.adaptive.axis_angle = project(grads.axis_angle, config.use_rotation);
    res.coords = apply_affine(cloud.coords, partition, res.adaptive);
    if (diag) *diag = local;
    return res;
}

}  // namespace datseg
