#include "datseg/lap.hpp"

#include <cmath>
#include <stdexcept>

namespace datseg {

void LapConfig::validate() const {
    if (xi_c < 0 || xi_f < 0 || eps_c < 0 || eps_f < 0)
        throw std::invalid_argument("LapConfig: magnitudes must be non-negative");
    if (ip < 1) throw std::invalid_argument("LapConfig: ip must be >= 1");
}

Directions sample_directions(const ClassCovarianceTracker& tracker, const std::vector<long>& pseudo_labels,
                             Rng& rng, bool class_aware) {
    long n = static_cast<long>(pseudo_labels.size());
    long d = tracker.feat_dim();
    Directions dir;
    dir.d_c = Array({n, 3});
    dir.d_f = Array({n, d});
    for (double& x : dir.d_c.v) x = rng.normal();
    if (class_aware) {
        // factor each covariance once
        std::vector<Array> factors;
        factors.reserve(static_cast<size_t>(tracker.num_classes()));
        for (long k = 0; k < tracker.num_classes(); ++k) factors.push_back(tracker.cholesky_factor(k));
        std::vector<double> z(static_cast<size_t>(d));
        for (long i = 0; i < n; ++i) {
            const Array& l = factors[static_cast<size_t>(pseudo_labels[static_cast<size_t>(i)])];
            for (long j = 0; j < d; ++j) z[static_cast<size_t>(j)] = rng.normal();
            for (long p = 0; p < d; ++p) {
                double s = 0;
                for (long q = 0; q <= p; ++q) s += l.at(p, q) * z[static_cast<size_t>(q)];
                dir.d_f.at(i, p) = s;
            }
        }
    } else {
        for (double& x : dir.d_f.v) x = rng.normal();
    }
    normalize_rows(dir.d_c);
    normalize_rows(dir.d_f);
    return dir;
}

namespace {

Array add_scaled(const Array& base, const Array& delta, double scale) {
    if (scale == 0.0) return base;  // bitwise identity at zero magnitude
    Array out = base;
    for (long i = 0; i < out.size(); ++i) out.v[static_cast<size_t>(i)] += scale * delta.v[static_cast<size_t>(i)];
    return out;
}

double mean_row_norm(const Array& a) {
    double s = 0;
    for (long i = 0; i < a.rows(); ++i) s += row_norm(a, i);
    return a.rows() ? s / static_cast<double>(a.rows()) : 0.0;
}

}  // namespace

PerturbedCloud generate_lap(const PointCloud& cloud, const ModelParams& params, const LapConfig& config,
                            const ClassCovarianceTracker& tracker, Rng& rng, LapDiagnostics* diag,
                            bool class_aware, bool perturb_coords, const Array* precomputed_logits) {
    config.validate();
    cloud.validate();

    // clean prediction, fixed target for the divergence
    Array clean_logits = precomputed_logits ? *precomputed_logits : forward_values(cloud, params);
    Array p_clean = predict_probabilities(clean_logits);
    std::vector<long> pseudo = predict_labels(clean_logits);

    Directions dir = sample_directions(tracker, pseudo, rng, class_aware);
    if (!perturb_coords)
        for (double& x : dir.d_c.v) x = 0.0;

    LapDiagnostics local{};
    Array g_c = dir.d_c, g_f = dir.d_f;
    for (int it = 0; it < config.ip; ++it) {
        Graph g;
        // differentiable leaves holding the injected r = xi * d, so backward
        // yields the gradient of the divergence w.r.t. the perturbation
        auto rc = g.leaf(add_scaled(Array(dir.d_c.shape, 0.0), dir.d_c, config.xi_c), true);
        auto rf = g.leaf(add_scaled(Array(dir.d_f.shape, 0.0), dir.d_f, config.xi_f), true);
        auto coords0 = g.leaf(cloud.coords, false);
        auto feats0 = g.leaf(cloud.feats, false);
        auto coords_p = g.add(coords0, rc);
        auto feats_p = g.add(feats0, rf);
        auto pn = register_params(g, params, false);
        auto logits_p = forward_on_nodes(g, coords_p, feats_p, pn, params.knn_k);
        auto target = g.leaf(p_clean, false);
        auto lds = g.kl_divergence_rows(target, g.log_softmax_rows(logits_p));
        auto grads = g.backward(lds);
        g_c = grads.at(rc);
        g_f = grads.at(rf);
        local.lds = g.value(lds).v[0];
        dir.d_c = g_c;
        dir.d_f = g_f;
        local.zero_rows_c = normalize_rows(dir.d_c);
        local.zero_rows_f = normalize_rows(dir.d_f);
    }
    local.mean_norm_gc = mean_row_norm(g_c);
    local.mean_norm_gf = mean_row_norm(g_f);

    PerturbedCloud out;
    out.source = &cloud;
    out.coords = add_scaled(cloud.coords, dir.d_c, perturb_coords ? config.eps_c : 0.0);
    out.feats = add_scaled(cloud.feats, dir.d_f, config.eps_f);
    if (diag) *diag = local;
    return out;
}

PerturbedCloud generate_noise(const PointCloud& cloud, double eps_c, double eps_f, Rng& rng) {
    cloud.validate();
    Array d_c({cloud.n(), 3});
    Array d_f({cloud.n(), cloud.feat_dim()});
    for (double& x : d_c.v) x = rng.normal();
    for (double& x : d_f.v) x = rng.normal();
    normalize_rows(d_c);
    normalize_rows(d_f);
    PerturbedCloud out;
    out.source = &cloud;
    out.coords = add_scaled(cloud.coords, d_c, eps_c);
    out.feats = add_scaled(cloud.feats, d_f, eps_f);
    return out;
}

double lds_at(const PointCloud& clean, const Array& pert_coords, const Array& pert_feats,
              const ModelParams& params) {
    Array p_clean = predict_probabilities(forward_values(clean, params));
    PointCloud pert{pert_coords, pert_feats};
    Array logits = forward_values(pert, params);
    Graph g;
    auto p = g.leaf(p_clean, false);
    auto ql = g.log_softmax_rows(g.leaf(logits, false));
    return g.value(g.kl_divergence_rows(p, ql)).v[0];
}

}  // namespace datseg
