#pragma once

#include "datseg/backbone.hpp"
#include "datseg/covariance.hpp"

namespace datseg {

struct LapConfig {
    double xi_c = 10.0;
    double xi_f = 0.1;
    double eps_c = 1.0;
    double eps_f = 0.05;
    int ip = 1;  // inner adversarial iterations
    void validate() const;
};

struct PerturbedCloud {
    Array coords;
    Array feats;
    const PointCloud* source = nullptr;
};

struct LapDiagnostics {
    double lds = 0.0;
    double mean_norm_gc = 0.0;
    double mean_norm_gf = 0.0;
    long zero_rows_c = 0;
    long zero_rows_f = 0;
};

/// Initial perturbation directions, row-normalized. Coordinates are iid
/// Gaussian; features are drawn from the per-pseudo-class Gaussian
/// N(0, Sigma_k) (class_aware) or iid Gaussian otherwise.
struct Directions {
    Array d_c;  // N x 3
    Array d_f;  // N x D_f
};
Directions sample_directions(const ClassCovarianceTracker& tracker, const std::vector<long>& pseudo_labels,
                             Rng& rng, bool class_aware = true);

/// Local adaptive perturbation: one (or ip) power steps of the adversarial
/// direction of the clean-vs-perturbed KL, then an epsilon-ball projection
/// per point. Zero-gradient rows keep zero perturbation.
/// clean_logits, when given, must equal forward_values(cloud, params); it
/// skips the internal clean forward pass.
PerturbedCloud generate_lap(const PointCloud& cloud, const ModelParams& params, const LapConfig& config,
                            const ClassCovarianceTracker& tracker, Rng& rng, LapDiagnostics* diag = nullptr,
                            bool class_aware = true, bool perturb_coords = true,
                            const Array* clean_logits = nullptr);

/// Random equal-norm perturbation baseline ("w/ Noise" rows of the ablation):
/// unit directions scaled by eps, no adversarial optimization.
PerturbedCloud generate_noise(const PointCloud& cloud, double eps_c, double eps_f, Rng& rng);

/// KL(P_clean || P(perturbed)) for a given model; used by the dominance checks.
double lds_at(const PointCloud& clean, const Array& pert_coords, const Array& pert_feats,
              const ModelParams& params);

}  // namespace datseg
