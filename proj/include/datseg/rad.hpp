#pragma once

#include "datseg/backbone.hpp"

namespace datseg {

struct SuperpointPartition {
    std::vector<long> region_of;  // N, in [0, K_s)
    long num_regions = 0;
    Array centroids;  // K_s x 3
};

/// Per-region deviation-from-identity: translation, log-scale, axis-angle.
/// Identity deformation is all zeros.
struct AffineParams {
    Array translation;  // K_s x 3
    Array log_scale;    // K_s x 3
    Array axis_angle;   // K_s x 3
    static AffineParams identity(long num_regions);
};

struct RadConfig {
    double xi_a = 0.1;
    double eps_a = 0.05;
    bool use_translation = true;
    bool use_scale = true;
    bool use_rotation = true;
    double cell_size = 0.5;  // meters, voxel-grid partition granularity
    int ip = 1;
    void validate() const;
};

struct RadDiagnostics {
    double lds = 0.0;
    long zero_pairs = 0;  // (region, type) pairs with zero gradient, kept identity
};

/// Voxel-grid over-segmentation; cells with fewer than 5 points are merged
/// into the nearest larger region by centroid distance. Region ids contiguous.
SuperpointPartition partition_superpoints(const PointCloud& cloud, double cell_size);

/// p' = R(omega) * diag(exp(s)) * (p - c_i) + c_i + t, about the region
/// centroid, composition scale -> rotate -> translate.
Array apply_affine(const Array& coords, const SuperpointPartition& partition, const AffineParams& params);

/// Graph op version: differentiable w.r.t. the three parameter leaves.
Graph::NodeId apply_affine_node(Graph& g, const Array& coords, const SuperpointPartition& partition,
                                Graph::NodeId translation, Graph::NodeId log_scale, Graph::NodeId axis_angle);

/// 3x3 Rodrigues rotation of an axis-angle vector (series expansion near 0).
Array rodrigues(const double w[3]);

struct RadResult {
    Array coords;  // X^rad coordinates; features are unchanged
    AffineParams adaptive;  // the eps-normalized adversarial parameters
};

/// Regional adaptive deformation: random near-identity affine per superpoint,
/// one power step of the adversarial gradient of the clean-vs-deformed KL,
/// then per-(region, type) epsilon normalization.
/// clean_logits, when given, must equal forward_values(cloud, params); it
/// skips the internal clean forward pass.
RadResult generate_rad(const PointCloud& cloud, const SuperpointPartition& partition, const ModelParams& params,
                       const RadConfig& config, Rng& rng, RadDiagnostics* diag = nullptr,
                       const Array* clean_logits = nullptr);

}  // namespace datseg
