#pragma once

#include <vector>

#include "datseg/graph.hpp"
#include "datseg/rng.hpp"

namespace datseg {

struct PointCloud {
    Array coords;  // N x 3, meters
    Array feats;   // N x D_f, channels in [0,1]
    long n() const { return coords.rows(); }
    long feat_dim() const { return feats.cols(); }
    void validate() const;
};

/// Per-point encoder (3+D_f -> H1 -> H1), knn max-pool, head (2*H1 -> H2 -> K_c).
struct ModelParams {
    Array enc_w1, enc_b1;  // (3+D_f) x H1, 1 x H1
    Array enc_w2, enc_b2;  // H1 x H1, 1 x H1
    Array head_w1, head_b1;  // 2*H1 x H2, 1 x H2
    Array head_w2, head_b2;  // H2 x K_c, 1 x K_c
    long knn_k = 8;

    long feat_dim() const { return enc_w1.rows() - 3; }
    long num_classes() const { return head_w2.cols(); }

    static ModelParams init(long feat_dim, long num_classes, Rng& rng, long h1 = 32, long h2 = 32, long k = 8);

    std::vector<std::pair<const char*, Array ModelParams::*>> static fields();
};

/// k nearest points per point (self included); ties broken by lower index.
std::vector<std::vector<long>> knn_index(const Array& coords, long k);

/// Leaf node handles for one forward pass, so callers can request gradients
/// with respect to inputs as well as parameters.
struct ForwardNodes {
    Graph::NodeId coords = -1;
    Graph::NodeId feats = -1;
    std::vector<Graph::NodeId> params;  // same order as ModelParams::fields()
    Graph::NodeId logits = -1;
};

/// Registers coords/feats/params as leaves and runs the network.
ForwardNodes forward(Graph& g, const PointCloud& cloud, const ModelParams& params,
                     bool inputs_differentiable = true, bool params_differentiable = true);

/// Continues a graph that already holds coords/feats nodes (e.g. deformed
/// coordinates produced by an affine op). knn is recomputed from the current
/// coordinate values and treated as non-differentiable structure.
Graph::NodeId forward_on_nodes(Graph& g, Graph::NodeId coords, Graph::NodeId feats,
                               const std::vector<Graph::NodeId>& param_nodes, long knn_k);

std::vector<Graph::NodeId> register_params(Graph& g, const ModelParams& params, bool differentiable);

Array predict_probabilities(const Array& logits);
std::vector<long> predict_labels(const Array& logits);

/// Plain value-only forward (no tape), for evaluation loops.
Array forward_values(const PointCloud& cloud, const ModelParams& params);

}  // namespace datseg
