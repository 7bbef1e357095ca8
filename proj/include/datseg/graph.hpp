#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "datseg/array.hpp"

namespace datseg {

/// Sparse supervision: (point index, class) pairs, M << N.
struct WeakLabels {
    std::vector<std::pair<long, long>> entries;
    long size() const { return static_cast<long>(entries.size()); }
};

/// Reverse-mode tape over dense arrays. Nodes are appended in forward order;
/// backward walks the tape in reverse exactly once. Gradients are available
/// for every leaf registered as differentiable, with respect to parameters
/// and inputs alike.
class Graph {
public:
    using NodeId = int;

    NodeId leaf(Array value, bool differentiable = true);
    const Array& value(NodeId id) const;

    // --- primitives -------------------------------------------------------
    NodeId matmul(NodeId a, NodeId b);
    /// Elementwise when shapes match; row-broadcast when b is 1xM.
    NodeId add(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);  // elementwise
    NodeId scale(NodeId a, double c);
    NodeId relu(NodeId a);
    /// out[i][c] = max over j in groups[i] of a[j][c]; gradient routes to the
    /// first neighbor attaining the max.
    NodeId row_max_over_groups(NodeId a, const std::vector<std::vector<long>>& groups);
    NodeId concat_columns(NodeId a, NodeId b);
    NodeId softmax_rows(NodeId a);
    NodeId log_softmax_rows(NodeId a);
    NodeId gather_rows(NodeId a, const std::vector<long>& index);
    NodeId sum(NodeId a);  // scalar

    /// Mean over rows of sum_j P_j (log P_j - Qlog_j), with 0 log 0 := 0.
    NodeId kl_divergence_rows(NodeId p, NodeId qlog);

    /// Mean over labeled points of -log_softmax(logits)[i, y_i].
    NodeId cross_entropy_sparse(NodeId logits, const WeakLabels& labels);

    /// Value passes through; gradients do not.
    NodeId detach(NodeId a);

    /// Escape hatch for domain ops with hand-derived adjoints (e.g. the
    /// per-region affine deformation). `bw` receives the upstream gradient
    /// and one accumulator per input, in order.
    NodeId custom(std::string opname, std::vector<NodeId> inputs, Array value,
                  std::function<void(const Array& gout, std::vector<Array*> gin)> bw);

    /// Gradients of a scalar loss for every differentiable leaf (zero arrays
    /// for leaves off the loss path).
    std::unordered_map<NodeId, Array> backward(NodeId loss_node) const;

    long node_count() const { return static_cast<long>(nodes_.size()); }

private:
    struct Node {
        Array value;
        std::vector<NodeId> inputs;
        // gout: gradient of loss w.r.t. this node; gin: accumulators for inputs
        std::function<void(const Graph&, const Array& gout, std::vector<Array*> gin)> bw;
    };

    NodeId push(Node n);
    void check(NodeId id) const;

    std::vector<Node> nodes_;
    std::vector<NodeId> diff_leaves_;
};

/// Rows scaled to unit L2 norm; all-zero rows stay zero. Returns the number
/// of zero rows encountered.
long normalize_rows(Array& a);

}  // namespace datseg
