#include "datseg/graph.hpp"

#include <algorithm>
#include <cmath>

namespace datseg {

namespace {

[[noreturn]] void shape_error(const std::string& op, const Array& a, const Array& b) {
    throw std::invalid_argument(op + ": incompatible shapes " + a.shape_str() + " and " + b.shape_str());
}

}  // namespace

Graph::NodeId Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

void Graph::check(NodeId id) const {
    if (id < 0 || id >= static_cast<NodeId>(nodes_.size()))
        throw std::invalid_argument("Graph: unknown node id " + std::to_string(id));
}

Graph::NodeId Graph::leaf(Array value, bool differentiable) {
    NodeId id = push({std::move(value), {}, nullptr});
    if (differentiable) diff_leaves_.push_back(id);
    return id;
}

const Array& Graph::value(NodeId id) const {
    check(id);
    return nodes_[static_cast<size_t>(id)].value;
}

Graph::NodeId Graph::matmul(NodeId a, NodeId b) {
    const Array& A = value(a);
    const Array& B = value(b);
    if (A.shape.size() != 2 || B.shape.size() != 2 || A.cols() != B.rows()) shape_error("matmul", A, B);
    long n = A.rows(), k = A.cols(), m = B.cols();
    Array out({n, m});
    {
        const double* ad = A.v.data();
        const double* bd = B.v.data();
        double* od = out.v.data();
        for (long i = 0; i < n; ++i) {
            const double* ai = ad + i * k;
            double* oi = od + i * m;
            for (long p = 0; p < k; ++p) {
                double aip = ai[p];
                if (aip == 0.0) continue;
                const double* bp = bd + p * m;
                for (long j = 0; j < m; ++j) oi[j] += aip * bp[j];
            }
        }
    }
    Node node;
    node.value = std::move(out);
    node.inputs = {a, b};
    node.bw = [a, b](const Graph& g, const Array& gout, std::vector<Array*> gin) {
        const Array& Ac = g.value(a);
        const Array& Bc = g.value(b);
        long n = Ac.rows(), k = Ac.cols(), m = Bc.cols();
        const double* ad = Ac.v.data();
        const double* bd = Bc.v.data();
        const double* gd = gout.v.data();
        if (gin[0]) {  // dA = gout * B^T
            double* da = gin[0]->v.data();
            for (long i = 0; i < n; ++i) {
                const double* gi = gd + i * m;
                double* dai = da + i * k;
                for (long p = 0; p < k; ++p) {
                    const double* bp = bd + p * m;
                    double s = 0;
                    for (long j = 0; j < m; ++j) s += gi[j] * bp[j];
                    dai[p] += s;
                }
            }
        }
        if (gin[1]) {  // dB = A^T * gout
            double* db = gin[1]->v.data();
            for (long i = 0; i < n; ++i) {
                const double* ai = ad + i * k;
                const double* gi = gd + i * m;
                for (long p = 0; p < k; ++p) {
                    double aip = ai[p];
                    if (aip == 0.0) continue;
                    double* dbp = db + p * m;
                    for (long j = 0; j < m; ++j) dbp[j] += aip * gi[j];
                }
            }
        }
    };
    return push(std::move(node));
}

Graph::NodeId Graph::add(NodeId a, NodeId b) {
    const Array& A = value(a);
    const Array& B = value(b);
    bool broadcast = false;
    if (A.same_shape(B)) {
        broadcast = false;
    } else if (B.shape.size() == 2 && B.rows() == 1 && A.cols() == B.cols()) {
        broadcast = true;
    } else {
        shape_error("add", A, B);
    }
    Array out = A;
    long n = A.rows(), m = A.cols();
    if (broadcast) {
        for (long i = 0; i < n; ++i)
            for (long j = 0; j < m; ++j) out.at(i, j) += B.at(0, j);
    } else {
        for (long i = 0; i < A.size(); ++i) out.v[static_cast<size_t>(i)] += B.v[static_cast<size_t>(i)];
    }
    Node node;
    node.value = std::move(out);
    node.inputs = {a, b};
    node.bw = [broadcast, n, m](const Graph&, const Array& gout, std::vector<Array*> gin) {
        if (gin[0])
            for (long i = 0; i < gout.size(); ++i) gin[0]->v[static_cast<size_t>(i)] += gout.v[static_cast<size_t>(i)];
        if (gin[1]) {
            if (broadcast) {
                for (long i = 0; i < n; ++i)
                    for (long j = 0; j < m; ++j) gin[1]->at(0, j) += gout.at(i, j);
            } else {
                for (long i = 0; i < gout.size(); ++i)
                    gin[1]->v[static_cast<size_t>(i)] += gout.v[static_cast<size_t>(i)];
            }
        }
    };
    return push(std::move(node));
}

Graph::NodeId Graph::mul(NodeId a, NodeId b) {
    const Array& A = value(a);
    const Array& B = value(b);
    if (!A.same_shape(B)) shape_error("mul", A, B);
    Array out = A;
    for (long i = 0; i < A.size(); ++i) out.v[static_cast<size_t>(i)] *= B.v[static_cast<size_t>(i)];
    Node node;
    node.value = std::move(out);
    node.inputs = {a, b};
    node.bw = [a, b](const Graph& g, const Array& gout, std::vector<Array*> gin) {
        const Array& Ac = g.value(a);
        const Array& Bc = g.value(b);
        for (long i = 0; i < gout.size(); ++i) {
            size_t k = static_cast<size_t>(i);
            if (gin[0]) gin[0]->v[k] += gout.v[k] * Bc.v[k];
            if (gin[1]) gin[1]->v[k] += gout.v[k] * Ac.v[k];
        }
    };
    return push(std::move(node));
}

Graph::NodeId Graph::scale(NodeId a, double c) {
    Array out = value(a);
    for (double& x : out.v) x *= c;
    Node node;
    node.value = std::move(out);
    node.inputs = {a};
    node.bw = [c](const Graph&, const Array& gout, std::vector<Array*> gin) {
        if (gin[0])
            for (long i = 0; i < gout.size(); ++i) gin[0]->v[static_cast<size_t>(i)] += c * gout.v[static_cast<size_t>(i)];
    };
    return push(std::move(node));
}

Graph::NodeId Graph::relu(NodeId a) {
    Array out = value(a);
    for (double& x : out.v) x = x > 0.0 ? x : 0.0;
    Node node;
    node.value = std::move(out);
    node.inputs = {a};
    node.bw = [a](const Graph& g, const Array& gout, std::vector<Array*> gin) {
        if (!gin[0]) return;
        const Array& in = g.value(a);
        // subgradient at 0 is 0
        for (long i = 0; i < gout.size(); ++i) {
            size_t k = static_cast<size_t>(i);
            if (in.v[k] > 0.0) gin[0]->v[k] += gout.v[k];
        }
    };
    return push(std::move(node));
}

Graph::NodeId Graph::row_max_over_groups(NodeId a, const std::vector<std::vector<long>>& groups) {
    const Array& A = value(a);
    long n = static_cast<long>(groups.size());
    long m = A.cols();
    Array out({n, m});
    // argmax (first attaining) per output cell, saved for the adjoint
    std::vector<long> argmax(static_cast<size_t>(n * m));
    for (long i = 0; i < n; ++i) {
        if (groups[static_cast<size_t>(i)].empty())
            throw std::invalid_argument("row_max_over_groups: empty group at row " + std::to_string(i));
        for (long j : groups[static_cast<size_t>(i)])
            if (j < 0 || j >= A.rows())
                throw std::invalid_argument("row_max_over_groups: index " + std::to_string(j) +
                                            " out of range at row " + std::to_string(i));
        for (long c = 0; c < m; ++c) {
            long best = groups[static_cast<size_t>(i)][0];
            double bestv = A.at(best, c);
            for (long j : groups[static_cast<size_t>(i)]) {
                if (A.at(j, c) > bestv) {
                    bestv = A.at(j, c);
                    best = j;
                }
            }
            out.at(i, c) = bestv;
            argmax[static_cast<size_t>(i * m + c)] = best;
        }
    }
    Node node;
    node.value = std::move(out);
    node.inputs = {a};
    node.bw = [argmax, n, m](const Graph&, const Array& gout, std::vector<Array*> gin) {
        if (!gin[0]) return;
        for (long i = 0; i < n; ++i)
            for (long c = 0; c < m; ++c) gin[0]->at(argmax[static_cast<size_t>(i * m + c)], c) += gout.at(i, c);
    };
    return push(std::move(node));
}

Graph::NodeId Graph::concat_columns(NodeId a, NodeId b) {
    const Array& A = value(a);
    const Array& B = value(b);
    if (A.rows() != B.rows()) shape_error("concat_columns", A, B);
    long n = A.rows(), ma = A.cols(), mb = B.cols();
    Array out({n, ma + mb});
    for (long i = 0; i < n; ++i) {
        for (long j = 0; j < ma; ++j) out.at(i, j) = A.at(i, j);
        for (long j = 0; j < mb; ++j) out.at(i, ma + j) = B.at(i, j);
    }
    Node node;
    node.value = std::move(out);
    node.inputs = {a, b};
    node.bw = [n, ma, mb](const Graph&, const Array& gout, std::vector<Array*> gin) {
        for (long i = 0; i < n; ++i) {
            if (gin[0])
                for (long j = 0; j < ma; ++j) gin[0]->at(i, j) += gout.at(i, j);
            if (gin[1])
                for (long j = 0; j < mb; ++j) gin[1]->at(i, j) += gout.at(i, ma + j);
        }
    };
    return push(std::move(node));
}

Graph::NodeId Graph::softmax_rows(NodeId a) {
    const Array& A = value(a);
    long n = A.rows(), m = A.cols();
    Array out({n, m});
    for (long i = 0; i < n; ++i) {
        double mx = A.at(i, 0);
        for (long j = 1; j < m; ++j) mx = std::max(mx, A.at(i, j));
        double z = 0;
        for (long j = 0; j < m; ++j) z += std::exp(A.at(i, j) - mx);
        for (long j = 0; j < m; ++j) out.at(i, j) = std::exp(A.at(i, j) - mx) / z;
    }
    Node node;
    node.value = std::move(out);
    node.inputs = {a};
    NodeId self = static_cast<NodeId>(nodes_.size());  // id this node gets on push
    node.bw = [self](const Graph& g, const Array& gout, std::vector<Array*> gin) {
        if (!gin[0]) return;
        const Array& s = g.value(self);
        long n = s.rows(), m = s.cols();
        for (long i = 0; i < n; ++i) {
            double dot = 0;
            for (long j = 0; j < m; ++j) dot += gout.at(i, j) * s.at(i, j);
            for (long j = 0; j < m; ++j) gin[0]->at(i, j) += s.at(i, j) * (gout.at(i, j) - dot);
        }
    };
    return push(std::move(node));
}

Graph::NodeId Graph::log_softmax_rows(NodeId a) {
    const Array& A = value(a);
    long n = A.rows(), m = A.cols();
    Array out({n, m});
    for (long i = 0; i < n; ++i) {
        double mx = A.at(i, 0);
        for (long j = 1; j < m; ++j) mx = std::max(mx, A.at(i, j));
        double z = 0;
        for (long j = 0; j < m; ++j) z += std::exp(A.at(i, j) - mx);
        double lz = std::log(z) + mx;
        for (long j = 0; j < m; ++j) out.at(i, j) = A.at(i, j) - lz;
    }
    Node node;
    node.value = std::move(out);
    node.inputs = {a};
    NodeId self = static_cast<NodeId>(nodes_.size());  // id this node gets on push
    node.bw = [self](const Graph& g, const Array& gout, std::vector<Array*> gin) {
        if (!gin[0]) return;
        const Array& lsm = g.value(self);
        long n = lsm.rows(), m = lsm.cols();
        for (long i = 0; i < n; ++i) {
            double rowsum = 0;
            for (long j = 0; j < m; ++j) rowsum += gout.at(i, j);
            for (long j = 0; j < m; ++j) gin[0]->at(i, j) += gout.at(i, j) - std::exp(lsm.at(i, j)) * rowsum;
        }
    };
    return push(std::move(node));
}

Graph::NodeId Graph::gather_rows(NodeId a, const std::vector<long>& index) {
    const Array& A = value(a);
    long m = A.cols();
    long n = static_cast<long>(index.size());
    Array out({n, m});
    for (long r = 0; r < n; ++r) {
        long i = index[static_cast<size_t>(r)];
        if (i < 0 || i >= A.rows())
            throw std::invalid_argument("gather_rows: index " + std::to_string(i) + " out of range at position " +
                                        std::to_string(r));
        for (long j = 0; j < m; ++j) out.at(r, j) = A.at(i, j);
    }
    Node node;
    node.value = std::move(out);
    node.inputs = {a};
    node.bw = [index, m](const Graph&, const Array& gout, std::vector<Array*> gin) {
        if (!gin[0]) return;
        for (long r = 0; r < static_cast<long>(index.size()); ++r)
            for (long j = 0; j < m; ++j) gin[0]->at(index[static_cast<size_t>(r)], j) += gout.at(r, j);
    };
    return push(std::move(node));
}

Graph::NodeId Graph::sum(NodeId a) {
    const Array& A = value(a);
    double s = 0;
    for (double x : A.v) s += x;
    Node node;
    node.value = Array::scalar(s);
    node.inputs = {a};
    node.bw = [](const Graph&, const Array& gout, std::vector<Array*> gin) {
        if (!gin[0]) return;
        for (double& x : gin[0]->v) x += gout.v[0];
    };
    return push(std::move(node));
}

Graph::NodeId Graph::kl_divergence_rows(NodeId p, NodeId qlog) {
    const Array& P = value(p);
    const Array& Q = value(qlog);
    if (P.rows() != Q.rows() || P.cols() != Q.cols()) shape_error("kl_divergence_rows", P, Q);
    long n = P.rows(), m = P.cols();
    for (long i = 0; i < n; ++i) {
        double rs = 0;
        for (long j = 0; j < m; ++j) {
            double pij = P.at(i, j);
            if (pij < -1e-12)
                throw std::invalid_argument("kl_divergence_rows: negative probability " + std::to_string(pij) +
                                            " at row " + std::to_string(i));
            rs += pij;
        }
        if (std::abs(rs - 1.0) > 1e-9)
            throw std::invalid_argument("kl_divergence_rows: row " + std::to_string(i) +
                                        " sums to " + std::to_string(rs));
    }
    double acc = 0;
    for (long i = 0; i < n; ++i)
        for (long j = 0; j < m; ++j) {
            double pij = P.at(i, j);
            if (pij > 0.0) acc += pij * (std::log(pij) - Q.at(i, j));
        }
    acc /= static_cast<double>(n);
    if (acc < 0.0) acc = 0.0;  // roundoff guard; true divergence is non-negative
    Node node;
    node.value = Array::scalar(acc);
    node.inputs = {p, qlog};
    node.bw = [p, qlog](const Graph& g2, const Array& gout, std::vector<Array*> gin) {
        const Array& Pc = g2.value(p);
        const Array& Qc = g2.value(qlog);
        long n = Pc.rows(), m = Pc.cols();
        double g = gout.v[0] / static_cast<double>(n);
        for (long i = 0; i < n; ++i)
            for (long j = 0; j < m; ++j) {
                double pij = Pc.at(i, j);
                if (gin[0] && pij > 0.0) gin[0]->at(i, j) += g * (std::log(pij) - Qc.at(i, j) + 1.0);
                if (gin[1]) gin[1]->at(i, j) += -g * pij;
            }
    };
    return push(std::move(node));
}

Graph::NodeId Graph::cross_entropy_sparse(NodeId logits, const WeakLabels& labels) {
    const Array& L = value(logits);
    if (labels.entries.empty()) throw std::invalid_argument("cross_entropy_sparse: no supervision");
    long n = L.rows(), m = L.cols();
    for (auto [i, y] : labels.entries) {
        if (i < 0 || i >= n)
            throw std::invalid_argument("cross_entropy_sparse: point index " + std::to_string(i) + " out of range");
        if (y < 0 || y >= m)
            throw std::invalid_argument("cross_entropy_sparse: class " + std::to_string(y) + " out of range");
    }
    double M = static_cast<double>(labels.entries.size());
    double acc = 0;
    for (auto [i, y] : labels.entries) {
        double mx = L.at(i, 0);
        for (long j = 1; j < m; ++j) mx = std::max(mx, L.at(i, j));
        double z = 0;
        for (long j = 0; j < m; ++j) z += std::exp(L.at(i, j) - mx);
        acc += -(L.at(i, y) - mx - std::log(z));
    }
    acc /= M;
    Node node;
    node.value = Array::scalar(acc);
    node.inputs = {logits};
    auto entries = labels.entries;
    node.bw = [logits, entries, M](const Graph& g2, const Array& gout, std::vector<Array*> gin) {
        if (!gin[0]) return;
        const Array& Lc = g2.value(logits);
        long m = Lc.cols();
        double g = gout.v[0] / M;
        for (auto [i, y] : entries) {
            double mx = Lc.at(i, 0);
            for (long j = 1; j < m; ++j) mx = std::max(mx, Lc.at(i, j));
            double z = 0;
            for (long j = 0; j < m; ++j) z += std::exp(Lc.at(i, j) - mx);
            for (long j = 0; j < m; ++j) {
                double sm = std::exp(Lc.at(i, j) - mx) / z;
                gin[0]->at(i, j) += g * (sm - (j == y ? 1.0 : 0.0));
            }
        }
    };
    return push(std::move(node));
}

Graph::NodeId Graph::detach(NodeId a) {
    Node node;
    node.value = value(a);
    node.inputs = {};  // no inputs: gradient stops here
    node.bw = nullptr;
    return push(std::move(node));
}

Graph::NodeId Graph::custom(std::string opname, std::vector<NodeId> inputs, Array value,
                            std::function<void(const Array&, std::vector<Array*>)> bw) {
    for (NodeId i : inputs) check(i);
    (void)opname;
    Node node;
    node.value = std::move(value);
    node.inputs = std::move(inputs);
    node.bw = [f = std::move(bw)](const Graph&, const Array& gout, std::vector<Array*> gin) { f(gout, gin); };
    return push(std::move(node));
}

std::unordered_map<Graph::NodeId, Array> Graph::backward(NodeId loss_node) const {
    check(loss_node);
    if (!nodes_[static_cast<size_t>(loss_node)].value.is_scalar())
        throw std::invalid_argument("backward: loss node is not scalar, shape " +
                                    nodes_[static_cast<size_t>(loss_node)].value.shape_str());
    std::vector<Array> grads(nodes_.size());
    std::vector<char> touched(nodes_.size(), 0);
    auto ensure = [&](NodeId id) -> Array* {
        size_t k = static_cast<size_t>(id);
        if (!touched[k]) {
            grads[k] = Array(nodes_[k].value.shape, 0.0);
            touched[k] = 1;
        }
        return &grads[k];
    };
    ensure(loss_node)->v[0] = 1.0;
    for (NodeId id = loss_node; id >= 0; --id) {
        size_t k = static_cast<size_t>(id);
        if (!touched[k] || !nodes_[k].bw) continue;
        std::vector<Array*> gin(nodes_[k].inputs.size());
        for (size_t q = 0; q < gin.size(); ++q) gin[q] = ensure(nodes_[k].inputs[q]);
        nodes_[k].bw(*this, grads[k], gin);
    }
    std::unordered_map<NodeId, Array> out;
    for (NodeId id : diff_leaves_) {
        size_t k = static_cast<size_t>(id);
        out.emplace(id, touched[k] ? grads[k] : Array(nodes_[k].value.shape, 0.0));
    }
    return out;
}

long normalize_rows(Array& a) {
    long zero_rows = 0;
    for (long i = 0; i < a.rows(); ++i) {
        double nrm = row_norm(a, i);
        if (nrm > 0.0) {
            for (long j = 0; j < a.cols(); ++j) a.at(i, j) /= nrm;
        } else {
            ++zero_rows;
        }
    }
    return zero_rows;
}

}  // namespace datseg
