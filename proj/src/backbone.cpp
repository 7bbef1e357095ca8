#include "datseg/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numeric>

namespace datseg {

void PointCloud::validate() const {
    if (coords.shape.size() != 2 || coords.cols() != 3)
        throw std::invalid_argument("PointCloud: coords must be Nx3, got " + coords.shape_str());
    if (feats.shape.size() != 2 || feats.rows() != coords.rows())
        throw std::invalid_argument("PointCloud: feats rows " + feats.shape_str() + " do not match coords " +
                                    coords.shape_str());
    if (coords.rows() < 1) throw std::invalid_argument("PointCloud: empty cloud");
    if (!coords.all_finite() || !feats.all_finite())
        throw std::invalid_argument("PointCloud: non-finite values");
}

std::vector<std::pair<const char*, Array ModelParams::*>> ModelParams::fields() {
    return {
        {"enc_w1", &ModelParams::enc_w1},   {"enc_b1", &ModelParams::enc_b1},
        {"enc_w2", &ModelParams::enc_w2},   {"enc_b2", &ModelParams::enc_b2},
        {"head_w1", &ModelParams::head_w1}, {"head_b1", &ModelParams::head_b1},
        {"head_w2", &ModelParams::head_w2}, {"head_b2", &ModelParams::head_b2},
    };
}

ModelParams ModelParams::init(long feat_dim, long num_classes, Rng& rng, long h1, long h2, long k) {
    if (num_classes < 2) throw std::invalid_argument("ModelParams: need at least 2 classes");
    ModelParams p;
    p.knn_k = k;
    auto glorot = [&rng](long in, long out) {
        Array w({in, out});
        double s = std::sqrt(2.0 / static_cast<double>(in + out));
        for (double& x : w.v) x = s * rng.normal();
        return w;
    };
    p.enc_w1 = glorot(3 + feat_dim, h1);
    p.enc_b1 = Array({1, h1});
    p.enc_w2 = glorot(h1, h1);
    p.enc_b2 = Array({1, h1});
    p.head_w1 = glorot(2 * h1, h2);
    p.head_b1 = Array({1, h2});
    p.head_w2 = glorot(h2, num_classes);
    p.head_b2 = Array({1, num_classes});
    return p;
}

namespace {

// bounded insertion into a sorted top-k buffer ordered by (d2, index)
struct TopK {
    std::vector<double> best_d;
    std::vector<long> best_j;
    double worst;
    size_t last;
    void reset(long k, long sentinel) {
        best_d.assign(static_cast<size_t>(k), std::numeric_limits<double>::infinity());
        best_j.assign(static_cast<size_t>(k), sentinel);
        worst = std::numeric_limits<double>::infinity();
        last = static_cast<size_t>(k - 1);
    }
    void offer(double d2, long j) {
        // ties broken by lower index: (d2, j) compared lexicographically
        if (d2 > worst || (d2 == worst && j > best_j[last])) return;
        size_t pos = last;
        while (pos > 0 && (d2 < best_d[pos - 1] || (d2 == best_d[pos - 1] && j < best_j[pos - 1]))) {
            best_d[pos] = best_d[pos - 1];
            best_j[pos] = best_j[pos - 1];
            --pos;
        }
        best_d[pos] = d2;
        best_j[pos] = j;
        worst = best_d[last];
    }
};

}  // namespace

std::vector<std::vector<long>> knn_index(const Array& coords, long k) {
    long n = coords.rows();
    if (k > n) throw std::invalid_argument("knn_index: k=" + std::to_string(k) + " exceeds N=" + std::to_string(n));
    std::vector<std::vector<long>> out(static_cast<size_t>(n));
    // contiguous per-axis copies let the distance loops vectorize
    std::vector<double> xs(static_cast<size_t>(n)), ys(static_cast<size_t>(n)), zs(static_cast<size_t>(n));
    for (long j = 0; j < n; ++j) {
        xs[static_cast<size_t>(j)] = coords.at(j, 0);
        ys[static_cast<size_t>(j)] = coords.at(j, 1);
        zs[static_cast<size_t>(j)] = coords.at(j, 2);
    }
    TopK top;

    double lo[3] = {xs[0], ys[0], zs[0]}, hi[3] = {xs[0], ys[0], zs[0]};
    for (long j = 1; j < n; ++j) {
        lo[0] = std::min(lo[0], xs[static_cast<size_t>(j)]);
        hi[0] = std::max(hi[0], xs[static_cast<size_t>(j)]);
        lo[1] = std::min(lo[1], ys[static_cast<size_t>(j)]);
        hi[1] = std::max(hi[1], ys[static_cast<size_t>(j)]);
        lo[2] = std::min(lo[2], zs[static_cast<size_t>(j)]);
        hi[2] = std::max(hi[2], zs[static_cast<size_t>(j)]);
    }
    double vol = std::max(hi[0] - lo[0], 1e-12) * std::max(hi[1] - lo[1], 1e-12) * std::max(hi[2] - lo[2], 1e-12);
    // uniform cell edge targeting a handful of points per cell
    double h = std::cbrt(vol * 4.0 / static_cast<double>(n));

    bool use_grid = n > 256 && h > 1e-9;
    if (!use_grid) {
        std::vector<double> d2s(static_cast<size_t>(n));
        for (long i = 0; i < n; ++i) {
            double xi = xs[static_cast<size_t>(i)], yi = ys[static_cast<size_t>(i)], zi = zs[static_cast<size_t>(i)];
            for (long j = 0; j < n; ++j) {
                double dx = xs[static_cast<size_t>(j)] - xi, dy = ys[static_cast<size_t>(j)] - yi,
                       dz = zs[static_cast<size_t>(j)] - zi;
                d2s[static_cast<size_t>(j)] = dx * dx + dy * dy + dz * dz;
            }
            top.reset(k, n);
            for (long j = 0; j < n; ++j) top.offer(d2s[static_cast<size_t>(j)], j);
            out[static_cast<size_t>(i)].assign(top.best_j.begin(), top.best_j.end());
        }
        return out;
    }

    // uniform-grid exact search: expand cell rings until the kth distance
    // provably beats every unvisited cell; results identical to brute force
    auto cell_of = [&](double v, double origin) {
        long c = static_cast<long>((v - origin) / h);
        return c;
    };
    long nx = cell_of(hi[0], lo[0]) + 1, ny = cell_of(hi[1], lo[1]) + 1, nz = cell_of(hi[2], lo[2]) + 1;
    std::vector<std::vector<long>> cells(static_cast<size_t>(nx * ny * nz));
    std::vector<long> ci(static_cast<size_t>(n)), cj(static_cast<size_t>(n)), ck(static_cast<size_t>(n));
    for (long j = 0; j < n; ++j) {
        long a = std::min(nx - 1, cell_of(xs[static_cast<size_t>(j)], lo[0]));
        long b = std::min(ny - 1, cell_of(ys[static_cast<size_t>(j)], lo[1]));
        long c = std::min(nz - 1, cell_of(zs[static_cast<size_t>(j)], lo[2]));
        ci[static_cast<size_t>(j)] = a;
        cj[static_cast<size_t>(j)] = b;
        ck[static_cast<size_t>(j)] = c;
        cells[static_cast<size_t>((a * ny + b) * nz + c)].push_back(j);
    }
    for (long i = 0; i < n; ++i) {
        double xi = xs[static_cast<size_t>(i)], yi = ys[static_cast<size_t>(i)], zi = zs[static_cast<size_t>(i)];
        long a0 = ci[static_cast<size_t>(i)], b0 = cj[static_cast<size_t>(i)], c0 = ck[static_cast<size_t>(i)];
        top.reset(k, n);
        long max_ring = std::max({nx, ny, nz});
        for (long r = 0; r <= max_ring; ++r) {
            // a point in a ring-c cell lies at distance >= (c-1)*h from the
            // query, so once the kth candidate beats (r-1)*h no unvisited
            // ring >= r can improve the result
            double bound = static_cast<double>(r - 1) * h;
            if (r >= 1 && top.best_j[top.last] < n && top.worst <= bound * bound) break;
            for (long a = std::max(0L, a0 - r); a <= std::min(nx - 1, a0 + r); ++a)
                for (long b = std::max(0L, b0 - r); b <= std::min(ny - 1, b0 + r); ++b)
                    for (long c = std::max(0L, c0 - r); c <= std::min(nz - 1, c0 + r); ++c) {
                        if (std::max({std::labs(a - a0), std::labs(b - b0), std::labs(c - c0)}) != r) continue;
                        for (long j : cells[static_cast<size_t>((a * ny + b) * nz + c)]) {
                            double dx = xs[static_cast<size_t>(j)] - xi, dy = ys[static_cast<size_t>(j)] - yi,
                                   dz = zs[static_cast<size_t>(j)] - zi;
                            top.offer(dx * dx + dy * dy + dz * dz, j);
                        }
                    }
        }
        out[static_cast<size_t>(i)].assign(top.best_j.begin(), top.best_j.end());
    }
    return out;
}

std::vector<Graph::NodeId> register_params(Graph& g, const ModelParams& params, bool differentiable) {
    std::vector<Graph::NodeId> ids;
    for (auto [name, field] : ModelParams::fields()) {
        (void)name;
        ids.push_back(g.leaf(params.*field, differentiable));
    }
    return ids;
}

Graph::NodeId forward_on_nodes(Graph& g, Graph::NodeId coords, Graph::NodeId feats,
                               const std::vector<Graph::NodeId>& pn, long knn_k) {
    auto groups = knn_index(g.value(coords), knn_k);
    auto x = g.concat_columns(coords, feats);
    auto e1 = g.relu(g.add(g.matmul(x, pn[0]), pn[1]));
    auto h = g.relu(g.add(g.matmul(e1, pn[2]), pn[3]));
    auto pooled = g.row_max_over_groups(h, groups);
    auto hg = g.concat_columns(h, pooled);
    auto u = g.relu(g.add(g.matmul(hg, pn[4]), pn[5]));
    return g.add(g.matmul(u, pn[6]), pn[7]);
}

ForwardNodes forward(Graph& g, const PointCloud& cloud, const ModelParams& params, bool inputs_differentiable,
                     bool params_differentiable) {
    cloud.validate();
    if (params.knn_k > cloud.n())
        throw std::invalid_argument("forward: knn k=" + std::to_string(params.knn_k) + " exceeds N=" +
                                    std::to_string(cloud.n()));
    ForwardNodes fn;
    fn.coords = g.leaf(cloud.coords, inputs_differentiable);
    fn.feats = g.leaf(cloud.feats, inputs_differentiable);
    fn.params = register_params(g, params, params_differentiable);
    fn.logits = forward_on_nodes(g, fn.coords, fn.feats, fn.params, params.knn_k);
    return fn;
}

Array predict_probabilities(const Array& logits) {
    Graph g;
    auto l = g.leaf(logits, false);
    return g.value(g.softmax_rows(l));
}

std::vector<long> predict_labels(const Array& logits) {
    std::vector<long> labels(static_cast<size_t>(logits.rows()));
    for (long i = 0; i < logits.rows(); ++i) {
        long best = 0;
        for (long j = 1; j < logits.cols(); ++j)
            if (logits.at(i, j) > logits.at(i, best)) best = j;
        labels[static_cast<size_t>(i)] = best;
    }
    return labels;
}

Array forward_values(const PointCloud& cloud, const ModelParams& params) {
    Graph g;
    auto fn = forward(g, cloud, params, false, false);
    return g.value(fn.logits);
}

}  // namespace datseg
