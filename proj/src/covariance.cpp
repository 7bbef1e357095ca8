#include "datseg/covariance.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace datseg {

ClassCovarianceTracker::ClassCovarianceTracker(long num_classes, long feat_dim) : dim_(feat_dim) {
    if (num_classes < 1 || feat_dim < 1)
        throw std::invalid_argument("ClassCovarianceTracker: invalid dimensions");
    classes_.resize(static_cast<size_t>(num_classes));
    for (auto& c : classes_) {
        c.mean.assign(static_cast<size_t>(dim_), 0.0);
        c.m2.assign(static_cast<size_t>(dim_ * dim_), 0.0);
    }
}

void ClassCovarianceTracker::update(const Array& feats, const std::vector<long>& pseudo_labels) {
    if (feats.cols() != dim_)
        throw std::invalid_argument("ClassCovarianceTracker: feature dim " + std::to_string(feats.cols()) +
                                    " != " + std::to_string(dim_));
    if (static_cast<long>(pseudo_labels.size()) != feats.rows())
        throw std::invalid_argument("ClassCovarianceTracker: label count mismatch");
    long k_classes = num_classes();
    size_t d = static_cast<size_t>(dim_);
    for (long cls = 0; cls < k_classes; ++cls) {
        // batch statistics of this class
        long nb = 0;
        std::vector<double> bmean(d, 0.0);
        for (long i = 0; i < feats.rows(); ++i) {
            if (pseudo_labels[static_cast<size_t>(i)] != cls) continue;
            ++nb;
            for (long j = 0; j < dim_; ++j)
                bmean[static_cast<size_t>(j)] += (feats.at(i, j) - bmean[static_cast<size_t>(j)]) / nb;
        }
        if (nb == 0) continue;
        std::vector<double> bm2(d * d, 0.0);
        for (long i = 0; i < feats.rows(); ++i) {
            if (pseudo_labels[static_cast<size_t>(i)] != cls) continue;
            for (long p = 0; p < dim_; ++p) {
                double dp = feats.at(i, p) - bmean[static_cast<size_t>(p)];
                for (long q = 0; q < dim_; ++q)
                    bm2[static_cast<size_t>(p * dim_ + q)] += dp * (feats.at(i, q) - bmean[static_cast<size_t>(q)]);
            }
        }
        // Chan's merge of (n, mean, M2) pairs
        auto& st = classes_[static_cast<size_t>(cls)];
        long na = st.n;
        long n = na + nb;
        double ratio = static_cast<double>(na) * static_cast<double>(nb) / static_cast<double>(n);
        std::vector<double> delta(d);
        for (long j = 0; j < dim_; ++j) delta[static_cast<size_t>(j)] = bmean[static_cast<size_t>(j)] - st.mean[static_cast<size_t>(j)];
        for (long p = 0; p < dim_; ++p)
            for (long q = 0; q < dim_; ++q)
                st.m2[static_cast<size_t>(p * dim_ + q)] +=
                    bm2[static_cast<size_t>(p * dim_ + q)] + ratio * delta[static_cast<size_t>(p)] * delta[static_cast<size_t>(q)];
        for (long j = 0; j < dim_; ++j)
            st.mean[static_cast<size_t>(j)] += delta[static_cast<size_t>(j)] * static_cast<double>(nb) / static_cast<double>(n);
        st.n = n;
    }
}

Array ClassCovarianceTracker::covariance(long cls) const {
    const auto& st = classes_.at(static_cast<size_t>(cls));
    Array cov({dim_, dim_});
    if (st.n < 2) {
        for (long j = 0; j < dim_; ++j) cov.at(j, j) = 1.0;
        return cov;
    }
    double denom = static_cast<double>(st.n - 1);
    for (long p = 0; p < dim_; ++p)
        for (long q = 0; q < dim_; ++q) {
            // symmetrize against accumulation round-off
            double a = st.m2[static_cast<size_t>(p * dim_ + q)];
            double b = st.m2[static_cast<size_t>(q * dim_ + p)];
            cov.at(p, q) = 0.5 * (a + b) / denom;
        }
    return cov;
}

namespace {

// in-place lower Cholesky; returns false if not positive definite
bool cholesky(Array& a) {
    long n = a.rows();
    for (long i = 0; i < n; ++i) {
        for (long j = 0; j <= i; ++j) {
            double s = a.at(i, j);
            for (long k = 0; k < j; ++k) s -= a.at(i, k) * a.at(j, k);
            if (i == j) {
                if (s <= 0.0) return false;
                a.at(i, j) = std::sqrt(s);
            } else {
                a.at(i, j) = s / a.at(j, j);
            }
        }
        for (long j = i + 1; j < n; ++j) a.at(i, j) = 0.0;
    }
    return true;
}

}  // namespace

Array ClassCovarianceTracker::cholesky_factor(long cls) const {
    Array cov = covariance(cls);
    double trace = 0;
    for (long j = 0; j < dim_; ++j) trace += cov.at(j, j);
    double jitter = std::max(1e-8, 1e-6 * trace / static_cast<double>(dim_));
    for (int attempt = 0; attempt <= 8; ++attempt) {
        Array l = cov;
        for (long j = 0; j < dim_; ++j) l.at(j, j) += jitter;
        if (cholesky(l)) return l;
        jitter *= 2.0;
    }
    throw std::runtime_error("ClassCovarianceTracker: covariance factorization failed for class " +
                             std::to_string(cls));
}

void ClassCovarianceTracker::sample_raw(long cls, Rng& rng, double* out) const {
    Array l = cholesky_factor(cls);
    std::vector<double> z(static_cast<size_t>(dim_));
    for (long j = 0; j < dim_; ++j) z[static_cast<size_t>(j)] = rng.normal();
    for (long i = 0; i < dim_; ++i) {
        double s = 0;
        for (long j = 0; j <= i; ++j) s += l.at(i, j) * z[static_cast<size_t>(j)];
        out[i] = s;
    }
}

}  // namespace datseg
