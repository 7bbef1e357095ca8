#pragma once

#include <vector>

#include "datseg/array.hpp"
#include "datseg/rng.hpp"

namespace datseg {

/// Per-class running count / mean / second-moment over feature vectors,
/// merged with Chan's parallel update so arbitrary batch splits agree with a
/// from-scratch computation.
class ClassCovarianceTracker {
public:
    ClassCovarianceTracker(long num_classes, long feat_dim);

    /// Merge batch statistics of the features assigned each pseudo-class.
    void update(const Array& feats, const std::vector<long>& pseudo_labels);

    long count(long cls) const { return classes_.at(static_cast<size_t>(cls)).n; }
    long num_classes() const { return static_cast<long>(classes_.size()); }
    long feat_dim() const { return dim_; }

    /// Unbiased covariance, symmetrized; identity when fewer than 2 samples.
    Array covariance(long cls) const;

    /// Lower-triangular Cholesky factor of covariance + jitter. Jitter starts
    /// at max(1e-8, 1e-6 * trace/D_f) and doubles up to 8 times.
    Array cholesky_factor(long cls) const;

    /// One draw from N(0, Sigma_cls) without row normalization.
    void sample_raw(long cls, Rng& rng, double* out) const;

private:
    struct ClassStats {
        long n = 0;
        std::vector<double> mean;
        std::vector<double> m2;  // dim x dim row-major
    };
    std::vector<ClassStats> classes_;
    long dim_;
};

}  // namespace datseg
