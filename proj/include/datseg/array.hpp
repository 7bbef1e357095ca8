#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace datseg {

/// Dense row-major array of doubles. The only numeric carrier in the library.
struct Array {
    std::vector<long> shape;
    std::vector<double> v;

    Array() = default;

    explicit Array(std::vector<long> s, double fill = 0.0) : shape(std::move(s)) {
        long n = 1;
        for (long e : shape) {
            if (e <= 0) throw std::invalid_argument("Array: non-positive extent in shape " + shape_str());
            n *= e;
        }
        v.assign(static_cast<size_t>(n), fill);
    }

    static Array from(std::vector<long> s, std::vector<double> vals) {
        Array a;
        a.shape = std::move(s);
        long n = 1;
        for (long e : a.shape) n *= e;
        if (n != static_cast<long>(vals.size()))
            throw std::invalid_argument("Array::from: " + std::to_string(vals.size()) +
                                        " values for shape " + a.shape_str());
        a.v = std::move(vals);
        return a;
    }

    static Array scalar(double x) { return from({1}, {x}); }

    long size() const { return static_cast<long>(v.size()); }
    long rows() const { return shape.empty() ? 0 : shape[0]; }
    long cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    double& at(long i, long j) { return v[static_cast<size_t>(i * cols() + j)]; }
    double at(long i, long j) const { return v[static_cast<size_t>(i * cols() + j)]; }

    bool same_shape(const Array& o) const { return shape == o.shape; }

    bool is_scalar() const { return size() == 1; }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(";
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
        os << ")";
        return os.str();
    }
};

inline double row_norm(const Array& a, long i) {
    double s = 0;
    for (long j = 0; j < a.cols(); ++j) s += a.at(i, j) * a.at(i, j);
    return std::sqrt(s);
}

}  // namespace datseg
