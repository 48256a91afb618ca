#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "docbin/common.hpp"
#include "docbin/tensor.hpp"

namespace docbin::testutil {

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

inline BinaryMask random_mask(int h, int w, Rng& rng, double fg_prob = 0.3) {
    BinaryMask m(h, w);
    for (auto& v : m.data) v = rng.uniform() < fg_prob ? 1 : 0;
    return m;
}

inline double l2_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

/// Norm-wise relative error between an analytic gradient and a central
/// finite-difference gradient of `f` at `x` (h = 1e-5).
inline double fd_relative_error(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                const Tensor& analytic, double h = 1e-5) {
    std::vector<double> numeric(static_cast<size_t>(x.size()));
    Tensor probe = x;
    for (int64_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double fp = f(probe);
        probe[i] = orig - h;
        const double fm = f(probe);
        probe[i] = orig;
        numeric[static_cast<size_t>(i)] = (fp - fm) / (2.0 * h);
    }
    double diff_sq = 0.0;
    for (int64_t i = 0; i < x.size(); ++i) {
        const double d = numeric[static_cast<size_t>(i)] - analytic[i];
        diff_sq += d * d;
    }
    const double ref = std::max(l2_norm(numeric), 1e-12);
    return std::sqrt(diff_sq) / ref;
}

/// Scalar probe loss sum(y * g) used to finite-difference tensor->tensor ops.
inline double probe_loss(const Tensor& y, const Tensor& g) {
    double s = 0.0;
    for (int64_t i = 0; i < y.size(); ++i) s += y[i] * g[i];
    return s;
}

} // namespace docbin::testutil
