#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

#include "docbin/common.hpp"

namespace docbin {

/// Dense N-dimensional array of doubles, row-major, innermost axis = width.
/// Images and activations use shape {channels, height, width}; convolution
/// kernels use {out, k, k, in}.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        int64_t n = 1;
        for (int e : shape_) {
            require(e > 0, "Tensor: extents must be positive");
            n *= e;
        }
        data_.assign(static_cast<size_t>(n), 0.0);
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, double v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // {c,h,w} accessor
    double& at3(int c, int r, int col) {
        return data_[(static_cast<size_t>(c) * dim(1) + r) * dim(2) + col];
    }
    double at3(int c, int r, int col) const {
        return data_[(static_cast<size_t>(c) * dim(1) + r) * dim(2) + col];
    }

    // {out,k,k,in} accessor
    double& at4(int d, int ky, int kx, int c) {
        return data_[((static_cast<size_t>(d) * dim(1) + ky) * dim(2) + kx) * dim(3) + c];
    }
    double at4(int d, int ky, int kx, int c) const {
        return data_[((static_cast<size_t>(d) * dim(1) + ky) * dim(2) + kx) * dim(3) + c];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

inline Tensor tensor_from_plane(const GrayImage& img) {
    Tensor t({1, img.height, img.width});
    std::copy(img.data.begin(), img.data.end(), t.data());
    return t;
}

inline GrayImage plane_from_channel(const Tensor& t, int c) {
    GrayImage out(t.dim(1), t.dim(2));
    const double* src = t.data() + static_cast<int64_t>(c) * t.dim(1) * t.dim(2);
    std::copy(src, src + out.size(), out.data.begin());
    return out;
}

} // namespace docbin
