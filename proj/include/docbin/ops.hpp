#pragma once

#include <algorithm>
#include <cmath>

#include "docbin/tensor.hpp"

namespace docbin {

// ---------------------------------------------------------------------------
// conv2d: same-size 2D cross-correlation with zero padding of (K-1)/2.
//   x: {Cin,H,W}, w: {Cout,K,K,Cin}, b: {Cout}  ->  {Cout,H,W}
// ---------------------------------------------------------------------------

inline void check_conv_shapes(const Tensor& x, const Tensor& w, const Tensor& b) {
    require(x.rank() == 3, "conv2d: input must be {C,H,W}");
    require(w.rank() == 4, "conv2d: weights must be {Cout,K,K,Cin}");
    require(b.rank() == 1, "conv2d: bias must be {Cout}");
    require(w.dim(1) == w.dim(2), "conv2d: kernel must be square");
    require(w.dim(1) % 2 == 1, "conv2d: kernel size must be odd");
    require(w.dim(3) == x.dim(0), "conv2d: kernel input channels mismatch");
    require(b.dim(0) == w.dim(0), "conv2d: bias size mismatch");
}

namespace detail {

/// Four-chain dot product. Kept scalar on purpose: on several targets the
/// auto-vectorized reduction is slower than independent scalar FMA chains,
/// and the fixed chain layout keeps summation order deterministic.
#if defined(__GNUC__) && !defined(__clang__)
__attribute__((optimize("no-tree-vectorize")))
#endif
inline double row_dot(const double* __restrict a, const double* __restrict b, int n) {
    double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 += a[i] * b[i];
        acc1 += a[i + 1] * b[i + 1];
        acc2 += a[i + 2] * b[i + 2];
        acc3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) acc0 += a[i] * b[i];
    return (acc0 + acc1) + (acc2 + acc3);
}

/// Rows of `t` copied into a (k-1)/2 zero border per side along the width
/// axis. Padding contributes exact zero terms, so results match the
/// bounds-checked formulation bit for bit while the inner loops stay
/// branch-free.
inline std::vector<double> zero_pad_rows(const Tensor& t, int k) {
    const int ch = t.dim(0), h = t.dim(1), wd = t.dim(2), pad = (k - 1) / 2;
    const int pw = wd + 2 * pad;
    std::vector<double> out(static_cast<size_t>(ch) * h * pw, 0.0);
    for (int c = 0; c < ch; ++c)
        for (int r = 0; r < h; ++r) {
            const double* src = t.data() + (static_cast<int64_t>(c) * h + r) * wd;
            double* dst = out.data() + (static_cast<size_t>(c) * h + r) * pw + pad;
            std::copy(src, src + wd, dst);
        }
    return out;
}

/// Kernels repacked as [out][in][ky][kx] so kx is contiguous.
inline std::vector<double> repack_kernels(const Tensor& w) {
    const int cout = w.dim(0), k = w.dim(1), cin = w.dim(3);
    std::vector<double> out(static_cast<size_t>(cout) * cin * k * k);
    for (int d = 0; d < cout; ++d)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx)
                for (int ci = 0; ci < cin; ++ci)
                    out[((static_cast<size_t>(d) * cin + ci) * k + ky) * k + kx] = w.at4(d, ky, kx, ci);
    return out;
}

} // namespace detail

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
    check_conv_shapes(x, w, b);
    const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const int cout = w.dim(0), k = w.dim(1), pad = (k - 1) / 2;
    const int pw = wd + 2 * pad;

    const std::vector<double> xpad = detail::zero_pad_rows(x, k);
    const std::vector<double> kernels = detail::repack_kernels(w);

    Tensor y({cout, h, wd});
    std::vector<double> acc(static_cast<size_t>(wd));
    for (int d = 0; d < cout; ++d)
        for (int r = 0; r < h; ++r) {
            std::fill(acc.begin(), acc.end(), b[d]);
            for (int ci = 0; ci < cin; ++ci) {
                const double* xbase = xpad.data() + static_cast<size_t>(ci) * h * pw;
                const double* wbase = kernels.data() + (static_cast<size_t>(d) * cin + ci) * k * k;
                for (int ky = 0; ky < k; ++ky) {
                    const int rr = r + ky - pad;
                    if (rr < 0 || rr >= h) continue;
                    const double* xrow = xbase + static_cast<size_t>(rr) * pw;
                    const double* ww = wbase + static_cast<size_t>(ky) * k;
                    for (int kx = 0; kx < k; ++kx) {
                        const double wv = ww[kx];
                        const double* __restrict xs = xrow + kx;
                        double* __restrict accp = acc.data();
                        for (int c = 0; c < wd; ++c) accp[c] += wv * xs[c];
                    }
                }
            }
            std::copy(acc.begin(), acc.end(), y.data() + (static_cast<int64_t>(d) * h + r) * wd);
        }
    return y;
}

struct ConvGradients {
    Tensor x;
    Tensor w;
    Tensor b;
};

inline ConvGradients conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& grad_out) {
    require(x.rank() == 3 && w.rank() == 4 && grad_out.rank() == 3, "conv2d_backward: bad ranks");
    require(w.dim(3) == x.dim(0), "conv2d_backward: kernel input channels mismatch");
    require(grad_out.dim(0) == w.dim(0) && grad_out.dim(1) == x.dim(1) && grad_out.dim(2) == x.dim(2),
            "conv2d_backward: grad_out shape mismatch");
    const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const int cout = w.dim(0), k = w.dim(1), pad = (k - 1) / 2;
    const int pw = wd + 2 * pad;

    ConvGradients g{Tensor({cin, h, wd}), Tensor({cout, k, k, cin}), Tensor({cout})};

    for (int d = 0; d < cout; ++d) {
        const double* go = grad_out.data() + static_cast<int64_t>(d) * h * wd;
        double acc = 0.0;
        for (int64_t i = 0; i < static_cast<int64_t>(h) * wd; ++i) acc += go[i];
        g.b[d] = acc;
    }

    const std::vector<double> xpad = detail::zero_pad_rows(x, k);
    const std::vector<double> gopad = detail::zero_pad_rows(grad_out, k);
    const std::vector<double> kernels = detail::repack_kernels(w);

    // grad_x: full correlation of grad_out with the transposed kernels,
    // accumulated row-wise. go[rr-ky+pad][c-kx+pad] lives at padded column
    // c + 2*pad - kx.
    std::vector<double> acc(static_cast<size_t>(wd));
    for (int ci = 0; ci < cin; ++ci)
        for (int r = 0; r < h; ++r) {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (int d = 0; d < cout; ++d) {
                const double* gobase = gopad.data() + static_cast<size_t>(d) * h * pw;
                const double* wbase = kernels.data() + (static_cast<size_t>(d) * cin + ci) * k * k;
                for (int ky = 0; ky < k; ++ky) {
                    const int rr = r - ky + pad;
                    if (rr < 0 || rr >= h) continue;
                    const double* gorow = gobase + static_cast<size_t>(rr) * pw;
                    const double* ww = wbase + static_cast<size_t>(ky) * k;
                    for (int kx = 0; kx < k; ++kx) {
                        const double wv = ww[kx];
                        const double* __restrict gs = gorow + (2 * pad - kx);
                        double* __restrict accp = acc.data();
                        for (int c = 0; c < wd; ++c) accp[c] += wv * gs[c];
                    }
                }
            }
            std::copy(acc.begin(), acc.end(), g.x.data() + (static_cast<int64_t>(ci) * h + r) * wd);
        }

    // grad_w: per-tap dot products between grad_out rows and shifted padded
    // input rows; four independent chains keep the FMA pipeline busy while
    // the summation order stays fixed.
    for (int d = 0; d < cout; ++d) {
        const double* goplane = grad_out.data() + static_cast<int64_t>(d) * h * wd;
        for (int ci = 0; ci < cin; ++ci) {
            const double* xbase = xpad.data() + static_cast<size_t>(ci) * h * pw;
            for (int ky = 0; ky < k; ++ky) {
                const int dy = ky - pad;
                const int r0 = std::max(0, -dy), r1 = std::min(h, h - dy);
                for (int kx = 0; kx < k; ++kx) {
                    double acc = 0.0;
                    for (int r = r0; r < r1; ++r)
                        acc += detail::row_dot(goplane + static_cast<int64_t>(r) * wd,
                                               xbase + static_cast<size_t>(r + dy) * pw + kx, wd);
                    g.w.at4(d, ky, kx, ci) = acc;
                }
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& x) {
    Tensor y = x;
    for (int64_t i = 0; i < y.size(); ++i) y[i] = std::max(0.0, y[i]);
    return y;
}

// Subgradient at exactly 0 is 0.
inline Tensor relu_backward(const Tensor& grad_y, const Tensor& x) {
    require(grad_y.same_shape(x), "relu_backward: shape mismatch");
    Tensor g = grad_y;
    for (int64_t i = 0; i < g.size(); ++i)
        if (x[i] <= 0.0) g[i] = 0.0;
    return g;
}

inline Tensor sigmoid(const Tensor& x) {
    Tensor y = x;
    for (int64_t i = 0; i < y.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-y[i]));
    return y;
}

/// Backward from the forward output y (not the pre-activation).
inline Tensor sigmoid_backward(const Tensor& grad_y, const Tensor& y) {
    require(grad_y.same_shape(y), "sigmoid_backward: shape mismatch");
    Tensor g = grad_y;
    for (int64_t i = 0; i < g.size(); ++i) g[i] *= y[i] * (1.0 - y[i]);
    return g;
}

// ---------------------------------------------------------------------------
// avgpool2: non-overlapping 2x2 means; odd trailing row/col are edge-replicated
// before pooling, so output is {D, ceil(H/2), ceil(W/2)}.
// ---------------------------------------------------------------------------

inline Tensor avgpool2(const Tensor& x) {
    require(x.rank() == 3, "avgpool2: input must be {C,H,W}");
    const int d = x.dim(0), h = x.dim(1), w = x.dim(2);
    require(h >= 2 && w >= 2, "avgpool2: spatial extents must be >= 2");
    const int oh = (h + 1) / 2, ow = (w + 1) / 2;
    Tensor y({d, oh, ow});
    for (int c = 0; c < d; ++c)
        for (int r = 0; r < oh; ++r)
            for (int col = 0; col < ow; ++col) {
                const int r0 = 2 * r, r1 = std::min(2 * r + 1, h - 1);
                const int c0 = 2 * col, c1 = std::min(2 * col + 1, w - 1);
                y.at3(c, r, col) =
                    0.25 * (x.at3(c, r0, c0) + x.at3(c, r0, c1) + x.at3(c, r1, c0) + x.at3(c, r1, c1));
            }
    return y;
}

inline Tensor avgpool2_backward(const Tensor& grad_y, int in_h, int in_w) {
    require(grad_y.rank() == 3, "avgpool2_backward: grad must be {C,H,W}");
    const int d = grad_y.dim(0), oh = grad_y.dim(1), ow = grad_y.dim(2);
    require(oh == (in_h + 1) / 2 && ow == (in_w + 1) / 2, "avgpool2_backward: size mismatch");
    Tensor gx({d, in_h, in_w});
    for (int c = 0; c < d; ++c)
        for (int r = 0; r < oh; ++r)
            for (int col = 0; col < ow; ++col) {
                const double share = 0.25 * grad_y.at3(c, r, col);
                const int r0 = 2 * r, r1 = std::min(2 * r + 1, in_h - 1);
                const int c0 = 2 * col, c1 = std::min(2 * col + 1, in_w - 1);
                gx.at3(c, r0, c0) += share;
                gx.at3(c, r0, c1) += share;
                gx.at3(c, r1, c0) += share;
                gx.at3(c, r1, c1) += share;
            }
    return gx;
}

// ---------------------------------------------------------------------------
// bilinear_upsample: align-corners interpolation to {D,H,W}, H>=h, W>=w.
// Output corner samples coincide with input corner samples; a singleton axis
// is replicated.
// ---------------------------------------------------------------------------

namespace detail {
struct LinSample {
    int i0, i1;
    double f; // weight of i1
};

inline LinSample lin_sample(int out_i, int in_n, int out_n) {
    if (in_n == 1 || out_n == 1) return {0, 0, 0.0};
    const double pos = static_cast<double>(out_i) * (in_n - 1) / (out_n - 1);
    int i0 = static_cast<int>(pos);
    if (i0 > in_n - 2) i0 = in_n - 2;
    return {i0, i0 + 1, pos - i0};
}
} // namespace detail

inline Tensor bilinear_upsample(const Tensor& x, int out_h, int out_w) {
    require(x.rank() == 3, "bilinear_upsample: input must be {C,H,W}");
    const int d = x.dim(0), h = x.dim(1), w = x.dim(2);
    require(out_h >= h && out_w >= w, "bilinear_upsample: target must not downscale");
    Tensor y({d, out_h, out_w});
    for (int r = 0; r < out_h; ++r) {
        const auto sy = detail::lin_sample(r, h, out_h);
        for (int col = 0; col < out_w; ++col) {
            const auto sx = detail::lin_sample(col, w, out_w);
            for (int c = 0; c < d; ++c) {
                y.at3(c, r, col) = (1.0 - sy.f) * (1.0 - sx.f) * x.at3(c, sy.i0, sx.i0) +
                                   (1.0 - sy.f) * sx.f * x.at3(c, sy.i0, sx.i1) +
                                   sy.f * (1.0 - sx.f) * x.at3(c, sy.i1, sx.i0) +
                                   sy.f * sx.f * x.at3(c, sy.i1, sx.i1);
            }
        }
    }
    return y;
}

inline Tensor bilinear_upsample_backward(const Tensor& grad_y, int in_h, int in_w) {
    require(grad_y.rank() == 3, "bilinear_upsample_backward: grad must be {C,H,W}");
    const int d = grad_y.dim(0), oh = grad_y.dim(1), ow = grad_y.dim(2);
    require(oh >= in_h && ow >= in_w, "bilinear_upsample_backward: size mismatch");
    Tensor gx({d, in_h, in_w});
    for (int r = 0; r < oh; ++r) {
        const auto sy = detail::lin_sample(r, in_h, oh);
        for (int col = 0; col < ow; ++col) {
            const auto sx = detail::lin_sample(col, in_w, ow);
            for (int c = 0; c < d; ++c) {
                const double g = grad_y.at3(c, r, col);
                gx.at3(c, sy.i0, sx.i0) += (1.0 - sy.f) * (1.0 - sx.f) * g;
                gx.at3(c, sy.i0, sx.i1) += (1.0 - sy.f) * sx.f * g;
                gx.at3(c, sy.i1, sx.i0) += sy.f * (1.0 - sx.f) * g;
                gx.at3(c, sy.i1, sx.i1) += sy.f * sx.f * g;
            }
        }
    }
    return gx;
}

// ---------------------------------------------------------------------------
// Channel concatenation and its backward (split)
// ---------------------------------------------------------------------------

inline Tensor concat_channels(const std::vector<Tensor>& xs) {
    require(!xs.empty(), "concat_channels: empty input list");
    const int h = xs[0].dim(1), w = xs[0].dim(2);
    int total = 0;
    for (const auto& x : xs) {
        require(x.rank() == 3, "concat_channels: inputs must be {C,H,W}");
        require(x.dim(1) == h && x.dim(2) == w, "concat_channels: spatial dims mismatch");
        total += x.dim(0);
    }
    Tensor y({total, h, w});
    double* dst = y.data();
    for (const auto& x : xs) {
        std::copy(x.data(), x.data() + x.size(), dst);
        dst += x.size();
    }
    return y;
}

inline std::vector<Tensor> split_channels(const Tensor& grad_y, const std::vector<int>& sizes) {
    int total = 0;
    for (int s : sizes) total += s;
    require(grad_y.rank() == 3 && grad_y.dim(0) == total, "split_channels: channel count mismatch");
    std::vector<Tensor> out;
    out.reserve(sizes.size());
    const double* src = grad_y.data();
    for (int s : sizes) {
        Tensor t({s, grad_y.dim(1), grad_y.dim(2)});
        std::copy(src, src + t.size(), t.data());
        src += t.size();
        out.push_back(std::move(t));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Optimizer helpers
// ---------------------------------------------------------------------------

/// Scales all gradients by max_norm/norm when the global L2 norm exceeds
/// max_norm. Returns the pre-clip norm.
inline double clip_gradients(const std::vector<Tensor*>& grads, double max_norm) {
    require(max_norm > 0.0, "clip_gradients: max_norm must be positive");
    double sq = 0.0;
    for (const Tensor* g : grads)
        for (int64_t i = 0; i < g->size(); ++i) sq += (*g)[i] * (*g)[i];
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        for (Tensor* g : grads)
            for (int64_t i = 0; i < g->size(); ++i) (*g)[i] *= scale;
    }
    return norm;
}

inline double clip_gradients(std::vector<Tensor>& grads, double max_norm) {
    std::vector<Tensor*> ptrs;
    ptrs.reserve(grads.size());
    for (auto& g : grads) ptrs.push_back(&g);
    return clip_gradients(ptrs, max_norm);
}

/// p <- p - lr * (g + weight_decay * p). Callers pass weight_decay = 0 for
/// bias tensors, which the paper's recipe exempts from decay.
inline void sgd_step(Tensor& p, const Tensor& g, double lr, double weight_decay) {
    require(p.same_shape(g), "sgd_step: shape mismatch");
    require(lr > 0.0, "sgd_step: learning rate must be positive");
    for (int64_t i = 0; i < p.size(); ++i) p[i] -= lr * (g[i] + weight_decay * p[i]);
}

} // namespace docbin
