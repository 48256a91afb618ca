#include <gtest/gtest.h>

#include "docbin/ops.hpp"
#include "test_util.hpp"

using namespace docbin;
using testutil::fd_relative_error;
using testutil::probe_loss;
using testutil::random_tensor;

namespace {

// Independent six-nested-loop convolution reference.
Tensor conv2d_naive(const Tensor& x, const Tensor& w, const Tensor& b) {
    const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const int cout = w.dim(0), k = w.dim(1), pad = (k - 1) / 2;
    Tensor y({cout, h, wd});
    for (int d = 0; d < cout; ++d)
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < wd; ++c) {
                double acc = b[d];
                for (int ci = 0; ci < cin; ++ci)
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            const int rr = r + ky - pad, cc = c + kx - pad;
                            if (rr < 0 || rr >= h || cc < 0 || cc >= wd) continue;
                            acc += w.at4(d, ky, kx, ci) * x.at3(ci, rr, cc);
                        }
                y.at3(d, r, c) = acc;
            }
    return y;
}

Tensor dirac_kernel() {
    Tensor w({1, 3, 3, 1});
    w.at4(0, 1, 1, 0) = 1.0;
    return w;
}

} // namespace

TEST(Conv2d, BoxSumOfOnes) {
    Tensor x = Tensor::full({1, 3, 3}, 1.0);
    Tensor w = Tensor::full({1, 3, 3, 1}, 1.0);
    Tensor b({1});
    Tensor y = conv2d(x, w, b);
    EXPECT_DOUBLE_EQ(y.at3(0, 1, 1), 9.0);
    EXPECT_DOUBLE_EQ(y.at3(0, 0, 1), 6.0);
    EXPECT_DOUBLE_EQ(y.at3(0, 1, 0), 6.0);
    EXPECT_DOUBLE_EQ(y.at3(0, 0, 0), 4.0);
    EXPECT_DOUBLE_EQ(y.at3(0, 2, 2), 4.0);
}

TEST(Conv2d, DiracKernelIsIdentity) {
    Rng rng(1);
    Tensor x = random_tensor({1, 5, 5}, rng);
    Tensor y = conv2d(x, dirac_kernel(), Tensor({1}));
    for (int64_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(Conv2d, MatchesNaiveReference) {
    Rng rng(2);
    Tensor x = random_tensor({2, 5, 5}, rng);
    Tensor w = random_tensor({3, 3, 3, 2}, rng);
    Tensor b = random_tensor({3}, rng);
    Tensor fast = conv2d(x, w, b);
    Tensor ref = conv2d_naive(x, w, b);
    for (int64_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(fast[i], ref[i], 1e-12);
}

TEST(Conv2d, RejectsBadShapes) {
    Tensor x({2, 4, 4});
    EXPECT_THROW(conv2d(x, Tensor({1, 2, 2, 2}), Tensor({1})), std::invalid_argument); // even K
    EXPECT_THROW(conv2d(x, Tensor({1, 3, 3, 3}), Tensor({1})), std::invalid_argument); // cin mismatch
    EXPECT_THROW(conv2d(x, Tensor({2, 3, 3, 2}), Tensor({1})), std::invalid_argument); // bias size
}

TEST(Conv2d, LinearInInputWithZeroBias) {
    Rng rng(3);
    Tensor x1 = random_tensor({2, 6, 6}, rng);
    Tensor x2 = random_tensor({2, 6, 6}, rng);
    Tensor w = random_tensor({2, 3, 3, 2}, rng);
    Tensor b({2});
    const double a = 0.7, be = -1.3;
    Tensor mix({2, 6, 6});
    for (int64_t i = 0; i < mix.size(); ++i) mix[i] = a * x1[i] + be * x2[i];
    Tensor lhs = conv2d(mix, w, b);
    Tensor y1 = conv2d(x1, w, b), y2 = conv2d(x2, w, b);
    for (int64_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], a * y1[i] + be * y2[i], 1e-9);
}

TEST(Conv2d, TranslationEquivariantInInterior) {
    Rng rng(4);
    const int h = 12, wd = 12, k = 3;
    Tensor x = random_tensor({1, h, wd}, rng);
    Tensor shifted({1, h, wd});
    for (int r = 1; r < h; ++r)
        for (int c = 1; c < wd; ++c) shifted.at3(0, r, c) = x.at3(0, r - 1, c - 1);
    Tensor w = random_tensor({1, k, k, 1}, rng);
    Tensor b = random_tensor({1}, rng);
    Tensor y = conv2d(x, w, b), ys = conv2d(shifted, w, b);
    for (int r = k; r < h - k; ++r)
        for (int c = k; c < wd - k; ++c)
            EXPECT_DOUBLE_EQ(ys.at3(0, r + 1, c + 1), y.at3(0, r, c));
}

TEST(Conv2dBackward, ZeroUpstreamGivesZeroGradients) {
    Rng rng(5);
    Tensor x = random_tensor({2, 4, 4}, rng);
    Tensor w = random_tensor({2, 3, 3, 2}, rng);
    auto g = conv2d_backward(x, w, Tensor({2, 4, 4}));
    for (int64_t i = 0; i < g.x.size(); ++i) EXPECT_DOUBLE_EQ(g.x[i], 0.0);
    for (int64_t i = 0; i < g.w.size(); ++i) EXPECT_DOUBLE_EQ(g.w[i], 0.0);
    for (int64_t i = 0; i < g.b.size(); ++i) EXPECT_DOUBLE_EQ(g.b[i], 0.0);
}

TEST(Conv2dBackward, DiracKernelPassesGradientThrough) {
    Rng rng(6);
    Tensor x = random_tensor({1, 5, 5}, rng);
    Tensor g_up = random_tensor({1, 5, 5}, rng);
    auto g = conv2d_backward(x, dirac_kernel(), g_up);
    for (int64_t i = 0; i < g.x.size(); ++i) EXPECT_DOUBLE_EQ(g.x[i], g_up[i]);
}

TEST(Conv2dBackward, GradBIsSpatialSum) {
    Rng rng(7);
    Tensor x = random_tensor({1, 4, 4}, rng);
    Tensor w = random_tensor({2, 3, 3, 1}, rng);
    Tensor g_up = random_tensor({2, 4, 4}, rng);
    auto g = conv2d_backward(x, w, g_up);
    for (int d = 0; d < 2; ++d) {
        double s = 0.0;
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) s += g_up.at3(d, r, c);
        EXPECT_NEAR(g.b[d], s, 1e-12);
    }
}

TEST(Conv2dBackward, FiniteDifferenceAgreement) {
    Rng rng(8);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor x = random_tensor({2, 5, 5}, rng);
        Tensor w = random_tensor({3, 3, 3, 2}, rng);
        Tensor b = random_tensor({3}, rng);
        Tensor g_up = random_tensor({3, 5, 5}, rng);
        auto g = conv2d_backward(x, w, g_up);

        auto loss_x = [&](const Tensor& xp) { return probe_loss(conv2d(xp, w, b), g_up); };
        EXPECT_LT(fd_relative_error(loss_x, x, g.x), 1e-6);

        auto loss_w = [&](const Tensor& wp) { return probe_loss(conv2d(x, wp, b), g_up); };
        EXPECT_LT(fd_relative_error(loss_w, w, g.w), 1e-6);

        auto loss_b = [&](const Tensor& bp) { return probe_loss(conv2d(x, w, bp), g_up); };
        EXPECT_LT(fd_relative_error(loss_b, b, g.b), 1e-6);
    }
}

TEST(Relu, ForwardAndMaskBackward) {
    Tensor x({3});
    x[0] = -1.0;
    x[1] = 0.0;
    x[2] = 2.0;
    Tensor y = relu(x);
    EXPECT_DOUBLE_EQ(y[0], 0.0);
    EXPECT_DOUBLE_EQ(y[1], 0.0);
    EXPECT_DOUBLE_EQ(y[2], 2.0);
    Tensor g = relu_backward(Tensor::full({3}, 5.0), x);
    EXPECT_DOUBLE_EQ(g[0], 0.0);
    EXPECT_DOUBLE_EQ(g[1], 0.0);
    EXPECT_DOUBLE_EQ(g[2], 5.0);
}

TEST(Relu, FiniteDifferenceAwayFromKink) {
    Rng rng(9);
    Tensor x = random_tensor({2, 4, 4}, rng);
    for (int64_t i = 0; i < x.size(); ++i)
        if (std::abs(x[i]) < 1e-4) x[i] = 0.1; // keep clear of the non-smooth point
    Tensor g_up = random_tensor({2, 4, 4}, rng);
    Tensor ana = relu_backward(g_up, x);
    auto loss = [&](const Tensor& xp) { return probe_loss(relu(xp), g_up); };
    EXPECT_LT(fd_relative_error(loss, x, ana), 1e-6);
}

TEST(Sigmoid, ValuesAndSaturation) {
    Tensor x({2});
    x[0] = 0.0;
    x[1] = 40.0;
    Tensor y = sigmoid(x);
    EXPECT_DOUBLE_EQ(y[0], 0.5);
    EXPECT_NEAR(y[1], 1.0, 1e-12);
}

TEST(Sigmoid, FiniteDifference) {
    Rng rng(10);
    Tensor x = random_tensor({2, 3, 3}, rng, -3.0, 3.0);
    Tensor g_up = random_tensor({2, 3, 3}, rng);
    Tensor ana = sigmoid_backward(g_up, sigmoid(x));
    auto loss = [&](const Tensor& xp) { return probe_loss(sigmoid(xp), g_up); };
    EXPECT_LT(fd_relative_error(loss, x, ana), 1e-6);
}

TEST(AvgPool2, MeanOfQuad) {
    Tensor x({1, 2, 2});
    x.at3(0, 0, 0) = 1;
    x.at3(0, 0, 1) = 2;
    x.at3(0, 1, 0) = 3;
    x.at3(0, 1, 1) = 4;
    Tensor y = avgpool2(x);
    ASSERT_EQ(y.dim(1), 1);
    ASSERT_EQ(y.dim(2), 1);
    EXPECT_DOUBLE_EQ(y.at3(0, 0, 0), 2.5);
}

TEST(AvgPool2, ConstantStaysConstantAndOddDims) {
    Tensor x = Tensor::full({2, 5, 7}, 3.25);
    Tensor y = avgpool2(x);
    EXPECT_EQ(y.dim(1), 3);
    EXPECT_EQ(y.dim(2), 4);
    for (int64_t i = 0; i < y.size(); ++i) EXPECT_DOUBLE_EQ(y[i], 3.25);
}

TEST(AvgPool2, PreservesMeanOnEvenDims) {
    Rng rng(11);
    Tensor x = random_tensor({1, 6, 8}, rng);
    Tensor y = avgpool2(x);
    double mx = 0.0, my = 0.0;
    for (int64_t i = 0; i < x.size(); ++i) mx += x[i];
    for (int64_t i = 0; i < y.size(); ++i) my += y[i];
    EXPECT_NEAR(mx / x.size(), my / y.size(), 1e-12);
}

TEST(AvgPool2, RejectsTinyInputs) {
    EXPECT_THROW(avgpool2(Tensor({1, 1, 5})), std::invalid_argument);
}

TEST(AvgPool2, FiniteDifference) {
    Rng rng(12);
    for (auto dims : {std::pair{6, 6}, std::pair{5, 7}}) {
        Tensor x = random_tensor({1, dims.first, dims.second}, rng);
        Tensor y = avgpool2(x);
        Tensor g_up = random_tensor(y.shape(), rng);
        Tensor ana = avgpool2_backward(g_up, dims.first, dims.second);
        auto loss = [&](const Tensor& xp) { return probe_loss(avgpool2(xp), g_up); };
        EXPECT_LT(fd_relative_error(loss, x, ana), 1e-6);
    }
}

TEST(BilinearUpsample, SingleSampleReplicates) {
    Tensor x = Tensor::full({1, 1, 1}, 4.25);
    Tensor y = bilinear_upsample(x, 3, 5);
    for (int64_t i = 0; i < y.size(); ++i) EXPECT_DOUBLE_EQ(y[i], 4.25);
}

TEST(BilinearUpsample, AlignCornersMidpoint) {
    Tensor x({1, 1, 2});
    x.at3(0, 0, 0) = 0.0;
    x.at3(0, 0, 1) = 1.0;
    Tensor y = bilinear_upsample(x, 1, 3);
    EXPECT_DOUBLE_EQ(y.at3(0, 0, 0), 0.0);
    EXPECT_DOUBLE_EQ(y.at3(0, 0, 1), 0.5);
    EXPECT_DOUBLE_EQ(y.at3(0, 0, 2), 1.0);
}

TEST(BilinearUpsample, CornersCoincide) {
    Rng rng(13);
    Tensor x = random_tensor({2, 3, 4}, rng);
    Tensor y = bilinear_upsample(x, 9, 11);
    for (int c = 0; c < 2; ++c) {
        EXPECT_DOUBLE_EQ(y.at3(c, 0, 0), x.at3(c, 0, 0));
        EXPECT_DOUBLE_EQ(y.at3(c, 0, 10), x.at3(c, 0, 3));
        EXPECT_DOUBLE_EQ(y.at3(c, 8, 0), x.at3(c, 2, 0));
        EXPECT_DOUBLE_EQ(y.at3(c, 8, 10), x.at3(c, 2, 3));
    }
}

TEST(BilinearUpsample, RejectsDownscale) {
    EXPECT_THROW(bilinear_upsample(Tensor({1, 4, 4}), 2, 4), std::invalid_argument);
}

TEST(BilinearUpsample, FiniteDifference) {
    Rng rng(14);
    Tensor x = random_tensor({2, 3, 3}, rng);
    Tensor g_up = random_tensor({2, 7, 7}, rng);
    Tensor ana = bilinear_upsample_backward(g_up, 3, 3);
    auto loss = [&](const Tensor& xp) { return probe_loss(bilinear_upsample(xp, 7, 7), g_up); };
    EXPECT_LT(fd_relative_error(loss, x, ana), 1e-6);
}

TEST(ConcatChannels, ShapeAndRoundTrip) {
    Rng rng(15);
    std::vector<Tensor> xs;
    xs.push_back(random_tensor({1, 4, 4}, rng));
    xs.push_back(random_tensor({2, 4, 4}, rng));
    Tensor y = concat_channels(xs);
    ASSERT_EQ(y.dim(0), 3);
    ASSERT_EQ(y.dim(1), 4);
    ASSERT_EQ(y.dim(2), 4);
    auto parts = split_channels(y, {1, 2});
    ASSERT_EQ(parts.size(), 2u);
    for (size_t p = 0; p < parts.size(); ++p)
        for (int64_t i = 0; i < parts[p].size(); ++i) EXPECT_DOUBLE_EQ(parts[p][i], xs[p][i]);
}

TEST(ConcatChannels, MismatchedSpatialDimsRejected) {
    std::vector<Tensor> xs{Tensor({1, 4, 4}), Tensor({1, 4, 5})};
    EXPECT_THROW(concat_channels(xs), std::invalid_argument);
}

TEST(ConcatChannels, GradientRoutesToCorrectInput) {
    // Perturbing upstream gradient on channel 0 must only affect input 0.
    Tensor g_up({3, 2, 2});
    g_up.at3(0, 1, 1) = 2.0;
    auto parts = split_channels(g_up, {1, 2});
    EXPECT_DOUBLE_EQ(parts[0].at3(0, 1, 1), 2.0);
    for (int64_t i = 0; i < parts[1].size(); ++i) EXPECT_DOUBLE_EQ(parts[1][i], 0.0);
}

TEST(ClipGradients, UnderThresholdUnchanged) {
    Tensor g({2});
    g[0] = 3.0;
    g[1] = 4.0; // norm 5
    std::vector<Tensor> gs{g};
    const double norm = clip_gradients(gs, 10.0);
    EXPECT_DOUBLE_EQ(norm, 5.0);
    EXPECT_DOUBLE_EQ(gs[0][0], 3.0);
    EXPECT_DOUBLE_EQ(gs[0][1], 4.0);
}

TEST(ClipGradients, ScalesDownToMaxNorm) {
    Tensor g({2});
    g[0] = 30.0;
    g[1] = 40.0; // norm 50
    std::vector<Tensor> gs{g};
    clip_gradients(gs, 10.0);
    EXPECT_NEAR(gs[0][0], 6.0, 1e-12);
    EXPECT_NEAR(gs[0][1], 8.0, 1e-12);
}

TEST(ClipGradients, PostNormIsMinOfNormAndMax) {
    Rng rng(16);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<Tensor> gs;
        gs.push_back(random_tensor({3, 3}, rng, -4.0, 4.0));
        gs.push_back(random_tensor({5}, rng, -4.0, 4.0));
        double pre = 0.0;
        for (const auto& g : gs)
            for (int64_t i = 0; i < g.size(); ++i) pre += g[i] * g[i];
        pre = std::sqrt(pre);
        clip_gradients(gs, 3.0);
        double post = 0.0;
        for (const auto& g : gs)
            for (int64_t i = 0; i < g.size(); ++i) post += g[i] * g[i];
        post = std::sqrt(post);
        EXPECT_NEAR(post, std::min(pre, 3.0), 1e-9);
    }
    EXPECT_THROW(clip_gradients(std::vector<Tensor*>{}, 0.0), std::invalid_argument);
}

TEST(SgdStep, UpdateFormula) {
    Tensor p = Tensor::full({1}, 1.0);
    sgd_step(p, Tensor({1}), 0.1, 0.0);
    EXPECT_DOUBLE_EQ(p[0], 1.0); // zero gradient

    p = Tensor::full({1}, 0.0);
    sgd_step(p, Tensor::full({1}, 2.0), 0.5, 0.0);
    EXPECT_DOUBLE_EQ(p[0], -1.0); // plain step

    p = Tensor::full({1}, 1.0);
    sgd_step(p, Tensor({1}), 0.1, 0.5);
    EXPECT_DOUBLE_EQ(p[0], 0.95); // decay only

    EXPECT_THROW(sgd_step(p, Tensor({2}), 0.1, 0.0), std::invalid_argument);
}
