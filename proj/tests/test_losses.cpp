#include <gtest/gtest.h>

#include "docbin/loss.hpp"
#include "test_util.hpp"

using namespace docbin;

namespace {

Plane<double> random_probs(int h, int w, Rng& rng, double lo = 0.05, double hi = 0.95) {
    Plane<double> b(h, w);
    for (auto& v : b.data) v = rng.uniform(lo, hi);
    return b;
}

BinaryMask mask_with_foreground(int h, int w, Rng& rng, double p = 0.4) {
    BinaryMask g = docbin::testutil::random_mask(h, w, rng, p);
    if (foreground_count(g) == 0) g.at(h / 2, w / 2) = 1;
    return g;
}

Plane<double> perfect_prediction(const BinaryMask& g) {
    Plane<double> b(g.height, g.width);
    for (size_t i = 0; i < g.size(); ++i) b.data[i] = g.data[i] ? 1.0 : 0.0;
    return b;
}

// Central finite differences of a loss value w.r.t. B.
double loss_fd_error(const std::function<LossResult(const Plane<double>&)>& loss, const Plane<double>& b) {
    LossResult res = loss(b);
    Plane<double> probe = b;
    double diff_sq = 0.0, ref_sq = 0.0;
    const double h = 1e-5;
    for (size_t i = 0; i < b.size(); ++i) {
        const double orig = probe.data[i];
        probe.data[i] = orig + h;
        const double fp = loss(probe).value;
        probe.data[i] = orig - h;
        const double fm = loss(probe).value;
        probe.data[i] = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        diff_sq += (numeric - res.grad.data[i]) * (numeric - res.grad.data[i]);
        ref_sq += numeric * numeric;
    }
    return std::sqrt(diff_sq) / std::max(std::sqrt(ref_sq), 1e-12);
}

} // namespace

TEST(PseudoFLoss, SinglePixelSymbolicCase) {
    // One pixel, G=1, uniform weights, B=0.5:
    // R = 0.5, P = 1, F = 2/3, loss = 1/3, dF/dB = 2/(B+1)^2 = 8/9.
    BinaryMask g(1, 1, 1);
    Plane<double> b(1, 1, 0.5);
    LossResult res = pseudo_f_loss(b, g, uniform_weights(g));
    EXPECT_NEAR(res.value, 1.0 / 3.0, 1e-12);
    EXPECT_NEAR(res.grad.data[0], -8.0 / 9.0, 1e-12);
}

TEST(PseudoFLoss, PerfectPredictionNearZeroLoss) {
    Rng rng(51);
    BinaryMask g = mask_with_foreground(8, 8, rng);
    LossResult res = pseudo_f_loss(perfect_prediction(g), g, pseudo_weights(g));
    EXPECT_LE(res.value, 1e-5);
}

TEST(PseudoFLoss, FiniteDifferenceGradient) {
    Rng rng(52);
    for (int trial = 0; trial < 5; ++trial) {
        BinaryMask g = mask_with_foreground(8, 8, rng);
        WeightMaps wm = pseudo_weights(g);
        Plane<double> b = random_probs(8, 8, rng);
        auto loss = [&](const Plane<double>& bp) { return pseudo_f_loss(bp, g, wm); };
        EXPECT_LT(loss_fd_error(loss, b), 1e-6);
    }
}

TEST(PseudoFLoss, AllBackgroundGtIsDomainError) {
    BinaryMask g(4, 4);
    Plane<double> b(4, 4, 0.5);
    EXPECT_THROW(pseudo_f_loss(b, g, uniform_weights(g)), std::domain_error);
}

TEST(PseudoFLoss, ValueInUnitInterval) {
    Rng rng(53);
    for (int trial = 0; trial < 20; ++trial) {
        BinaryMask g = mask_with_foreground(6, 6, rng);
        Plane<double> b = random_probs(6, 6, rng, 0.01, 0.99);
        LossResult res = pseudo_f_loss(b, g, pseudo_weights(g));
        EXPECT_GE(res.value, 0.0);
        EXPECT_LE(res.value, 1.0);
    }
}

TEST(PseudoFLoss, ForegroundGradientSignSanity) {
    // Raising B on true ink with positive recall weight never increases loss.
    Rng rng(54);
    BinaryMask g = mask_with_foreground(8, 8, rng);
    WeightMaps wm = pseudo_weights(g);
    Plane<double> b = random_probs(8, 8, rng);
    LossResult res = pseudo_f_loss(b, g, wm);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c)
            if (g.at(r, c) && wm.recall.at(r, c) > 0.0) EXPECT_LE(res.grad.at(r, c), 1e-15);
}

TEST(PseudoFLoss, JointPixelPermutationInvariance) {
    Rng rng(55);
    BinaryMask g = mask_with_foreground(6, 6, rng);
    WeightMaps wm = pseudo_weights(g);
    Plane<double> b = random_probs(6, 6, rng);
    LossResult base = pseudo_f_loss(b, g, wm);

    std::vector<int> perm(36);
    for (int i = 0; i < 36; ++i) perm[static_cast<size_t>(i)] = i;
    rng.shuffle(perm);
    BinaryMask g2(6, 6);
    WeightMaps wm2{Plane<double>(6, 6), Plane<double>(6, 6), wm.scheme};
    Plane<double> b2(6, 6);
    for (int i = 0; i < 36; ++i) {
        const auto j = static_cast<size_t>(perm[static_cast<size_t>(i)]);
        g2.data[static_cast<size_t>(i)] = g.data[j];
        b2.data[static_cast<size_t>(i)] = b.data[j];
        wm2.recall.data[static_cast<size_t>(i)] = wm.recall.data[j];
        wm2.precision.data[static_cast<size_t>(i)] = wm.precision.data[j];
    }
    LossResult permuted = pseudo_f_loss(b2, g2, wm2);
    EXPECT_NEAR(permuted.value, base.value, 1e-12);
}

TEST(FLoss, EqualsPseudoWithUniformWeights) {
    Rng rng(56);
    for (int trial = 0; trial < 10; ++trial) {
        BinaryMask g = mask_with_foreground(7, 9, rng);
        Plane<double> b = random_probs(7, 9, rng);
        LossResult lhs = f_loss(b, g);
        LossResult rhs = pseudo_f_loss(b, g, uniform_weights(g));
        EXPECT_NEAR(lhs.value, rhs.value, 1e-12);
        for (size_t i = 0; i < lhs.grad.size(); ++i) EXPECT_NEAR(lhs.grad.data[i], rhs.grad.data[i], 1e-12);
    }
}

TEST(FLoss, PerfectPredictionAndGradientCheck) {
    Rng rng(57);
    BinaryMask g = mask_with_foreground(8, 8, rng);
    EXPECT_LE(f_loss(perfect_prediction(g), g).value, 1e-5);
    Plane<double> b = random_probs(8, 8, rng);
    auto loss = [&](const Plane<double>& bp) { return f_loss(bp, g); };
    EXPECT_LT(loss_fd_error(loss, b), 1e-6);
}

TEST(CombinedLoss, IsSumOfParts) {
    Rng rng(58);
    BinaryMask g = mask_with_foreground(8, 8, rng);
    WeightMaps wm = pseudo_weights(g);
    Plane<double> b = random_probs(8, 8, rng);
    LossResult sum = combined_loss(b, g, wm);
    LossResult pf = pseudo_f_loss(b, g, wm);
    LossResult f = f_loss(b, g);
    EXPECT_NEAR(sum.value, pf.value + f.value, 1e-12);
    for (size_t i = 0; i < sum.grad.size(); ++i)
        EXPECT_NEAR(sum.grad.data[i], pf.grad.data[i] + f.grad.data[i], 1e-12);

    EXPECT_LE(combined_loss(perfect_prediction(g), g, wm).value, 2e-5);
    auto loss = [&](const Plane<double>& bp) { return combined_loss(bp, g, wm); };
    EXPECT_LT(loss_fd_error(loss, b), 1e-6);
}

TEST(CrossEntropyLoss, UniformHalfIsLogTwo) {
    Rng rng(59);
    BinaryMask g = mask_with_foreground(8, 8, rng);
    Plane<double> b(8, 8, 0.5);
    EXPECT_NEAR(cross_entropy_loss(b, g).value, std::log(2.0), 1e-12);
}

TEST(CrossEntropyLoss, PerfectPredictionAndGradient) {
    Rng rng(60);
    BinaryMask g = mask_with_foreground(8, 8, rng);
    EXPECT_LE(cross_entropy_loss(perfect_prediction(g), g).value, 1e-6);
    Plane<double> b = random_probs(8, 8, rng);
    auto loss = [&](const Plane<double>& bp) { return cross_entropy_loss(bp, g); };
    EXPECT_LT(loss_fd_error(loss, b), 1e-6);
}

TEST(LossSelector, TokensRoundTrip) {
    for (auto kind : {LossKind::PseudoF, LossKind::F, LossKind::PseudoFPlusF, LossKind::CrossEntropy})
        EXPECT_EQ(parse_loss(to_string(kind)), kind);
    EXPECT_THROW(parse_loss("dice"), std::invalid_argument);
}
