#pragma once

#include <algorithm>
#include <cmath>

#include "docbin/pseudo_weights.hpp"

namespace docbin {

/// Training objectives are minimized, so F-style losses are 1 - F and grad is
/// d(loss)/dB.
struct LossResult {
    double value = 0.0;
    Plane<double> grad;
};

enum class LossKind { PseudoF, F, PseudoFPlusF, CrossEntropy };

inline LossKind parse_loss(const std::string& token) {
    if (token == "pfm") return LossKind::PseudoF;
    if (token == "fm") return LossKind::F;
    if (token == "pfm+fm") return LossKind::PseudoFPlusF;
    if (token == "ce") return LossKind::CrossEntropy;
    throw std::invalid_argument("unknown loss '" + token + "' (expected pfm|fm|pfm+fm|ce)");
}

inline std::string to_string(LossKind kind) {
    switch (kind) {
    case LossKind::PseudoF: return "pfm";
    case LossKind::F: return "fm";
    case LossKind::PseudoFPlusF: return "pfm+fm";
    case LossKind::CrossEntropy: return "ce";
    }
    return "?";
}

namespace detail {
constexpr double kProbEps = 1e-7;

inline Plane<double> clamp_probs(const Plane<double>& b) {
    Plane<double> out = b;
    for (auto& v : out.data) v = std::clamp(v, kProbEps, 1.0 - kProbEps);
    return out;
}
} // namespace detail

/// Pseudo F-measure loss, 1 - F_ps, with the exact analytic gradient:
///   F = 2RP/(R+P),      dF/dB = 2 (dR/dB P^2 + dP/dB R^2) / (P+R)^2
///   R = sum(B G R^W)/sum(G R^W)      => dR/dB_ij = G_ij R^W_ij / sum(G R^W)
///   P = sum(G B P^W)/sum(B P^W)      => dP/dB_ij = P^W_ij (sum(B P^W) G_ij
///                                        - sum(G B P^W)) / sum(B P^W)^2
/// Probabilities are clamped to [eps, 1-eps]; the clamp is treated as the
/// identity for gradient purposes.
inline LossResult pseudo_f_loss(const Plane<double>& b, const BinaryMask& g, const WeightMaps& wm) {
    require(b.same_shape(wm.recall) && wm.recall.same_shape(wm.precision), "pseudo_f_loss: shape mismatch");
    require(b.height == g.height && b.width == g.width, "pseudo_f_loss: prediction/gt shape mismatch");

    const Plane<double> bc = detail::clamp_probs(b);
    double recall_den = 0.0, recall_num = 0.0, prec_den = 0.0, prec_num = 0.0;
    for (size_t i = 0; i < bc.size(); ++i) {
        const double gv = g.data[i];
        recall_den += gv * wm.recall.data[i];
        recall_num += bc.data[i] * gv * wm.recall.data[i];
        prec_den += bc.data[i] * wm.precision.data[i];
        prec_num += gv * bc.data[i] * wm.precision.data[i];
    }
    require_domain(recall_den > 0.0, "pseudo_f_loss: all-background ground truth (zero recall denominator)");
    // prec_den >= eps * sum(P^W) > 0 after clamping

    const double recall = recall_num / recall_den;
    const double precision = prec_num / prec_den;
    const double f = 2.0 * recall * precision / (recall + precision);

    LossResult res;
    res.value = 1.0 - f;
    res.grad = Plane<double>(b.height, b.width, 0.0);
    const double denom_sq = (precision + recall) * (precision + recall);
    const double prec_den_sq = prec_den * prec_den;
    for (size_t i = 0; i < bc.size(); ++i) {
        const double gv = g.data[i];
        const double dr = gv * wm.recall.data[i] / recall_den;
        const double dp = wm.precision.data[i] * (prec_den * gv - prec_num) / prec_den_sq;
        const double df = 2.0 * (dr * precision * precision + dp * recall * recall) / denom_sq;
        res.grad.data[i] = -df; // loss = 1 - F
    }
    return res;
}

/// Plain F-measure loss: the pseudo loss under uniform weights.
inline LossResult f_loss(const Plane<double>& b, const BinaryMask& g) {
    return pseudo_f_loss(b, g, uniform_weights(g));
}

/// P-FM + FM with equal unit weights; value in [0,2].
inline LossResult combined_loss(const Plane<double>& b, const BinaryMask& g, const WeightMaps& wm) {
    LossResult pf = pseudo_f_loss(b, g, wm);
    LossResult f = f_loss(b, g);
    pf.value += f.value;
    for (size_t i = 0; i < pf.grad.size(); ++i) pf.grad.data[i] += f.grad.data[i];
    return pf;
}

/// Mean negative log likelihood; grad = (B - G) / (B (1-B) N).
inline LossResult cross_entropy_loss(const Plane<double>& b, const BinaryMask& g) {
    require(b.height == g.height && b.width == g.width, "cross_entropy_loss: shape mismatch");
    const Plane<double> bc = detail::clamp_probs(b);
    const double n = static_cast<double>(bc.size());
    LossResult res;
    res.grad = Plane<double>(b.height, b.width, 0.0);
    double acc = 0.0;
    for (size_t i = 0; i < bc.size(); ++i) {
        const double p = bc.data[i];
        const double gv = g.data[i];
        acc -= gv * std::log(p) + (1.0 - gv) * std::log(1.0 - p);
        res.grad.data[i] = (p - gv) / (p * (1.0 - p) * n);
    }
    res.value = acc / n;
    return res;
}

/// Dispatch by selector token; `wm` is only consulted by the pseudo variants.
inline LossResult evaluate_loss(LossKind kind, const Plane<double>& b, const BinaryMask& g,
                                const WeightMaps& wm) {
    switch (kind) {
    case LossKind::PseudoF: return pseudo_f_loss(b, g, wm);
    case LossKind::F: return f_loss(b, g);
    case LossKind::PseudoFPlusF: return combined_loss(b, g, wm);
    case LossKind::CrossEntropy: return cross_entropy_loss(b, g);
    }
    throw std::invalid_argument("evaluate_loss: bad kind");
}

} // namespace docbin
