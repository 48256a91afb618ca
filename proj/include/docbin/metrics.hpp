#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "docbin/pseudo_weights.hpp"

namespace docbin {

struct MetricReport {
    double pfm = 0.0;  // percent
    double fm = 0.0;   // percent
    double psnr = 0.0; // dB, +inf when B == G
    double drd = 0.0;
    std::string weight_scheme;
};

/// F-measure in percent: 100 * 2PR/(P+R); zero true positives score 0.
inline double fm_metric(const BinaryMask& b, const BinaryMask& g) {
    require(b.same_shape(g), "fm_metric: shape mismatch");
    require_domain(foreground_count(g) > 0, "fm_metric: ground truth has no foreground");
    int64_t tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < b.size(); ++i) {
        tp += (b.data[i] & g.data[i]);
        fp += (b.data[i] & (1 - g.data[i]));
        fn += ((1 - b.data[i]) & g.data[i]);
    }
    if (tp == 0) return 0.0;
    const double precision = static_cast<double>(tp) / (tp + fp);
    const double recall = static_cast<double>(tp) / (tp + fn);
    return 100.0 * 2.0 * precision * recall / (precision + recall);
}

/// Pseudo F-measure in percent on a binary prediction (Eqs. as in the loss,
/// with B in {0,1}). An all-background prediction scores 0.
inline double pfm_metric(const BinaryMask& b, const BinaryMask& g, const WeightMaps& wm) {
    require(b.same_shape(g), "pfm_metric: shape mismatch");
    require(wm.recall.height == g.height && wm.recall.width == g.width, "pfm_metric: weight shape mismatch");
    require_domain(foreground_count(g) > 0, "pfm_metric: ground truth has no foreground");
    double recall_num = 0.0, recall_den = 0.0, prec_num = 0.0, prec_den = 0.0;
    for (size_t i = 0; i < b.size(); ++i) {
        const double bv = b.data[i], gv = g.data[i];
        recall_num += bv * gv * wm.recall.data[i];
        recall_den += gv * wm.recall.data[i];
        prec_num += gv * bv * wm.precision.data[i];
        prec_den += bv * wm.precision.data[i];
    }
    require_domain(recall_den > 0.0, "pfm_metric: zero recall weight mass");
    if (prec_den == 0.0) return 0.0; // nothing predicted foreground
    const double recall = recall_num / recall_den;
    const double precision = prec_num / prec_den;
    if (recall + precision == 0.0) return 0.0;
    return 100.0 * 2.0 * recall * precision / (recall + precision);
}

/// 10*log10(1/MSE) over unit-peak binary images; identical masks give +inf.
inline double psnr(const BinaryMask& b, const BinaryMask& g) {
    require(b.same_shape(g), "psnr: shape mismatch");
    int64_t diff = 0;
    for (size_t i = 0; i < b.size(); ++i) diff += (b.data[i] != g.data[i]);
    if (diff == 0) return std::numeric_limits<double>::infinity();
    const double mse = static_cast<double>(diff) / static_cast<double>(b.size());
    return 10.0 * std::log10(1.0 / mse);
}

namespace detail {

/// Normalized 5x5 reciprocal-distance weight matrix: centre 0, entries
/// 1/sqrt(i^2+j^2) scaled to sum 1.
inline const double* drd_weights() {
    static const auto w = [] {
        std::array<double, 25> m{};
        double sum = 0.0;
        for (int i = -2; i <= 2; ++i)
            for (int j = -2; j <= 2; ++j) {
                if (i == 0 && j == 0) continue;
                const double v = 1.0 / std::sqrt(static_cast<double>(i * i + j * j));
                m[static_cast<size_t>((i + 2) * 5 + (j + 2))] = v;
                sum += v;
            }
        for (auto& v : m) v /= sum;
        return m;
    }();
    return w.data();
}

/// Count of non-overlapping 8x8 ground-truth blocks containing both values.
/// Partial blocks at the right/bottom edge are excluded.
inline int nubn(const BinaryMask& g) {
    int count = 0;
    for (int br = 0; br + 8 <= g.height; br += 8)
        for (int bc = 0; bc + 8 <= g.width; bc += 8) {
            bool has0 = false, has1 = false;
            for (int r = br; r < br + 8 && !(has0 && has1); ++r)
                for (int c = bc; c < bc + 8; ++c)
                    (g.at(r, c) ? has1 : has0) = true;
            count += (has0 && has1);
        }
    return count;
}

} // namespace detail

/// Distance Reciprocal Distortion. For each flipped pixel, the 5x5 GT
/// neighbourhood differences against the prediction value are weighted by the
/// normalized reciprocal-distance matrix; out-of-bounds cells contribute
/// nothing. The sum is divided by NUBN.
inline double drd(const BinaryMask& b, const BinaryMask& g) {
    require(b.same_shape(g), "drd: shape mismatch");
    const int blocks = detail::nubn(g);
    require_domain(blocks > 0, "drd: uniform ground truth (NUBN = 0)");
    const double* wn = detail::drd_weights();
    double total = 0.0;
    for (int r = 0; r < g.height; ++r)
        for (int c = 0; c < g.width; ++c) {
            if (b.at(r, c) == g.at(r, c)) continue;
            const double bv = b.at(r, c);
            double dk = 0.0;
            for (int i = -2; i <= 2; ++i)
                for (int j = -2; j <= 2; ++j) {
                    const int rr = r + i, cc = c + j;
                    if (rr < 0 || rr >= g.height || cc < 0 || cc >= g.width) continue;
                    dk += std::abs(g.at(rr, cc) - bv) * wn[(i + 2) * 5 + (j + 2)];
                }
            total += dk;
        }
    return total / blocks;
}

/// All four DIBCO metrics for one prediction/ground-truth pair.
inline MetricReport evaluate_pair(const BinaryMask& b, const BinaryMask& g, const WeightMaps& wm) {
    return MetricReport{pfm_metric(b, g, wm), fm_metric(b, g), psnr(b, g), drd(b, g), wm.scheme};
}

inline MetricReport evaluate_pair(const BinaryMask& b, const BinaryMask& g) {
    return evaluate_pair(b, g, pseudo_weights(g));
}

/// Unweighted means over images. Finite PSNR values are averaged; when every
/// image is perfect the dataset PSNR is +inf.
inline MetricReport aggregate_reports(const std::vector<MetricReport>& reports) {
    require(!reports.empty(), "aggregate_reports: empty report list");
    MetricReport mean;
    mean.weight_scheme = reports.front().weight_scheme;
    int finite_psnr = 0;
    for (const auto& r : reports) {
        mean.pfm += r.pfm;
        mean.fm += r.fm;
        mean.drd += r.drd;
        if (std::isfinite(r.psnr)) {
            mean.psnr += r.psnr;
            ++finite_psnr;
        }
    }
    const double n = static_cast<double>(reports.size());
    mean.pfm /= n;
    mean.fm /= n;
    mean.drd /= n;
    mean.psnr = finite_psnr == 0 ? std::numeric_limits<double>::infinity() : mean.psnr / finite_psnr;
    return mean;
}

namespace detail {
inline std::string metric_field(double v) {
    if (std::isinf(v)) return "+inf";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}
} // namespace detail

/// CSV report: one row per image plus a final mean row; "+inf" for infinite
/// PSNR. Byte-stable for identical inputs.
inline void write_metric_csv(std::ostream& out, const std::vector<std::string>& names,
                             const std::vector<MetricReport>& reports) {
    require(names.size() == reports.size(), "write_metric_csv: name/report count mismatch");
    out << "path,pfm,fm,psnr,drd,weight_scheme\n";
    for (size_t i = 0; i < reports.size(); ++i) {
        const auto& r = reports[i];
        out << names[i] << ',' << detail::metric_field(r.pfm) << ',' << detail::metric_field(r.fm) << ','
            << detail::metric_field(r.psnr) << ',' << detail::metric_field(r.drd) << ',' << r.weight_scheme
            << '\n';
    }
    const MetricReport mean = aggregate_reports(reports);
    out << "mean," << detail::metric_field(mean.pfm) << ',' << detail::metric_field(mean.fm) << ','
        << detail::metric_field(mean.psnr) << ',' << detail::metric_field(mean.drd) << ',' << mean.weight_scheme
        << '\n';
}

} // namespace docbin
