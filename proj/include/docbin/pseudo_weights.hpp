#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "docbin/image.hpp"

namespace docbin {

/// Per-pixel recall and precision weights for the pseudo F-measure.
///
/// The "pseudo" scheme reproduces the qualitative behaviour of the DIBCO
/// weighting: recall weights are 0 on the contour of thick strokes and grow
/// toward the stroke core, so missing a border pixel costs nothing; precision
/// weights decay toward 1 with distance from ink, so distant false positives
/// cost less than false positives between characters. Scores are comparable
/// only within one scheme id.
struct WeightMaps {
    Plane<double> recall;
    Plane<double> precision;
    std::string scheme;
};

namespace detail {

/// 8-connected component labels for foreground pixels; background is -1.
inline Plane<int> label_components(const BinaryMask& mask, int* count_out = nullptr) {
    Plane<int> labels(mask.height, mask.width, -1);
    int next = 0;
    std::vector<std::pair<int, int>> stack;
    for (int r = 0; r < mask.height; ++r)
        for (int c = 0; c < mask.width; ++c) {
            if (!mask.at(r, c) || labels.at(r, c) >= 0) continue;
            labels.at(r, c) = next;
            stack.emplace_back(r, c);
            while (!stack.empty()) {
                auto [cr, cc] = stack.back();
                stack.pop_back();
                for (int dr = -1; dr <= 1; ++dr)
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int rr = cr + dr, c2 = cc + dc;
                        if (rr < 0 || rr >= mask.height || c2 < 0 || c2 >= mask.width) continue;
                        if (!mask.at(rr, c2) || labels.at(rr, c2) >= 0) continue;
                        labels.at(rr, c2) = next;
                        stack.emplace_back(rr, c2);
                    }
            }
            ++next;
        }
    if (count_out) *count_out = next;
    return labels;
}

/// Chessboard depth inside the foreground (distance to nearest background);
/// a mask with no background at all is treated as uniformly deep.
inline Plane<int> interior_depth(const BinaryMask& gt) {
    const bool has_bg = foreground_count(gt) < static_cast<int>(gt.size());
    if (!has_bg) {
        // no background anywhere: every pixel is "infinitely" interior; use
        // distance to the virtual border outside the image
        Plane<int> d(gt.height, gt.width);
        for (int r = 0; r < gt.height; ++r)
            for (int c = 0; c < gt.width; ++c)
                d.at(r, c) = 1 + std::min(std::min(r, gt.height - 1 - r), std::min(c, gt.width - 1 - c));
        return d;
    }
    return distance_transform(gt, 0);
}

} // namespace detail

/// Stroke width estimate: twice the mean interior depth over foreground.
inline double stroke_width(const BinaryMask& gt) {
    const int fg = foreground_count(gt);
    require_domain(fg > 0, "stroke_width: ground truth has no foreground");
    Plane<int> depth = detail::interior_depth(gt);
    double sum = 0.0;
    for (int r = 0; r < gt.height; ++r)
        for (int c = 0; c < gt.width; ++c)
            if (gt.at(r, c)) sum += depth.at(r, c);
    return 2.0 * sum / fg;
}

/// Recall weights: per 8-connected component with interior depths d and max
/// depth m, weight = (d-1)/(m-1) so contours get 0 and the deepest pixels 1;
/// single-pixel-thick components (m == 1) fall back to weight 1 everywhere,
/// which keeps sum(G * R^W) > 0 for any non-empty mask. Background gets 0.
inline Plane<double> recall_weights(const BinaryMask& gt) {
    require_domain(foreground_count(gt) > 0, "recall_weights: ground truth has no foreground");
    Plane<int> depth = detail::interior_depth(gt);
    int n_components = 0;
    Plane<int> labels = detail::label_components(gt, &n_components);

    std::vector<int> max_depth(static_cast<size_t>(n_components), 0);
    for (int r = 0; r < gt.height; ++r)
        for (int c = 0; c < gt.width; ++c)
            if (gt.at(r, c)) {
                auto& m = max_depth[static_cast<size_t>(labels.at(r, c))];
                m = std::max(m, depth.at(r, c));
            }

    Plane<double> w(gt.height, gt.width, 0.0);
    for (int r = 0; r < gt.height; ++r)
        for (int c = 0; c < gt.width; ++c) {
            if (!gt.at(r, c)) continue;
            const int m = max_depth[static_cast<size_t>(labels.at(r, c))];
            w.at(r, c) = (m == 1) ? 1.0 : static_cast<double>(depth.at(r, c) - 1) / (m - 1);
        }
    return w;
}

/// Precision weights: 1 on foreground; on background 1 + exp(-d/s) with d the
/// chessboard distance to the nearest ink pixel. Strictly decreasing in d.
inline Plane<double> precision_weights(const BinaryMask& gt, double s) {
    require(s > 0.0, "precision_weights: stroke width must be positive");
    require_domain(foreground_count(gt) > 0, "precision_weights: ground truth has no foreground");
    Plane<int> dist = distance_transform(gt, 1);
    Plane<double> w(gt.height, gt.width, 1.0);
    for (int r = 0; r < gt.height; ++r)
        for (int c = 0; c < gt.width; ++c)
            if (!gt.at(r, c)) w.at(r, c) = 1.0 + std::exp(-dist.at(r, c) / s);
    return w;
}

inline WeightMaps pseudo_weights(const BinaryMask& gt) {
    return WeightMaps{recall_weights(gt), precision_weights(gt, stroke_width(gt)), "pseudo"};
}

/// Uniform weights turn the pseudo F-measure into the plain F-measure.
inline WeightMaps uniform_weights(const BinaryMask& gt) {
    Plane<double> recall(gt.height, gt.width, 0.0);
    for (int r = 0; r < gt.height; ++r)
        for (int c = 0; c < gt.width; ++c) recall.at(r, c) = gt.at(r, c);
    return WeightMaps{std::move(recall), Plane<double>(gt.height, gt.width, 1.0), "uniform"};
}

} // namespace docbin
