#pragma once

#include <vector>

#include "docbin/baselines.hpp"
#include "docbin/network.hpp"

namespace docbin {

// ---------------------------------------------------------------------------
// Whole-image binarization stitches overlapping 256x256 crops at stride 128,
// keeping the centered 128x128 of each output crop; border crops keep their
// outer margins as well, so kept regions tile the image exactly and every
// output pixel comes from exactly one crop.
// ---------------------------------------------------------------------------

struct StitchPlan {
    struct Piece {
        int crop_row, crop_col;   // crop anchor in image coordinates
        int keep_lo_r, keep_hi_r; // kept output rows, [lo, hi)
        int keep_lo_c, keep_hi_c;
    };
    int crop = 256;
    int margin = 128; // kept centre extent
    std::vector<Piece> pieces;
};

namespace detail {

struct Axis {
    std::vector<int> anchors;
    std::vector<int> keep_lo; // keep_lo[i] .. keep_lo[i+1] is piece i's range
};

inline Axis stitch_axis(int extent, int crop, int stride, int half) {
    Axis axis;
    axis.anchors = crop_anchors(extent, crop, stride);
    axis.keep_lo.push_back(0); // first crop keeps its outer margin
    for (size_t i = 1; i < axis.anchors.size(); ++i) axis.keep_lo.push_back(axis.anchors[i] + half);
    axis.keep_lo.push_back(extent); // last crop keeps through the border
    return axis;
}

} // namespace detail

inline StitchPlan make_stitch_plan(int height, int width, int crop = 256) {
    require(height >= crop && width >= crop, "make_stitch_plan: image smaller than the crop");
    const int stride = crop / 2, half = crop / 4;
    StitchPlan plan;
    plan.crop = crop;
    plan.margin = stride;
    const detail::Axis rows = detail::stitch_axis(height, crop, stride, half);
    const detail::Axis cols = detail::stitch_axis(width, crop, stride, half);
    for (size_t i = 0; i < rows.anchors.size(); ++i)
        for (size_t j = 0; j < cols.anchors.size(); ++j)
            plan.pieces.push_back({rows.anchors[i], cols.anchors[j], rows.keep_lo[i], rows.keep_lo[i + 1],
                                   cols.keep_lo[j], cols.keep_lo[j + 1]});
    return plan;
}

inline BinaryMask threshold(const Plane<double>& prob, double t = 0.5) {
    require(t >= 0.0 && t <= 1.0, "threshold: t must be in [0,1]");
    BinaryMask mask(prob.height, prob.width);
    for (size_t i = 0; i < prob.size(); ++i) mask.data[i] = prob.data[i] >= t ? 1 : 0;
    return mask;
}

struct BinarizeResult {
    Plane<double> probabilities;
    BinaryMask mask;
};

/// Binarizes a whole image with the stitched-crop plan. The feature stack is
/// computed once on the (possibly padded) full image and sliced per crop, so
/// crop inputs match whole-image features exactly. Images smaller than the
/// crop run as a single edge-replicated padded crop, un-padded on output.
inline BinarizeResult binarize_image(const Network& net, const GrayImage& image, int jobs = 1) {
    const int crop = 256;
    const int h = image.height, w = image.width;
    require(h >= 1 && w >= 1, "binarize_image: empty image");

    const bool pad = h < crop || w < crop;
    const GrayImage* source = &image;
    GrayImage padded;
    if (pad) {
        padded = detail::replicate_pad_to(image, std::max(h, crop), std::max(w, crop));
        source = &padded;
    }

    const Tensor stack = build_full_stack(*source, net.features);
    require(stack.dim(0) == net.spec.input_channels, "binarize_image: feature config does not match the model");

    const StitchPlan plan = make_stitch_plan(source->height, source->width, crop);
    Plane<double> prob(source->height, source->width, 0.0);

    std::vector<Plane<double>> crop_probs(plan.pieces.size());
    parallel_for(static_cast<int>(plan.pieces.size()), jobs, [&](int i) {
        const auto& piece = plan.pieces[static_cast<size_t>(i)];
        Tensor input({stack.dim(0), crop, crop});
        for (int ch = 0; ch < stack.dim(0); ++ch)
            for (int r = 0; r < crop; ++r)
                for (int cc = 0; cc < crop; ++cc)
                    input.at3(ch, r, cc) = stack.at3(ch, piece.crop_row + r, piece.crop_col + cc);
        crop_probs[static_cast<size_t>(i)] = forward_probabilities(net, input);
    });

    for (size_t i = 0; i < plan.pieces.size(); ++i) {
        const auto& piece = plan.pieces[i];
        const Plane<double>& cp = crop_probs[i];
        for (int r = piece.keep_lo_r; r < piece.keep_hi_r; ++r)
            for (int c = piece.keep_lo_c; c < piece.keep_hi_c; ++c)
                prob.at(r, c) = cp.at(r - piece.crop_row, c - piece.crop_col);
    }

    if (pad) {
        Plane<double> cut(h, w);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) cut.at(r, c) = prob.at(r, c);
        prob = std::move(cut);
    }
    return BinarizeResult{prob, threshold(prob, 0.5)};
}

/// Per-pixel majority vote over several FCNs (all sharing one feature
/// config). Even-split ties fall back to the mean probability, foreground on
/// exactly 0.5.
inline BinaryMask ensemble_binarize(const std::vector<const Network*>& nets, const GrayImage& image,
                                    int jobs = 1) {
    require(!nets.empty(), "ensemble_binarize: need at least one network");
    const std::string features = to_string(nets.front()->features);
    for (const Network* net : nets)
        require(to_string(net->features) == features, "ensemble_binarize: mixed feature configs");

    std::vector<BinarizeResult> results;
    results.reserve(nets.size());
    for (const Network* net : nets) results.push_back(binarize_image(*net, image, jobs));

    const int n = static_cast<int>(nets.size());
    BinaryMask out(image.height, image.width);
    for (size_t i = 0; i < out.size(); ++i) {
        int votes = 0;
        for (const auto& res : results) votes += res.mask.data[i];
        if (2 * votes > n) {
            out.data[i] = 1;
        } else if (2 * votes < n) {
            out.data[i] = 0;
        } else {
            double mean = 0.0;
            for (const auto& res : results) mean += res.probabilities.data[i];
            out.data[i] = mean / n >= 0.5 ? 1 : 0;
        }
    }
    return out;
}

} // namespace docbin
