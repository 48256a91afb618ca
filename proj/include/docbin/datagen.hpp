#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "docbin/features.hpp"
#include "docbin/image.hpp"

namespace docbin {

// ---------------------------------------------------------------------------
// Seeded synthetic degraded-document pages: random-walk strokes over a
// shaded background, a horizontally mirrored faded stroke layer standing in
// for bleed-through, Gaussian noise and blur. Ground truth is exact by
// construction and never contains bleed-through pixels.
// ---------------------------------------------------------------------------

struct PageParams {
    int height = 128;
    int width = 128;

    double min_coverage = 0.04; // target foreground fraction drawn per page
    double max_coverage = 0.12;
    int max_strokes = 64;
    double thickness_min = 1.6;
    double thickness_max = 3.5;

    double base_min = 0.78; // background level range
    double base_max = 0.92;
    double ink_contrast = 0.55;  // mean darkening under ink
    double ink_fade_amp = 0.15;  // per-stroke contrast variation (degradation)
    double gradient_amp = 0.18;  // background shading amplitude
    double bleed_opacity = 0.5;  // bleed darkening relative to ink contrast
    double noise_sigma = 0.02;
    double blur_sigma = 0.4;

    uint64_t seed = 0;

    static PageParams clean() {
        PageParams p;
        p.ink_fade_amp = 0.0;
        p.gradient_amp = 0.0;
        p.bleed_opacity = 0.0;
        p.noise_sigma = 0.0;
        p.blur_sigma = 0.0;
        return p;
    }
};

struct PagePair {
    std::string name;
    GrayImage image;
    BinaryMask gt;
};

namespace detail {

/// Stamps a random-walk polyline of the given thickness; returns pixels set.
inline int draw_stroke(Plane<double>& depth, Rng& rng, double thickness, double strength) {
    const int h = depth.height, w = depth.width;
    double r = rng.uniform(2.0, h - 3.0);
    double c = rng.uniform(2.0, w - 3.0);
    double angle = rng.uniform(0.0, 6.283185307179586);
    const int segments = 3 + static_cast<int>(rng.below(6));
    const double radius = thickness / 2.0;
    int stamped = 0;

    for (int seg = 0; seg < segments; ++seg) {
        const double len = rng.uniform(0.05, 0.15) * std::min(h, w);
        const double dr = std::sin(angle), dc = std::cos(angle);
        const int steps = std::max(1, static_cast<int>(len * 2.0));
        for (int i = 0; i < steps; ++i) {
            r = std::clamp(r + dr * 0.5, 1.0, h - 2.0);
            c = std::clamp(c + dc * 0.5, 1.0, w - 2.0);
            const int rr0 = std::max(0, static_cast<int>(r - radius) - 1);
            const int rr1 = std::min(h - 1, static_cast<int>(r + radius) + 1);
            const int cc0 = std::max(0, static_cast<int>(c - radius) - 1);
            const int cc1 = std::min(w - 1, static_cast<int>(c + radius) + 1);
            for (int rr = rr0; rr <= rr1; ++rr)
                for (int cc = cc0; cc <= cc1; ++cc) {
                    const double dy = rr - r, dx = cc - c;
                    if (dy * dy + dx * dx <= radius * radius + 0.25) {
                        if (depth.at(rr, cc) == 0.0) ++stamped;
                        depth.at(rr, cc) = std::max(depth.at(rr, cc), strength);
                    }
                }
        }
        angle += rng.uniform(-0.7, 0.7);
    }
    return stamped;
}

/// Fills a depth plane with strokes until the coverage target is met.
inline void draw_stroke_layer(Plane<double>& depth, Rng& rng, const PageParams& p, double target_coverage) {
    const double total = static_cast<double>(depth.size());
    int set = 0;
    for (int s = 0; s < p.max_strokes && set / total < target_coverage; ++s) {
        const double thickness = rng.uniform(p.thickness_min, p.thickness_max);
        const double strength = p.ink_contrast * (1.0 - rng.uniform(0.0, p.ink_fade_amp));
        set += draw_stroke(depth, rng, thickness, strength);
    }
}

} // namespace detail

inline PagePair generate_page(const PageParams& params) {
    require(params.height >= 8 && params.width >= 8, "generate_page: degenerate page size");
    require(params.bleed_opacity >= 0.0 && params.bleed_opacity <= 1.0, "generate_page: bleed opacity in [0,1]");
    const int h = params.height, w = params.width;
    Rng rng(params.seed);

    // ink layer and exact ground truth
    Plane<double> ink(h, w, 0.0);
    const double coverage = rng.uniform(params.min_coverage, params.max_coverage);
    detail::draw_stroke_layer(ink, rng, params, coverage);
    {
        // at least one stroke even under a tiny coverage target
        bool any = false;
        for (double v : ink.data) any |= v > 0.0;
        if (!any) detail::draw_stroke(ink, rng, params.thickness_min, params.ink_contrast);
    }
    BinaryMask gt(h, w);
    for (size_t i = 0; i < gt.size(); ++i) gt.data[i] = ink.data[i] > 0.0 ? 1 : 0;

    // mirrored faded second stroke layer: bleed-through, absent from GT
    Plane<double> bleed(h, w, 0.0);
    if (params.bleed_opacity > 0.0)
        detail::draw_stroke_layer(bleed, rng, params, coverage * 0.8);

    // background shading plane
    const double base = rng.uniform(params.base_min, params.base_max);
    const double theta = rng.uniform(0.0, 6.283185307179586);
    const double gdr = std::sin(theta), gdc = std::cos(theta);

    GrayImage img(h, w);
    const double diag = std::sqrt(static_cast<double>(h) * h + static_cast<double>(w) * w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double shade = params.gradient_amp * ((r * gdr + c * gdc) / diag);
            double v = base + shade - ink.at(r, c);
            v -= params.bleed_opacity * bleed.at(r, w - 1 - c); // horizontal mirror
            img.at(r, c) = v;
        }

    if (params.blur_sigma > 0.0) img = detail::gaussian_blur(img, params.blur_sigma);
    if (params.noise_sigma > 0.0)
        for (auto& v : img.data) v += params.noise_sigma * rng.normal();
    for (auto& v : img.data) v = std::clamp(v, 0.0, 1.0);

    return PagePair{"", std::move(img), std::move(gt)};
}

struct ManifestEntry {
    int index = 0;
    uint64_t seed = 0;
    std::string image_path; // relative to the manifest directory
    std::string gt_path;
};

/// Writes n seeded page pairs plus manifest.csv; page seeds are base + index.
inline std::vector<ManifestEntry> generate_corpus(int n, const PageParams& params, const std::string& out_dir) {
    require(n >= 1, "generate_corpus: need at least one page");
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    std::vector<ManifestEntry> manifest;
    for (int i = 0; i < n; ++i) {
        PageParams page_params = params;
        page_params.seed = params.seed + static_cast<uint64_t>(i);
        PagePair page = generate_page(page_params);
        char image_name[32], gt_name[32];
        std::snprintf(image_name, sizeof(image_name), "page_%04d.pgm", i);
        std::snprintf(gt_name, sizeof(gt_name), "page_%04d_gt.pbm", i);
        save_image((fs::path(out_dir) / image_name).string(), page.image);
        save_image((fs::path(out_dir) / gt_name).string(), page.gt);
        manifest.push_back({i, page_params.seed, image_name, gt_name});
    }

    std::ofstream out(fs::path(out_dir) / "manifest.csv");
    if (!out) throw FormatError(out_dir + "/manifest.csv: cannot open for writing");
    out << "index,seed,image,gt\n";
    for (const auto& e : manifest)
        out << e.index << ',' << e.seed << ',' << e.image_path << ',' << e.gt_path << '\n';
    return manifest;
}

/// Loads the image/GT pairs listed in a corpus directory's manifest.csv.
inline std::vector<PagePair> load_corpus(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path manifest_path = fs::path(dir) / "manifest.csv";
    std::ifstream in(manifest_path);
    if (!in) throw FormatError(manifest_path.string() + ": cannot open manifest");
    std::vector<PagePair> pages;
    std::string line;
    std::getline(in, line); // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != 4) throw FormatError(manifest_path.string() + ": malformed row '" + line + "'");
        PagePair page;
        page.name = fields[2];
        page.image = load_gray((fs::path(dir) / fields[2]).string());
        page.gt = load_mask((fs::path(dir) / fields[3]).string());
        pages.push_back(std::move(page));
    }
    require(!pages.empty(), "load_corpus: manifest lists no pages");
    return pages;
}

} // namespace docbin
