#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "docbin/common.hpp"

namespace docbin {

// ---------------------------------------------------------------------------
// PNM (binary PGM/PPM/PBM) I/O. These formats are the toolkit's bit-exact
// interchange: P5 bytes map to v/maxval, P4 1-bits are black = foreground.
// ---------------------------------------------------------------------------

enum class PnmKind { Gray, Rgb, Bitmap };

struct PnmImage {
    PnmKind kind = PnmKind::Gray;
    GrayImage gray;                         // Gray
    std::array<GrayImage, 3> rgb;           // Rgb
    BinaryMask mask;                        // Bitmap
};

namespace detail {

inline int pnm_read_token(std::istream& in, const char* path) {
    // Skips whitespace and '#' comments, then reads one decimal token.
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            c = in.get();
        } else {
            break;
        }
    }
    if (c == EOF || !std::isdigit(c)) throw FormatError(std::string(path) + ": malformed PNM header");
    long v = 0;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        if (v > std::numeric_limits<int>::max() / 2) throw FormatError(std::string(path) + ": header value overflow");
        c = in.get();
    }
    return static_cast<int>(v);
}

inline void pnm_read_raster(std::istream& in, std::vector<uint8_t>& buf, const char* path) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<size_t>(in.gcount()) != buf.size())
        throw FormatError(std::string(path) + ": truncated raster data");
}

} // namespace detail

/// Parses a binary PGM (P5), PPM (P6) or PBM (P4) file.
inline PnmImage load_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(path + ": cannot open file");
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (m0 != 'P' || (m1 != '4' && m1 != '5' && m1 != '6')) {
        char shown[32];
        std::snprintf(shown, sizeof(shown), "0x%02x 0x%02x", static_cast<unsigned char>(m0),
                      static_cast<unsigned char>(m1));
        throw FormatError(path + ": unsupported magic bytes " + shown);
    }
    const char* p = path.c_str();
    const int width = detail::pnm_read_token(in, p);
    const int height = detail::pnm_read_token(in, p);
    if (width <= 0 || height <= 0) throw FormatError(path + ": non-positive image dimensions");

    // pnm_read_token consumes the single whitespace byte that terminates each
    // header token, so the raster begins at the current stream position.
    PnmImage out;
    if (m1 == '4') {
        const int row_bytes = (width + 7) / 8;
        std::vector<uint8_t> raster(static_cast<size_t>(row_bytes) * height);
        detail::pnm_read_raster(in, raster, p);
        out.kind = PnmKind::Bitmap;
        out.mask = BinaryMask(height, width);
        for (int r = 0; r < height; ++r)
            for (int c = 0; c < width; ++c) {
                const uint8_t byte = raster[static_cast<size_t>(r) * row_bytes + c / 8];
                out.mask.at(r, c) = (byte >> (7 - c % 8)) & 1; // 1 = black = ink
            }
        return out;
    }

    const int maxval = detail::pnm_read_token(in, p);
    if (maxval <= 0 || maxval > 255) throw FormatError(path + ": unsupported maxval (only 8-bit rasters)");
    const int channels = (m1 == '6') ? 3 : 1;
    std::vector<uint8_t> raster(static_cast<size_t>(width) * height * channels);
    detail::pnm_read_raster(in, raster, p);
    const double scale = 1.0 / maxval;
    if (m1 == '5') {
        out.kind = PnmKind::Gray;
        out.gray = GrayImage(height, width);
        for (size_t i = 0; i < raster.size(); ++i) out.gray.data[i] = raster[i] * scale;
    } else {
        out.kind = PnmKind::Rgb;
        for (auto& ch : out.rgb) ch = GrayImage(height, width);
        for (size_t i = 0; i < out.rgb[0].size(); ++i)
            for (int ch = 0; ch < 3; ++ch) out.rgb[static_cast<size_t>(ch)].data[i] = raster[i * 3 + ch] * scale;
    }
    return out;
}

inline void save_image(const std::string& path, const GrayImage& img) {
    require(img.height > 0 && img.width > 0, "save_image: empty image");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError(path + ": cannot open for writing");
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    std::vector<uint8_t> raster(img.size());
    for (size_t i = 0; i < img.size(); ++i)
        raster[i] = static_cast<uint8_t>(std::lround(std::clamp(img.data[i], 0.0, 1.0) * 255.0));
    out.write(reinterpret_cast<const char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
    if (!out) throw FormatError(path + ": write failed");
}

inline void save_image(const std::string& path, const BinaryMask& mask) {
    require(mask.height > 0 && mask.width > 0, "save_image: empty mask");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError(path + ": cannot open for writing");
    out << "P4\n" << mask.width << " " << mask.height << "\n";
    const int row_bytes = (mask.width + 7) / 8;
    std::vector<uint8_t> raster(static_cast<size_t>(row_bytes) * mask.height, 0);
    for (int r = 0; r < mask.height; ++r)
        for (int c = 0; c < mask.width; ++c)
            if (mask.at(r, c)) raster[static_cast<size_t>(r) * row_bytes + c / 8] |= uint8_t(1u << (7 - c % 8));
    out.write(reinterpret_cast<const char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
    if (!out) throw FormatError(path + ": write failed");
}

inline GrayImage to_grayscale(const GrayImage& r, const GrayImage& g, const GrayImage& b) {
    require(r.same_shape(g) && g.same_shape(b), "to_grayscale: channel shapes mismatch");
    GrayImage out(r.height, r.width);
    for (size_t i = 0; i < out.size(); ++i)
        out.data[i] = 0.299 * r.data[i] + 0.587 * g.data[i] + 0.114 * b.data[i];
    return out;
}

/// Loads any supported PNM as a grayscale image (PPM via the luma formula,
/// PBM with ink = 0.0 and background = 1.0).
inline GrayImage load_gray(const std::string& path) {
    PnmImage img = load_image(path);
    switch (img.kind) {
    case PnmKind::Gray: return img.gray;
    case PnmKind::Rgb: return to_grayscale(img.rgb[0], img.rgb[1], img.rgb[2]);
    case PnmKind::Bitmap: {
        GrayImage out(img.mask.height, img.mask.width);
        for (size_t i = 0; i < out.size(); ++i) out.data[i] = img.mask.data[i] ? 0.0 : 1.0;
        return out;
    }
    }
    throw FormatError(path + ": unreachable");
}

/// Loads a ground-truth/prediction mask: PBM directly, or a gray/color PNM
/// where dark pixels (< 0.5) are foreground ink.
inline BinaryMask load_mask(const std::string& path) {
    PnmImage img = load_image(path);
    if (img.kind == PnmKind::Bitmap) return img.mask;
    GrayImage g = (img.kind == PnmKind::Gray) ? img.gray : to_grayscale(img.rgb[0], img.rgb[1], img.rgb[2]);
    BinaryMask out(g.height, g.width);
    for (size_t i = 0; i < g.size(); ++i) out.data[i] = g.data[i] < 0.5 ? 1 : 0;
    return out;
}

// ---------------------------------------------------------------------------
// Chessboard distance transform (two-pass 8-neighbour chamfer, exact for the
// Chebyshev metric).
// ---------------------------------------------------------------------------

inline Plane<int> distance_transform(const BinaryMask& mask, int from_value) {
    require(from_value == 0 || from_value == 1, "distance_transform: from_value must be 0 or 1");
    bool found = false;
    for (uint8_t v : mask.data)
        if (v == from_value) {
            found = true;
            break;
        }
    require_domain(found, "distance_transform: mask contains no pixel of from_value");

    const int h = mask.height, w = mask.width;
    const int inf = h + w + 1;
    Plane<int> d(h, w, inf);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            if (mask.at(r, c) == from_value) d.at(r, c) = 0;

    auto relax = [&](int r, int c, int rr, int cc) {
        if (rr < 0 || rr >= h || cc < 0 || cc >= w) return;
        d.at(r, c) = std::min(d.at(r, c), d.at(rr, cc) + 1);
    };
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            relax(r, c, r - 1, c - 1);
            relax(r, c, r - 1, c);
            relax(r, c, r - 1, c + 1);
            relax(r, c, r, c - 1);
        }
    for (int r = h - 1; r >= 0; --r)
        for (int c = w - 1; c >= 0; --c) {
            relax(r, c, r + 1, c + 1);
            relax(r, c, r + 1, c);
            relax(r, c, r + 1, c - 1);
            relax(r, c, r, c + 1);
        }
    return d;
}

// ---------------------------------------------------------------------------
// Training crop extraction
// ---------------------------------------------------------------------------

struct CropPair {
    GrayImage image;
    BinaryMask mask;
    int row = 0;
    int col = 0;
    bool padded = false; // source was smaller than the crop and edge-replicated
};

namespace detail {

inline std::vector<int> crop_anchors(int extent, int crop, int stride) {
    // Top-left anchored grid; the final anchor is shifted inward so crops
    // never exceed bounds.
    std::vector<int> anchors;
    for (int a = 0;; a += stride) {
        if (a + crop >= extent) {
            anchors.push_back(extent - crop);
            break;
        }
        anchors.push_back(a);
    }
    return anchors;
}

template <typename T>
Plane<T> replicate_pad_to(const Plane<T>& src, int h, int w) {
    Plane<T> out(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            out.at(r, c) = src.at(std::min(r, src.height - 1), std::min(c, src.width - 1));
    return out;
}

template <typename T>
Plane<T> crop_plane(const Plane<T>& src, int row, int col, int h, int w) {
    Plane<T> out(h, w);
    for (int r = 0; r < h; ++r)
        std::copy_n(&src.at(row + r, col), w, &out.at(r, 0));
    return out;
}

} // namespace detail

/// Extracts size x size crops on a stride grid; crops without any foreground
/// pixel are discarded (pseudo recall is undefined on them). An image smaller
/// than the crop yields a single edge-replicated crop, flagged `padded`.
inline std::vector<CropPair> extract_crops(const GrayImage& image, const BinaryMask& mask,
                                           int size = 256, int stride = 64) {
    require(image.height == mask.height && image.width == mask.width, "extract_crops: image/mask shape mismatch");
    require(size > 0 && stride > 0, "extract_crops: size and stride must be positive");

    if (image.height < size || image.width < size) {
        const int h = std::max(image.height, size), w = std::max(image.width, size);
        CropPair crop{detail::replicate_pad_to(image, h, w), detail::replicate_pad_to(mask, h, w), 0, 0, true};
        if (foreground_count(crop.mask) == 0) return {};
        return {std::move(crop)};
    }

    std::vector<CropPair> crops;
    for (int row : detail::crop_anchors(image.height, size, stride))
        for (int col : detail::crop_anchors(image.width, size, stride)) {
            BinaryMask m = detail::crop_plane(mask, row, col, size, size);
            if (foreground_count(m) == 0) continue;
            crops.push_back(CropPair{detail::crop_plane(image, row, col, size, size), std::move(m), row, col, false});
        }
    return crops;
}

} // namespace docbin
