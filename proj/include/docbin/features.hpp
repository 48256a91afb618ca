#pragma once

#include <array>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "docbin/image.hpp"
#include "docbin/tensor.hpp"

namespace docbin {

// ---------------------------------------------------------------------------
// Feature configuration. Channel 0 of every input stack is the gray image;
// the remaining channels follow the order of `channels` below. The config
// text form is stored in model files so inference recomputes identical
// inputs.
// ---------------------------------------------------------------------------

struct FeatureSpec {
    enum class Kind { RelativeDarkness, Min, Max, Mean, Median, Stddev, Percentile, Canny, Otsu, Howe };
    Kind kind = Kind::RelativeDarkness;
    int window = 5;
    double threshold = 10.0 / 255.0; // relative darkness similarity band
    double p = 50.0;                 // percentile rank
    double sigma = 1.0, low = 0.1, high = 0.2; // canny

    int channel_count() const { return kind == Kind::RelativeDarkness ? 3 : 1; }
    /// Channels the caller must precompute (outputs of baseline binarizers).
    bool is_aux() const { return kind == Kind::Otsu || kind == Kind::Howe; }
};

struct FeatureConfig {
    std::vector<FeatureSpec> channels;

    static FeatureConfig defaults() {
        FeatureConfig fc;
        fc.channels.push_back(FeatureSpec{}); // gray + relative darkness
        return fc;
    }

    int channel_count() const {
        int d = 1;
        for (const auto& ch : channels) d += ch.channel_count();
        return d;
    }

    int aux_count() const {
        int n = 0;
        for (const auto& ch : channels) n += ch.is_aux() ? 1 : 0;
        return n;
    }
};

// ---------------------------------------------------------------------------
// Relative Darkness: per pixel, the fraction of window neighbours (centre
// excluded, edges replicated) that are darker than, similar to, or lighter
// than the centre, using a +-threshold band. The three channels partition 1.
// ---------------------------------------------------------------------------

struct RelativeDarkness {
    GrayImage darker, similar, lighter;
};

inline RelativeDarkness relative_darkness(const GrayImage& img, int window = 5,
                                          double threshold = 10.0 / 255.0) {
    require(window % 2 == 1 && window >= 3, "relative_darkness: window must be odd and >= 3");
    const int h = img.height, w = img.width, half = window / 2;
    const double denom = 1.0 / (window * window - 1);
    RelativeDarkness rd{GrayImage(h, w), GrayImage(h, w), GrayImage(h, w)};
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double centre = img.at(r, c);
            int dark = 0, sim = 0, light = 0;
            for (int dr = -half; dr <= half; ++dr)
                for (int dc = -half; dc <= half; ++dc) {
                    if (dr == 0 && dc == 0) continue;
                    const int rr = std::clamp(r + dr, 0, h - 1);
                    const int cc = std::clamp(c + dc, 0, w - 1);
                    const double diff = img.at(rr, cc) - centre;
                    if (diff < -threshold)
                        ++dark;
                    else if (diff > threshold)
                        ++light;
                    else
                        ++sim;
                }
            rd.darker.at(r, c) = dark * denom;
            rd.similar.at(r, c) = sim * denom;
            rd.lighter.at(r, c) = light * denom;
        }
    return rd;
}

// ---------------------------------------------------------------------------
// Local statistic filters over an odd window with edge replication.
// Percentile uses the lower nearest rank on the sorted window, so
// percentile(0) == min and percentile(100) == max; stddev is population form.
// ---------------------------------------------------------------------------

enum class LocalFilterKind { Min, Max, Mean, Median, Stddev, Percentile };

inline GrayImage local_filter(const GrayImage& img, LocalFilterKind kind, int window, double p = 50.0) {
    require(window % 2 == 1 && window >= 1, "local_filter: window must be odd");
    require(p >= 0.0 && p <= 100.0, "local_filter: percentile must be in [0,100]");
    const int h = img.height, w = img.width, half = window / 2;
    const int n = window * window;
    GrayImage out(h, w);
    std::vector<double> vals(static_cast<size_t>(n));
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            int idx = 0;
            for (int dr = -half; dr <= half; ++dr)
                for (int dc = -half; dc <= half; ++dc)
                    vals[static_cast<size_t>(idx++)] =
                        img.at(std::clamp(r + dr, 0, h - 1), std::clamp(c + dc, 0, w - 1));
            double v = 0.0;
            switch (kind) {
            case LocalFilterKind::Min: v = *std::min_element(vals.begin(), vals.end()); break;
            case LocalFilterKind::Max: v = *std::max_element(vals.begin(), vals.end()); break;
            case LocalFilterKind::Mean: {
                double s = 0.0;
                for (double x : vals) s += x;
                v = s / n;
                break;
            }
            case LocalFilterKind::Median: {
                std::nth_element(vals.begin(), vals.begin() + n / 2, vals.end());
                v = vals[static_cast<size_t>(n / 2)];
                break;
            }
            case LocalFilterKind::Stddev: {
                double s = 0.0, sq = 0.0;
                for (double x : vals) {
                    s += x;
                    sq += x * x;
                }
                const double mean = s / n;
                v = std::sqrt(std::max(0.0, sq / n - mean * mean));
                break;
            }
            case LocalFilterKind::Percentile: {
                const int rank = static_cast<int>(std::floor(p / 100.0 * (n - 1)));
                std::nth_element(vals.begin(), vals.begin() + rank, vals.end());
                v = vals[static_cast<size_t>(rank)];
                break;
            }
            }
            out.at(r, c) = v;
        }
    return out;
}

// ---------------------------------------------------------------------------
// Canny edge detection: Gaussian blur (radius ceil(3*sigma)), Sobel
// gradients, 8-direction non-maximum suppression, hysteresis linking with
// 8-connectivity. Thresholds apply to gradient magnitude normalized by its
// maximum.
// ---------------------------------------------------------------------------

namespace detail {

inline GrayImage gaussian_blur(const GrayImage& img, double sigma) {
    if (sigma <= 0.0) return img;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[static_cast<size_t>(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        sum += kernel[static_cast<size_t>(i + radius)];
    }
    for (double& k : kernel) k /= sum;

    const int h = img.height, w = img.width;
    GrayImage tmp(h, w), out(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += kernel[static_cast<size_t>(i + radius)] * img.at(r, std::clamp(c + i, 0, w - 1));
            tmp.at(r, c) = acc;
        }
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += kernel[static_cast<size_t>(i + radius)] * tmp.at(std::clamp(r + i, 0, h - 1), c);
            out.at(r, c) = acc;
        }
    return out;
}

} // namespace detail

inline BinaryMask canny(const GrayImage& img, double sigma = 1.0, double low = 0.1, double high = 0.2) {
    require(low >= 0.0 && low < high, "canny: need 0 <= low < high");
    const int h = img.height, w = img.width;
    GrayImage smooth = detail::gaussian_blur(img, sigma);

    GrayImage gx(h, w), gy(h, w), mag(h, w);
    auto px = [&](int r, int c) { return smooth.at(std::clamp(r, 0, h - 1), std::clamp(c, 0, w - 1)); };
    double max_mag = 0.0;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double sx = (px(r - 1, c + 1) + 2 * px(r, c + 1) + px(r + 1, c + 1)) -
                              (px(r - 1, c - 1) + 2 * px(r, c - 1) + px(r + 1, c - 1));
            const double sy = (px(r + 1, c - 1) + 2 * px(r + 1, c) + px(r + 1, c + 1)) -
                              (px(r - 1, c - 1) + 2 * px(r - 1, c) + px(r - 1, c + 1));
            gx.at(r, c) = sx;
            gy.at(r, c) = sy;
            mag.at(r, c) = std::hypot(sx, sy);
            max_mag = std::max(max_mag, mag.at(r, c));
        }
    BinaryMask edges(h, w);
    if (max_mag <= 0.0) return edges; // constant image: no edges

    for (auto& m : mag.data) m /= max_mag;

    // Non-maximum suppression along the quantized gradient direction.
    GrayImage thin(h, w, 0.0);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double m = mag.at(r, c);
            if (m < low) continue;
            const double angle = std::atan2(gy.at(r, c), gx.at(r, c));
            double deg = angle * 180.0 / 3.14159265358979323846;
            if (deg < 0) deg += 180.0;
            int dr, dc;
            if (deg < 22.5 || deg >= 157.5) {
                dr = 0;
                dc = 1;
            } else if (deg < 67.5) {
                dr = 1;
                dc = 1;
            } else if (deg < 112.5) {
                dr = 1;
                dc = 0;
            } else {
                dr = 1;
                dc = -1;
            }
            auto m_at = [&](int rr, int cc) {
                if (rr < 0 || rr >= h || cc < 0 || cc >= w) return 0.0;
                return mag.at(rr, cc);
            };
            if (m >= m_at(r + dr, c + dc) && m >= m_at(r - dr, c - dc)) thin.at(r, c) = m;
        }

    // Hysteresis: grow strong seeds through weak pixels, 8-connected.
    std::vector<std::pair<int, int>> stack;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            if (thin.at(r, c) >= high) {
                edges.at(r, c) = 1;
                stack.emplace_back(r, c);
            }
    while (!stack.empty()) {
        auto [r, c] = stack.back();
        stack.pop_back();
        for (int dr = -1; dr <= 1; ++dr)
            for (int dc = -1; dc <= 1; ++dc) {
                const int rr = r + dr, cc = c + dc;
                if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
                if (edges.at(rr, cc) || thin.at(rr, cc) < low) continue;
                edges.at(rr, cc) = 1;
                stack.emplace_back(rr, cc);
            }
    }
    return edges;
}

// ---------------------------------------------------------------------------
// Input stack assembly: channel 0 is the gray image, the rest follow config
// order. Aux channels (Otsu/Howe baseline outputs) are supplied precomputed,
// in the order they appear in the config.
// ---------------------------------------------------------------------------

inline Tensor build_input_stack(const GrayImage& img, const FeatureConfig& config,
                                const std::vector<GrayImage>& aux = {}) {
    require(static_cast<int>(aux.size()) == config.aux_count(),
            "build_input_stack: aux channel count mismatch");
    std::vector<GrayImage> planes;
    planes.push_back(img);
    size_t aux_next = 0;
    for (const auto& ch : config.channels) {
        using Kind = FeatureSpec::Kind;
        switch (ch.kind) {
        case Kind::RelativeDarkness: {
            RelativeDarkness rd = relative_darkness(img, ch.window, ch.threshold);
            planes.push_back(std::move(rd.darker));
            planes.push_back(std::move(rd.similar));
            planes.push_back(std::move(rd.lighter));
            break;
        }
        case Kind::Min: planes.push_back(local_filter(img, LocalFilterKind::Min, ch.window)); break;
        case Kind::Max: planes.push_back(local_filter(img, LocalFilterKind::Max, ch.window)); break;
        case Kind::Mean: planes.push_back(local_filter(img, LocalFilterKind::Mean, ch.window)); break;
        case Kind::Median: planes.push_back(local_filter(img, LocalFilterKind::Median, ch.window)); break;
        case Kind::Stddev: planes.push_back(local_filter(img, LocalFilterKind::Stddev, ch.window)); break;
        case Kind::Percentile:
            planes.push_back(local_filter(img, LocalFilterKind::Percentile, ch.window, ch.p));
            break;
        case Kind::Canny: {
            BinaryMask edges = canny(img, ch.sigma, ch.low, ch.high);
            GrayImage plane(edges.height, edges.width);
            for (size_t i = 0; i < plane.size(); ++i) plane.data[i] = edges.data[i];
            planes.push_back(std::move(plane));
            break;
        }
        case Kind::Otsu:
        case Kind::Howe: {
            const GrayImage& a = aux[aux_next++];
            require(a.same_shape(img), "build_input_stack: aux channel shape mismatch");
            planes.push_back(a);
            break;
        }
        }
    }
    Tensor stack({static_cast<int>(planes.size()), img.height, img.width});
    double* dst = stack.data();
    for (const auto& plane : planes) {
        std::copy(plane.data.begin(), plane.data.end(), dst);
        dst += plane.size();
    }
    return stack;
}

// ---------------------------------------------------------------------------
// Text form: comma-separated channel tokens, stored in model headers and
// accepted by the CLI / config files. Round-trips exactly.
// ---------------------------------------------------------------------------

inline std::string to_string(const FeatureConfig& config) {
    std::string out;
    for (size_t i = 0; i < config.channels.size(); ++i) {
        const auto& ch = config.channels[i];
        if (i) out += ",";
        using Kind = FeatureSpec::Kind;
        switch (ch.kind) {
        case Kind::RelativeDarkness:
            out += "rd:" + std::to_string(ch.window) + ":" + fmt_double(ch.threshold);
            break;
        case Kind::Min: out += "min:" + std::to_string(ch.window); break;
        case Kind::Max: out += "max:" + std::to_string(ch.window); break;
        case Kind::Mean: out += "mean:" + std::to_string(ch.window); break;
        case Kind::Median: out += "median:" + std::to_string(ch.window); break;
        case Kind::Stddev: out += "stddev:" + std::to_string(ch.window); break;
        case Kind::Percentile:
            out += "percentile:" + std::to_string(ch.window) + ":" + fmt_double(ch.p);
            break;
        case Kind::Canny:
            out += "canny:" + fmt_double(ch.sigma) + ":" + fmt_double(ch.low) + ":" + fmt_double(ch.high);
            break;
        case Kind::Otsu: out += "otsu"; break;
        case Kind::Howe: out += "howe"; break;
        }
    }
    return out.empty() ? "none" : out;
}

inline FeatureConfig parse_feature_config(const std::string& text) {
    FeatureConfig fc;
    if (text == "none" || text.empty()) return fc;
    std::stringstream ss(text);
    std::string token;
    while (std::getline(ss, token, ',')) {
        std::vector<std::string> parts;
        std::stringstream ts(token);
        std::string part;
        while (std::getline(ts, part, ':')) parts.push_back(part);
        require(!parts.empty(), "feature config: empty token");
        FeatureSpec spec;
        using Kind = FeatureSpec::Kind;
        const std::string& name = parts[0];
        auto num = [&](size_t i, double fallback) { return parts.size() > i ? std::stod(parts[i]) : fallback; };
        if (name == "rd") {
            spec.kind = Kind::RelativeDarkness;
            spec.window = static_cast<int>(num(1, 5));
            spec.threshold = num(2, 10.0 / 255.0);
        } else if (name == "min" || name == "max" || name == "mean" || name == "median" || name == "stddev") {
            spec.kind = name == "min"      ? Kind::Min
                        : name == "max"    ? Kind::Max
                        : name == "mean"   ? Kind::Mean
                        : name == "median" ? Kind::Median
                                           : Kind::Stddev;
            require(parts.size() >= 2, "feature config: filter needs a window size");
            spec.window = std::stoi(parts[1]);
        } else if (name == "percentile") {
            spec.kind = Kind::Percentile;
            require(parts.size() >= 3, "feature config: percentile needs window and rank");
            spec.window = std::stoi(parts[1]);
            spec.p = std::stod(parts[2]);
        } else if (name == "canny") {
            spec.kind = Kind::Canny;
            spec.sigma = num(1, 1.0);
            spec.low = num(2, 0.1);
            spec.high = num(3, 0.2);
        } else if (name == "otsu") {
            spec.kind = Kind::Otsu;
        } else if (name == "howe") {
            spec.kind = Kind::Howe;
        } else {
            throw std::invalid_argument("feature config: unknown channel '" + name + "'");
        }
        fc.channels.push_back(spec);
    }
    return fc;
}

} // namespace docbin
