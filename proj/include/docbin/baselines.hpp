#pragma once

#include <array>
#include <cmath>
#include <queue>
#include <vector>

#include "docbin/features.hpp"
#include "docbin/image.hpp"

namespace docbin {

// ---------------------------------------------------------------------------
// Otsu global threshold on the 256-bin histogram of round(v*255). Threshold
// ties resolve to the smallest t; foreground = bytes <= t (ink is dark).
// ---------------------------------------------------------------------------

struct OtsuResult {
    BinaryMask mask;
    int threshold = 0;
    bool constant_input = false; // warning flag: no separable classes
};

inline OtsuResult otsu(const GrayImage& img) {
    std::array<int64_t, 256> hist{};
    for (double v : img.data) hist[static_cast<size_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))]++;

    OtsuResult res{BinaryMask(img.height, img.width), 0, false};
    int lo = 0, hi = 255;
    while (lo < 255 && hist[static_cast<size_t>(lo)] == 0) ++lo;
    while (hi > 0 && hist[static_cast<size_t>(hi)] == 0) --hi;
    if (lo == hi) {
        res.constant_input = true; // all-background mask
        return res;
    }

    const double total = static_cast<double>(img.size());
    double total_mean = 0.0;
    for (int i = 0; i < 256; ++i) total_mean += i * static_cast<double>(hist[static_cast<size_t>(i)]);
    total_mean /= total;

    double best = -1.0;
    int best_t = 0;
    double w0 = 0.0, sum0 = 0.0;
    for (int t = 0; t < 255; ++t) {
        w0 += static_cast<double>(hist[static_cast<size_t>(t)]);
        sum0 += t * static_cast<double>(hist[static_cast<size_t>(t)]);
        const double w1 = total - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        const double mu0 = sum0 / w0;
        const double mu1 = (total_mean * total - sum0) / w1;
        const double between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (between > best) { // strict: ties keep the smallest t
            best = between;
            best_t = t;
        }
    }
    res.threshold = best_t;
    for (size_t i = 0; i < img.size(); ++i)
        res.mask.data[i] = std::lround(std::clamp(img.data[i], 0.0, 1.0) * 255.0) <= best_t ? 1 : 0;
    return res;
}

/// Otsu output as a feature channel (1 = ink).
inline GrayImage otsu_channel(const GrayImage& img) {
    OtsuResult res = otsu(img);
    GrayImage out(img.height, img.width);
    for (size_t i = 0; i < out.size(); ++i) out.data[i] = res.mask.data[i];
    return out;
}

// ---------------------------------------------------------------------------
// Sauvola local threshold T = m (1 + k (s/R - 1)) with window statistics
// under edge replication, computed via integral images over a padded copy.
// ---------------------------------------------------------------------------

inline BinaryMask sauvola(const GrayImage& img, int window = 31, double k = 0.2, double r_cap = 0.5) {
    require(window % 2 == 1 && window >= 3, "sauvola: window must be odd and >= 3");
    require(r_cap > 0.0, "sauvola: dynamic range must be positive");
    const int h = img.height, w = img.width, half = window / 2;

    // replicate-pad so every window is fully inside the integral image
    const int ph = h + 2 * half, pw = w + 2 * half;
    std::vector<double> integral(static_cast<size_t>(ph + 1) * (pw + 1), 0.0);
    std::vector<double> integral_sq(static_cast<size_t>(ph + 1) * (pw + 1), 0.0);
    auto idx = [pw](int r, int c) { return static_cast<size_t>(r) * (pw + 1) + c; };
    for (int r = 0; r < ph; ++r)
        for (int c = 0; c < pw; ++c) {
            const double v = img.at(std::clamp(r - half, 0, h - 1), std::clamp(c - half, 0, w - 1));
            integral[idx(r + 1, c + 1)] = v + integral[idx(r, c + 1)] + integral[idx(r + 1, c)] - integral[idx(r, c)];
            integral_sq[idx(r + 1, c + 1)] =
                v * v + integral_sq[idx(r, c + 1)] + integral_sq[idx(r + 1, c)] - integral_sq[idx(r, c)];
        }

    BinaryMask out(h, w);
    const double area = static_cast<double>(window) * window;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            // window [r, r+window) x [c, c+window) in padded coordinates
            const double sum = integral[idx(r + window, c + window)] - integral[idx(r, c + window)] -
                               integral[idx(r + window, c)] + integral[idx(r, c)];
            const double sum_sq = integral_sq[idx(r + window, c + window)] - integral_sq[idx(r, c + window)] -
                                  integral_sq[idx(r + window, c)] + integral_sq[idx(r, c)];
            const double mean = sum / area;
            const double sd = std::sqrt(std::max(0.0, sum_sq / area - mean * mean));
            const double threshold = mean * (1.0 + k * (sd / r_cap - 1.0));
            out.at(r, c) = img.at(r, c) <= threshold ? 1 : 0;
        }
    return out;
}

// ---------------------------------------------------------------------------
// 3x3 Laplacian stencil with edge replication.
// ---------------------------------------------------------------------------

inline Plane<double> laplacian(const GrayImage& img) {
    const int h = img.height, w = img.width;
    Plane<double> out(h, w);
    auto px = [&](int r, int c) { return img.at(std::clamp(r, 0, h - 1), std::clamp(c, 0, w - 1)); };
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            out.at(r, c) = px(r - 1, c) + px(r + 1, c) + px(r, c - 1) + px(r, c + 1) - 4.0 * px(r, c);
    return out;
}

// ---------------------------------------------------------------------------
// Grid MRF and exact max-flow/min-cut.
//
// Energy of a labeling y:  sum_{y_p = fg} sink(p) + sum_{y_p = bg} source(p)
//                          + sum_{(p,q) 4-adjacent, y_p != y_q} pairwise(p,q)
// so a large source capacity pulls the pixel to the foreground label.
// ---------------------------------------------------------------------------

struct GridGraph {
    int height = 0, width = 0;
    Plane<double> source;    // cost of labeling the pixel background
    Plane<double> sink;      // cost of labeling the pixel foreground
    Plane<double> pair_h;    // capacity between (r,c) and (r,c+1); last column unused
    Plane<double> pair_v;    // capacity between (r,c) and (r+1,c); last row unused

    GridGraph(int h, int w)
        : height(h), width(w), source(h, w, 0.0), sink(h, w, 0.0), pair_h(h, w, 0.0), pair_v(h, w, 0.0) {}

    double energy(const BinaryMask& labels) const {
        double e = 0.0;
        for (int r = 0; r < height; ++r)
            for (int c = 0; c < width; ++c) {
                e += labels.at(r, c) ? sink.at(r, c) : source.at(r, c);
                if (c + 1 < width && labels.at(r, c) != labels.at(r, c + 1)) e += pair_h.at(r, c);
                if (r + 1 < height && labels.at(r, c) != labels.at(r + 1, c)) e += pair_v.at(r, c);
            }
        return e;
    }
};

struct MaxFlowResult {
    BinaryMask labels; // 1 = foreground (source side)
    double flow = 0.0;
};

namespace detail {

/// Dinic's algorithm on the grid graph (s = N, t = N+1).
class DinicSolver {
public:
    explicit DinicSolver(int nodes) : adj_(static_cast<size_t>(nodes)) {}

    void add_edge(int from, int to, double cap) {
        adj_[static_cast<size_t>(from)].push_back({to, static_cast<int>(adj_[static_cast<size_t>(to)].size()), cap});
        adj_[static_cast<size_t>(to)].push_back({from, static_cast<int>(adj_[static_cast<size_t>(from)].size()) - 1, 0.0});
    }

    double run(int s, int t) {
        static constexpr double kEps = 1e-11;
        double flow = 0.0;
        while (bfs(s, t, kEps)) {
            iter_.assign(adj_.size(), 0);
            while (true) {
                const double pushed = dfs(s, t, std::numeric_limits<double>::infinity(), kEps);
                if (pushed <= kEps) break;
                flow += pushed;
            }
        }
        return flow;
    }

    /// After run(): true when the node can still reach t in the residual
    /// graph. The complement of this set is the foreground-maximal cut side.
    std::vector<char> reaches_sink(int t) const {
        static constexpr double kEps = 1e-11;
        std::vector<char> reach(adj_.size(), 0);
        std::queue<int> queue;
        reach[static_cast<size_t>(t)] = 1;
        queue.push(t);
        while (!queue.empty()) {
            const int v = queue.front();
            queue.pop();
            for (const Edge& e : adj_[static_cast<size_t>(v)]) {
                // residual capacity of the edge e.to -> v
                const Edge& incoming = adj_[static_cast<size_t>(e.to)][static_cast<size_t>(e.rev)];
                if (incoming.cap > kEps && !reach[static_cast<size_t>(e.to)]) {
                    reach[static_cast<size_t>(e.to)] = 1;
                    queue.push(e.to);
                }
            }
        }
        return reach;
    }

private:
    struct Edge {
        int to;
        int rev;
        double cap;
    };

    bool bfs(int s, int t, double eps) {
        level_.assign(adj_.size(), -1);
        std::queue<int> queue;
        level_[static_cast<size_t>(s)] = 0;
        queue.push(s);
        while (!queue.empty()) {
            const int v = queue.front();
            queue.pop();
            for (const Edge& e : adj_[static_cast<size_t>(v)])
                if (e.cap > eps && level_[static_cast<size_t>(e.to)] < 0) {
                    level_[static_cast<size_t>(e.to)] = level_[static_cast<size_t>(v)] + 1;
                    queue.push(e.to);
                }
        }
        return level_[static_cast<size_t>(t)] >= 0;
    }

    double dfs(int v, int t, double limit, double eps) {
        if (v == t) return limit;
        for (auto& i = iter_[static_cast<size_t>(v)]; i < static_cast<int>(adj_[static_cast<size_t>(v)].size()); ++i) {
            Edge& e = adj_[static_cast<size_t>(v)][static_cast<size_t>(i)];
            if (e.cap <= eps || level_[static_cast<size_t>(v)] + 1 != level_[static_cast<size_t>(e.to)]) continue;
            const double pushed = dfs(e.to, t, std::min(limit, e.cap), eps);
            if (pushed > eps) {
                e.cap -= pushed;
                adj_[static_cast<size_t>(e.to)][static_cast<size_t>(e.rev)].cap += pushed;
                return pushed;
            }
        }
        return 0.0;
    }

    std::vector<std::vector<Edge>> adj_;
    std::vector<int> level_;
    std::vector<int> iter_;
};

} // namespace detail

/// Exact s-t max flow / min cut. Label ties resolve toward foreground: the
/// foreground side is the complement of the nodes that still reach the sink.
inline MaxFlowResult max_flow(const GridGraph& g) {
    const int n = g.height * g.width;
    detail::DinicSolver solver(n + 2);
    const int s = n, t = n + 1;
    auto id = [&](int r, int c) { return r * g.width + c; };
    for (int r = 0; r < g.height; ++r)
        for (int c = 0; c < g.width; ++c) {
            if (g.source.at(r, c) > 0.0) solver.add_edge(s, id(r, c), g.source.at(r, c));
            if (g.sink.at(r, c) > 0.0) solver.add_edge(id(r, c), t, g.sink.at(r, c));
            if (c + 1 < g.width && g.pair_h.at(r, c) > 0.0) {
                solver.add_edge(id(r, c), id(r, c + 1), g.pair_h.at(r, c));
                solver.add_edge(id(r, c + 1), id(r, c), g.pair_h.at(r, c));
            }
            if (r + 1 < g.height && g.pair_v.at(r, c) > 0.0) {
                solver.add_edge(id(r, c), id(r + 1, c), g.pair_v.at(r, c));
                solver.add_edge(id(r + 1, c), id(r, c), g.pair_v.at(r, c));
            }
        }

    MaxFlowResult res{BinaryMask(g.height, g.width), solver.run(s, t)};
    const std::vector<char> reach = solver.reaches_sink(t);
    for (int r = 0; r < g.height; ++r)
        for (int c = 0; c < g.width; ++c) res.labels.at(r, c) = reach[static_cast<size_t>(id(r, c))] ? 0 : 1;
    return res;
}

// ---------------------------------------------------------------------------
// Howe-style binarization: Laplacian unaries (dark ink has a negative
// response at stroke cores, favoring foreground), Potts pairwise terms gated
// off where Canny fires at either endpoint, exact minimization by max-flow.
// ---------------------------------------------------------------------------

inline GridGraph howe_graph(const GrayImage& img, double c, double t_hi = 0.2, double t_lo = 0.1) {
    require(c >= 0.0, "howe: pairwise penalty must be non-negative");
    const Plane<double> lap = laplacian(img);
    double peak = 0.0;
    for (double v : lap.data) peak = std::max(peak, std::abs(v));

    GridGraph g(img.height, img.width);
    // Ink sits at intensity minima, where the 3x3 Laplacian is positive, so
    // the foreground response is the negated Laplacian: U(fg) = -L + peak,
    // U(bg) = L + peak. The constant offset keeps capacities non-negative and
    // cancels in energy differences; the tiny bias on U(fg) resolves exact
    // unary ties (perfectly flat regions) toward background.
    const double tie_bias = 1e-9 * std::max(1.0, peak);
    for (int r = 0; r < img.height; ++r)
        for (int col = 0; col < img.width; ++col) {
            g.sink.at(r, col) = -lap.at(r, col) + peak + tie_bias;
            g.source.at(r, col) = lap.at(r, col) + peak;
        }
    if (c > 0.0) {
        const BinaryMask edges = canny(img, 1.0, t_lo, t_hi);
        for (int r = 0; r < img.height; ++r)
            for (int col = 0; col < img.width; ++col) {
                if (col + 1 < img.width)
                    g.pair_h.at(r, col) = (edges.at(r, col) || edges.at(r, col + 1)) ? 0.0 : c;
                if (r + 1 < img.height)
                    g.pair_v.at(r, col) = (edges.at(r, col) || edges.at(r + 1, col)) ? 0.0 : c;
            }
    }
    return g;
}

inline BinaryMask howe(const GrayImage& img, double c = 50.0, double t_hi = 0.2, double t_lo = 0.1) {
    return max_flow(howe_graph(img, c, t_hi, t_lo)).labels;
}

/// Howe output as a feature channel (1 = ink).
inline GrayImage howe_channel(const GrayImage& img) {
    BinaryMask mask = howe(img);
    GrayImage out(img.height, img.width);
    for (size_t i = 0; i < out.size(); ++i) out.data[i] = mask.data[i];
    return out;
}

/// Computes the precomputed channels a FeatureConfig asks for, in config
/// order (the baselines are the only aux providers).
inline std::vector<GrayImage> compute_aux_channels(const GrayImage& img, const FeatureConfig& config) {
    std::vector<GrayImage> aux;
    for (const auto& ch : config.channels) {
        if (ch.kind == FeatureSpec::Kind::Otsu) aux.push_back(otsu_channel(img));
        if (ch.kind == FeatureSpec::Kind::Howe) aux.push_back(howe_channel(img));
    }
    return aux;
}

/// Full input stack including any baseline-derived channels.
inline Tensor build_full_stack(const GrayImage& img, const FeatureConfig& config) {
    return build_input_stack(img, config, compute_aux_channels(img, config));
}

} // namespace docbin
