#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "docbin/features.hpp"
#include "docbin/ops.hpp"

namespace docbin {

// ---------------------------------------------------------------------------
// Architecture hyperparameters. `depth` is the number of convolutions along
// any input->output path; `scales` the number of resolution branches.
// ---------------------------------------------------------------------------

struct NetworkSpec {
    int depth = 9;
    int width = 64;
    int scales = 4;
    int kernel = 9;
    int input_channels = 4;
    uint64_t seed = 0;

    void validate() const {
        require(scales >= 1, "NetworkSpec: scales must be >= 1");
        require(depth >= scales + 2, "NetworkSpec: depth must be >= scales + 2");
        require(kernel >= 1 && kernel % 2 == 1, "NetworkSpec: kernel must be odd");
        require(width >= 1 && input_channels >= 1, "NetworkSpec: width and input channels must be positive");
    }

    /// Convs on scale path p before fusion, excluding shared trunk convs.
    int path_convs(int p) const {
        if (scales == 1) return depth - 2;
        return p < scales - 1 ? depth - 3 - p : depth - scales - 1;
    }

    int min_input_extent() const { return 1 << (scales - 1); }
};

struct ConvLayer {
    Tensor w; // {out, K, K, in}
    Tensor b; // {out}
};

// ---------------------------------------------------------------------------
// The branching FCN. The trunk cascades: trunk conv i runs at scale 2^-i and
// its output both continues scale path i and feeds a 2x2 average pool that
// opens the next, smaller scale. Every path carries depth-2 convolutions
// before the two fusion convs, each path output is bilinearly upsampled to
// the input size, and the concatenated scale outputs pass through
// conv+ReLU then conv+sigmoid.
// ---------------------------------------------------------------------------

class Network {
public:
    NetworkSpec spec;
    FeatureConfig features;
    std::vector<ConvLayer> trunk;             // scales-1 shared convs
    std::vector<std::vector<ConvLayer>> path; // per-scale convs after the branch point
    ConvLayer fuse1;                          // S*D -> D, ReLU
    ConvLayer fuse2;                          // D -> 1, sigmoid

    struct ParamRef {
        Tensor* tensor;
        bool is_bias;
    };

    std::vector<ParamRef> parameters() {
        std::vector<ParamRef> out;
        auto add = [&](ConvLayer& layer) {
            out.push_back({&layer.w, false});
            out.push_back({&layer.b, true});
        };
        for (auto& l : trunk) add(l);
        for (auto& p : path)
            for (auto& l : p) add(l);
        add(fuse1);
        add(fuse2);
        return out;
    }

    std::vector<const Tensor*> parameter_tensors() const {
        std::vector<const Tensor*> out;
        auto add = [&](const ConvLayer& layer) {
            out.push_back(&layer.w);
            out.push_back(&layer.b);
        };
        for (const auto& l : trunk) add(l);
        for (const auto& p : path)
            for (const auto& l : p) add(l);
        add(fuse1);
        add(fuse2);
        return out;
    }

    int64_t parameter_count() const {
        int64_t n = 0;
        for (const Tensor* t : parameter_tensors()) n += t->size();
        return n;
    }
};

inline Network build_network(const NetworkSpec& spec, const FeatureConfig& features = FeatureConfig::defaults()) {
    spec.validate();
    Network net;
    net.spec = spec;
    net.features = features;
    Rng rng(spec.seed);

    // He-normal, variance 2/(K^2 * fan_in); draws are rounded through float32
    // so freshly built parameters are exactly representable in the model file.
    auto make_conv = [&](int in_ch, int out_ch) {
        ConvLayer layer{Tensor({out_ch, spec.kernel, spec.kernel, in_ch}), Tensor({out_ch})};
        const double stddev = std::sqrt(2.0 / (static_cast<double>(spec.kernel) * spec.kernel * in_ch));
        for (int64_t i = 0; i < layer.w.size(); ++i)
            layer.w[i] = static_cast<double>(static_cast<float>(stddev * rng.normal()));
        return layer;
    };

    const int d = spec.width;
    for (int i = 0; i < spec.scales - 1; ++i) net.trunk.push_back(make_conv(i == 0 ? spec.input_channels : d, d));
    net.path.resize(static_cast<size_t>(spec.scales));
    for (int p = 0; p < spec.scales; ++p) {
        const int n = spec.path_convs(p);
        for (int j = 0; j < n; ++j) {
            const bool takes_input = (spec.scales == 1 && j == 0);
            net.path[static_cast<size_t>(p)].push_back(make_conv(takes_input ? spec.input_channels : d, d));
        }
    }
    net.fuse1 = make_conv(spec.scales * d, d);
    net.fuse2 = make_conv(d, 1);
    return net;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

struct ForwardCache {
    Tensor input;
    std::vector<Tensor> trunk_out; // relu outputs, scale 2^-i
    std::vector<Tensor> pool_out;  // pooled trunk outputs
    std::vector<std::vector<Tensor>> path_out;
    Tensor concat;
    Tensor fuse1_out;
    Tensor prob; // {1,H,W} sigmoid output
    bool valid = false;
};

inline ForwardCache forward(const Network& net, const Tensor& x) {
    const auto& spec = net.spec;
    require(x.rank() == 3, "forward: input must be {C,H,W}");
    require(x.dim(0) == spec.input_channels, "forward: input channel count does not match the spec");
    const int h = x.dim(1), w = x.dim(2);
    require(h >= spec.min_input_extent() && w >= spec.min_input_extent(),
            "forward: input smaller than 2^(scales-1)");

    ForwardCache cache;
    cache.input = x;
    cache.path_out.resize(static_cast<size_t>(spec.scales));

    for (int i = 0; i < spec.scales - 1; ++i) {
        const Tensor& in = (i == 0) ? cache.input : cache.pool_out[static_cast<size_t>(i - 1)];
        cache.trunk_out.push_back(relu(conv2d(in, net.trunk[static_cast<size_t>(i)].w, net.trunk[static_cast<size_t>(i)].b)));
        cache.pool_out.push_back(avgpool2(cache.trunk_out.back()));
    }

    std::vector<Tensor> upsampled;
    for (int p = 0; p < spec.scales; ++p) {
        const Tensor* cur = nullptr;
        if (spec.scales == 1)
            cur = &cache.input;
        else if (p < spec.scales - 1)
            cur = &cache.trunk_out[static_cast<size_t>(p)];
        else
            cur = &cache.pool_out[static_cast<size_t>(spec.scales - 2)];
        for (const auto& layer : net.path[static_cast<size_t>(p)]) {
            cache.path_out[static_cast<size_t>(p)].push_back(relu(conv2d(*cur, layer.w, layer.b)));
            cur = &cache.path_out[static_cast<size_t>(p)].back();
        }
        upsampled.push_back(cur->dim(1) == h && cur->dim(2) == w ? *cur : bilinear_upsample(*cur, h, w));
    }

    cache.concat = concat_channels(upsampled);
    cache.fuse1_out = relu(conv2d(cache.concat, net.fuse1.w, net.fuse1.b));
    cache.prob = sigmoid(conv2d(cache.fuse1_out, net.fuse2.w, net.fuse2.b));
    cache.valid = true;
    return cache;
}

/// Probability map as a plane (convenience for inference and losses).
inline Plane<double> forward_probabilities(const Network& net, const Tensor& x) {
    return plane_from_channel(forward(net, x).prob, 0);
}

/// Exact parameter gradients for d(loss)/d(prob) via the reverse of the
/// forward ordering. Returns tensors ordered like Network::parameters().
inline std::vector<Tensor> backward(const Network& net, const ForwardCache& cache, const Plane<double>& grad_prob) {
    if (!cache.valid) throw std::logic_error("backward: stale or invalid forward cache");
    const auto& spec = net.spec;
    const int h = cache.input.dim(1), w = cache.input.dim(2);
    require(grad_prob.height == h && grad_prob.width == w, "backward: gradient shape mismatch");

    // gradient slots ordered as parameters(): trunk, paths, fuse1, fuse2
    std::vector<Tensor> grads;
    const auto param_tensors = net.parameter_tensors();
    grads.reserve(param_tensors.size());
    for (const Tensor* t : param_tensors) grads.emplace_back(t->shape());
    int slot_fuse2 = static_cast<int>(grads.size()) - 2;
    int slot_fuse1 = slot_fuse2 - 2;

    Tensor grad_y({1, h, w});
    std::copy(grad_prob.data.begin(), grad_prob.data.end(), grad_y.data());

    // fusion head
    Tensor g = sigmoid_backward(grad_y, cache.prob);
    {
        ConvGradients cg = conv2d_backward(cache.fuse1_out, net.fuse2.w, g);
        grads[static_cast<size_t>(slot_fuse2)] = std::move(cg.w);
        grads[static_cast<size_t>(slot_fuse2 + 1)] = std::move(cg.b);
        g = relu_backward(cg.x, cache.fuse1_out);
    }
    {
        ConvGradients cg = conv2d_backward(cache.concat, net.fuse1.w, g);
        grads[static_cast<size_t>(slot_fuse1)] = std::move(cg.w);
        grads[static_cast<size_t>(slot_fuse1 + 1)] = std::move(cg.b);
        g = std::move(cg.x);
    }

    std::vector<Tensor> parts = split_channels(g, std::vector<int>(static_cast<size_t>(spec.scales), spec.width));

    // parameter slot of the first conv of path p
    auto path_slot = [&](int p) {
        int slot = 2 * (spec.scales - 1);
        for (int q = 0; q < p; ++q) slot += 2 * spec.path_convs(q);
        return slot;
    };

    Tensor grad_trunk_next; // gradient flowing into pool_out[scales-2] / trunk chain
    std::vector<Tensor> grad_trunk_out(static_cast<size_t>(std::max(0, spec.scales - 1)));

    for (int p = spec.scales - 1; p >= 0; --p) {
        const auto& outs = cache.path_out[static_cast<size_t>(p)];
        Tensor gp = std::move(parts[static_cast<size_t>(p)]);
        const Tensor& last = outs.back();
        if (last.dim(1) != h || last.dim(2) != w)
            gp = bilinear_upsample_backward(gp, last.dim(1), last.dim(2));

        for (int j = static_cast<int>(outs.size()) - 1; j >= 0; --j) {
            gp = relu_backward(gp, outs[static_cast<size_t>(j)]);
            const Tensor* in = nullptr;
            if (j > 0)
                in = &outs[static_cast<size_t>(j - 1)];
            else if (spec.scales == 1)
                in = &cache.input;
            else if (p < spec.scales - 1)
                in = &cache.trunk_out[static_cast<size_t>(p)];
            else
                in = &cache.pool_out[static_cast<size_t>(spec.scales - 2)];
            ConvGradients cg = conv2d_backward(*in, net.path[static_cast<size_t>(p)][static_cast<size_t>(j)].w, gp);
            const int slot = path_slot(p) + 2 * j;
            grads[static_cast<size_t>(slot)] = std::move(cg.w);
            grads[static_cast<size_t>(slot + 1)] = std::move(cg.b);
            gp = std::move(cg.x);
        }

        if (spec.scales == 1) continue;
        if (p < spec.scales - 1)
            grad_trunk_out[static_cast<size_t>(p)] = std::move(gp);
        else
            grad_trunk_next = std::move(gp); // d/d pool_out[scales-2]
    }

    // trunk chain: trunk_out[i] fans out to path i and (via pool) deeper layers
    for (int i = spec.scales - 2; i >= 0; --i) {
        const Tensor& t_out = cache.trunk_out[static_cast<size_t>(i)];
        Tensor g_out = avgpool2_backward(grad_trunk_next, t_out.dim(1), t_out.dim(2));
        Tensor& from_path = grad_trunk_out[static_cast<size_t>(i)];
        for (int64_t k = 0; k < g_out.size(); ++k) g_out[k] += from_path[k];

        g_out = relu_backward(g_out, t_out);
        const Tensor& in = (i == 0) ? cache.input : cache.pool_out[static_cast<size_t>(i - 1)];
        ConvGradients cg = conv2d_backward(in, net.trunk[static_cast<size_t>(i)].w, g_out);
        grads[static_cast<size_t>(2 * i)] = std::move(cg.w);
        grads[static_cast<size_t>(2 * i + 1)] = std::move(cg.b);
        grad_trunk_next = std::move(cg.x); // equals d/d pool_out[i-1] when i > 0
    }

    return grads;
}

// ---------------------------------------------------------------------------
// Serialization: magic "FCNB", version 1, length-prefixed key=value header
// (spec + feature config), parameters as IEEE-754 float32 little-endian in
// layer order, trailing CRC32 of all preceding bytes.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline uint32_t get_u32(const std::string& buf, size_t pos) {
    return static_cast<uint32_t>(static_cast<uint8_t>(buf[pos])) |
           (static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + 1])) << 8) |
           (static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + 2])) << 16) |
           (static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + 3])) << 24);
}

} // namespace detail

inline std::string serialize_model(const Network& net) {
    std::string out = "FCNB";
    out.push_back(1); // version

    std::ostringstream header;
    header << "depth=" << net.spec.depth << "\n";
    header << "width=" << net.spec.width << "\n";
    header << "scales=" << net.spec.scales << "\n";
    header << "kernel=" << net.spec.kernel << "\n";
    header << "input_channels=" << net.spec.input_channels << "\n";
    header << "seed=" << net.spec.seed << "\n";
    header << "features=" << to_string(net.features) << "\n";
    const std::string header_text = header.str();
    detail::put_u32(out, static_cast<uint32_t>(header_text.size()));
    out += header_text;

    for (const Tensor* t : net.parameter_tensors())
        for (int64_t i = 0; i < t->size(); ++i) {
            const float f = static_cast<float>((*t)[i]);
            uint32_t bits;
            std::memcpy(&bits, &f, 4);
            detail::put_u32(out, bits);
        }

    detail::put_u32(out, crc32(out.data(), out.size()));
    return out;
}

inline void save_model(const Network& net, const std::string& path) {
    const std::string bytes = serialize_model(net);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError(path + ": cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError(path + ": write failed");
}

inline Network deserialize_model(const std::string& buf, const std::string& origin = "<memory>") {
    if (buf.size() < 13) throw FormatError(origin + ": model file truncated");
    if (buf.compare(0, 4, "FCNB") != 0) throw FormatError(origin + ": bad magic (expected FCNB)");
    if (buf[4] != 1) throw FormatError(origin + ": unsupported model version");
    const uint32_t stored_crc = detail::get_u32(buf, buf.size() - 4);
    if (crc32(buf.data(), buf.size() - 4) != stored_crc)
        throw FormatError(origin + ": checksum mismatch (file corrupted)");

    const uint32_t header_len = detail::get_u32(buf, 5);
    if (9 + static_cast<size_t>(header_len) + 4 > buf.size()) throw FormatError(origin + ": header overruns file");
    std::istringstream header(buf.substr(9, header_len));

    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(header, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError(origin + ": malformed header line '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto field = [&](const char* key) {
        auto it = kv.find(key);
        if (it == kv.end()) throw FormatError(origin + std::string(": header missing ") + key);
        return it->second;
    };

    NetworkSpec spec;
    spec.depth = std::stoi(field("depth"));
    spec.width = std::stoi(field("width"));
    spec.scales = std::stoi(field("scales"));
    spec.kernel = std::stoi(field("kernel"));
    spec.input_channels = std::stoi(field("input_channels"));
    spec.seed = std::stoull(field("seed"));
    FeatureConfig features = parse_feature_config(field("features"));
    require(features.channel_count() == spec.input_channels,
            "load_model: feature config does not produce the recorded input channel count");

    Network net = build_network(spec, features);
    size_t pos = 9 + header_len;
    for (Network::ParamRef ref : net.parameters())
        for (int64_t i = 0; i < ref.tensor->size(); ++i) {
            if (pos + 4 > buf.size() - 4) throw FormatError(origin + ": parameter block truncated");
            const uint32_t bits = detail::get_u32(buf, pos);
            pos += 4;
            float f;
            std::memcpy(&f, &bits, 4);
            (*ref.tensor)[i] = static_cast<double>(f);
        }
    if (pos != buf.size() - 4) throw FormatError(origin + ": trailing bytes after parameter block");
    return net;
}

inline Network load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(path + ": cannot open file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize_model(ss.str(), path);
}

} // namespace docbin
