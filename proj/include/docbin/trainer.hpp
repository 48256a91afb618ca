#pragma once

#include <ostream>
#include <utility>
#include <vector>

#include "docbin/datagen.hpp"
#include "docbin/inference.hpp"
#include "docbin/loss.hpp"
#include "docbin/metrics.hpp"
#include "docbin/network.hpp"

namespace docbin {

// ---------------------------------------------------------------------------
// Training recipe: SGD at lr0=0.001 on mini-batches of 10 crops, L2 weight
// decay 0.0005 (biases exempt), gradient clipping to global norm 10, LR x0.1
// after 1.5 epochs without validation improvement, stop when the LR would
// decay below 1e-6. The best-on-validation parameters are the output.
// ---------------------------------------------------------------------------

struct TrainConfig {
    LossKind loss = LossKind::PseudoFPlusF;
    double lr0 = 1e-3;
    int batch = 10;
    double weight_decay = 5e-4;
    double clip_norm = 10.0;
    double lr_factor = 0.1;
    double plateau_epochs = 1.5;
    double lr_floor = 1e-6;
    double jitter = 25.0 / 255.0;
    int crop = 256;
    int stride = 64;
    uint64_t seed = 0;
    double eval_interval_epochs = 0.5;
    double min_improvement = 1e-4;
    int max_epochs = 0; // 0 = run until the LR floor
    int jobs = 1;

    void validate() const {
        require(lr0 > 0 && lr_factor > 0 && lr_factor < 1 && lr_floor > 0, "TrainConfig: bad learning rates");
        require(batch >= 1 && crop >= 1 && stride >= 1, "TrainConfig: bad batch/crop/stride");
        require(plateau_epochs > 0 && eval_interval_epochs > 0, "TrainConfig: bad schedule intervals");
        require(jitter >= 0 && weight_decay >= 0 && clip_norm > 0, "TrainConfig: bad regularization values");
    }
};

struct TrainLog {
    struct Entry {
        int step;
        double value;
    };
    std::vector<Entry> steps;      // per-step mean training loss
    std::vector<Entry> evals;      // validation P-FM per evaluation
    std::vector<Entry> lr_changes; // LR value after each decay
    int best_eval = -1;            // index into evals

    double best_val_pfm() const { return best_eval < 0 ? 0.0 : evals[static_cast<size_t>(best_eval)].value; }
};

inline void write_train_log_csv(std::ostream& out, const TrainLog& log) {
    out << "kind,step,value\n";
    for (const auto& e : log.steps) out << "loss," << e.step << ',' << fmt_double(e.value) << '\n';
    for (const auto& e : log.evals) out << "val_pfm," << e.step << ',' << fmt_double(e.value) << '\n';
    for (const auto& e : log.lr_changes) out << "lr," << e.step << ',' << fmt_double(e.value) << '\n';
    if (log.best_eval >= 0) {
        const auto& best = log.evals[static_cast<size_t>(log.best_eval)];
        out << "best," << best.step << ',' << fmt_double(best.value) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Crop preparation: the feature stack is computed once per page and sliced
// at the crop grid; pseudo weight maps are cached per crop for the loss and
// the validation metric.
// ---------------------------------------------------------------------------

struct TrainCrop {
    Tensor input; // feature stack slice, {D, crop, crop}
    BinaryMask gt;
    WeightMaps wm;
    int page = 0;
    int row = 0, col = 0;
};

inline std::vector<TrainCrop> prepare_crops(const std::vector<PagePair>& pages, const TrainConfig& cfg,
                                            const FeatureConfig& features) {
    std::vector<TrainCrop> crops;
    for (size_t p = 0; p < pages.size(); ++p) {
        const GrayImage* image = &pages[p].image;
        const BinaryMask* gt = &pages[p].gt;
        GrayImage padded_image;
        BinaryMask padded_gt;
        if (image->height < cfg.crop || image->width < cfg.crop) {
            const int h = std::max(image->height, cfg.crop), w = std::max(image->width, cfg.crop);
            padded_image = detail::replicate_pad_to(*image, h, w);
            padded_gt = detail::replicate_pad_to(*gt, h, w);
            image = &padded_image;
            gt = &padded_gt;
        }
        const Tensor stack = build_full_stack(*image, features);
        for (const CropPair& crop : extract_crops(*image, *gt, cfg.crop, cfg.stride)) {
            TrainCrop tc;
            tc.page = static_cast<int>(p);
            tc.row = crop.row;
            tc.col = crop.col;
            tc.gt = crop.mask;
            tc.wm = pseudo_weights(crop.mask);
            tc.input = Tensor({stack.dim(0), cfg.crop, cfg.crop});
            for (int ch = 0; ch < stack.dim(0); ++ch)
                for (int r = 0; r < cfg.crop; ++r)
                    for (int c = 0; c < cfg.crop; ++c)
                        tc.input.at3(ch, r, c) = stack.at3(ch, crop.row + r, crop.col + c);
            crops.push_back(std::move(tc));
        }
    }
    return crops;
}

/// Image-level split: no page contributes crops to both sides.
inline std::pair<std::vector<PagePair>, std::vector<PagePair>>
split_pages(const std::vector<PagePair>& pages, int val_count, Rng& rng) {
    require(val_count >= 1 && val_count < static_cast<int>(pages.size()),
            "split_pages: validation count must leave at least one training page");
    std::vector<int> order(pages.size());
    for (size_t i = 0; i < pages.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);
    std::pair<std::vector<PagePair>, std::vector<PagePair>> out;
    for (size_t i = 0; i < pages.size(); ++i) {
        if (i < static_cast<size_t>(val_count))
            out.second.push_back(pages[static_cast<size_t>(order[i])]);
        else
            out.first.push_back(pages[static_cast<size_t>(order[i])]);
    }
    return out;
}

inline std::pair<std::vector<TrainCrop>, std::vector<TrainCrop>>
make_split(const std::vector<PagePair>& pages, int val_count, const TrainConfig& cfg,
           const FeatureConfig& features, Rng& rng) {
    auto [train_pages, val_pages] = split_pages(pages, val_count, rng);
    return {prepare_crops(train_pages, cfg, features), prepare_crops(val_pages, cfg, features)};
}

/// Color jitter: one constant drawn from U(-a, a) added to the gray channel
/// only (feature channels are recomputed semantics and stay fixed), clamped
/// back to [0,1].
inline Tensor color_jitter(const Tensor& stack, double amplitude, Rng& rng) {
    Tensor out = stack;
    if (amplitude <= 0.0) return out;
    const double shift = rng.uniform(-amplitude, amplitude);
    const int64_t plane = static_cast<int64_t>(out.dim(1)) * out.dim(2);
    for (int64_t i = 0; i < plane; ++i) out[i] = std::clamp(out[i] + shift, 0.0, 1.0);
    return out;
}

struct TrainResult {
    Network network;
    TrainLog log;
};

namespace detail {

inline double mean_validation_pfm(const Network& net, const std::vector<TrainCrop>& val, int jobs) {
    std::vector<double> scores(val.size(), 0.0);
    parallel_for(static_cast<int>(val.size()), jobs, [&](int i) {
        const TrainCrop& crop = val[static_cast<size_t>(i)];
        const Plane<double> prob = forward_probabilities(net, crop.input);
        scores[static_cast<size_t>(i)] = pfm_metric(threshold(prob, 0.5), crop.gt, crop.wm);
    });
    double sum = 0.0;
    for (double s : scores) sum += s; // fixed reduction order
    return sum / static_cast<double>(val.size());
}

} // namespace detail

/// Full training loop. `spec.seed` controls initialization; `cfg.seed`
/// controls shuffling and jitter, so runs are bit-reproducible.
inline TrainResult train(const TrainConfig& cfg, const NetworkSpec& spec, const FeatureConfig& features,
                         const std::vector<TrainCrop>& train_crops, const std::vector<TrainCrop>& val_crops) {
    cfg.validate();
    require(!train_crops.empty() && !val_crops.empty(), "train: empty crop sets");
    require(spec.input_channels == features.channel_count(),
            "train: network input channels must match the feature config");
    for (const auto& crop : train_crops)
        require_domain(foreground_count(crop.gt) > 0, "train: crop without foreground (dataset invariant)");

    Network net = build_network(spec, features);
    Rng data_rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 0x7f4a7c15ULL);

    const int n = static_cast<int>(train_crops.size());
    const int steps_per_epoch = (n + cfg.batch - 1) / cfg.batch;
    const int eval_interval = std::max(1, static_cast<int>(std::lround(steps_per_epoch * cfg.eval_interval_epochs)));
    const int plateau_evals = std::max(1, static_cast<int>(std::lround(cfg.plateau_epochs / cfg.eval_interval_epochs)));

    TrainLog log;
    auto params = net.parameters();
    std::vector<Tensor> best_params;
    best_params.reserve(params.size());
    for (auto ref : params) best_params.push_back(*ref.tensor);
    double best_pfm = -1.0;
    double lr = cfg.lr0;
    int evals_without_improvement = 0;
    int step = 0;
    bool stop = false;

    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

    auto run_eval = [&]() {
        const double pfm = detail::mean_validation_pfm(net, val_crops, cfg.jobs);
        log.evals.push_back({step, pfm});
        if (pfm > best_pfm + cfg.min_improvement) {
            best_pfm = pfm;
            log.best_eval = static_cast<int>(log.evals.size()) - 1;
            for (size_t t = 0; t < params.size(); ++t) best_params[t] = *params[t].tensor;
            evals_without_improvement = 0;
        } else {
            ++evals_without_improvement;
        }
        if (evals_without_improvement >= plateau_evals) {
            const double next = lr * cfg.lr_factor;
            if (next < cfg.lr_floor * 0.999) {
                stop = true;
                return;
            }
            lr = next;
            log.lr_changes.push_back({step, lr});
            evals_without_improvement = 0;
        }
    };

    for (int epoch = 0; !stop && (cfg.max_epochs == 0 || epoch < cfg.max_epochs); ++epoch) {
        data_rng.shuffle(order);
        for (int start = 0; start < n && !stop; start += cfg.batch) {
            const int count = std::min(cfg.batch, n - start);

            // jitter constants drawn sequentially so parallelism cannot
            // perturb the random stream
            std::vector<Tensor> inputs(static_cast<size_t>(count));
            for (int i = 0; i < count; ++i)
                inputs[static_cast<size_t>(i)] =
                    color_jitter(train_crops[static_cast<size_t>(order[static_cast<size_t>(start + i)])].input,
                                 cfg.jitter, data_rng);

            std::vector<double> losses(static_cast<size_t>(count), 0.0);
            std::vector<std::vector<Tensor>> item_grads(static_cast<size_t>(count));
            parallel_for(count, cfg.jobs, [&](int i) {
                const TrainCrop& crop = train_crops[static_cast<size_t>(order[static_cast<size_t>(start + i)])];
                ForwardCache cache = forward(net, inputs[static_cast<size_t>(i)]);
                const LossResult loss =
                    evaluate_loss(cfg.loss, plane_from_channel(cache.prob, 0), crop.gt, crop.wm);
                losses[static_cast<size_t>(i)] = loss.value;
                item_grads[static_cast<size_t>(i)] = backward(net, cache, loss.grad);
            });

            // deterministic index-ordered reduction, then batch mean
            std::vector<Tensor> grads = std::move(item_grads[0]);
            for (int i = 1; i < count; ++i)
                for (size_t t = 0; t < grads.size(); ++t) {
                    const Tensor& g = item_grads[static_cast<size_t>(i)][t];
                    for (int64_t k = 0; k < g.size(); ++k) grads[t][k] += g[k];
                }
            const double inv = 1.0 / count;
            for (auto& g : grads)
                for (int64_t k = 0; k < g.size(); ++k) g[k] *= inv;

            clip_gradients(grads, cfg.clip_norm);
            for (size_t t = 0; t < params.size(); ++t)
                sgd_step(*params[t].tensor, grads[t], lr, params[t].is_bias ? 0.0 : cfg.weight_decay);

            double mean_loss = 0.0;
            for (double l : losses) mean_loss += l;
            log.steps.push_back({step, mean_loss / count});
            ++step;

            if (step % eval_interval == 0) run_eval();
        }
    }
    if (log.evals.empty()) run_eval(); // degenerate schedules still pick a best

    for (size_t t = 0; t < params.size(); ++t) *params[t].tensor = best_params[t];
    return TrainResult{std::move(net), std::move(log)};
}

/// n independent runs from seeds seed+0 .. seed+n-1 (both the initialization
/// and the data stream move together).
inline std::vector<TrainResult> train_ensemble(const TrainConfig& cfg, const NetworkSpec& spec,
                                               const FeatureConfig& features,
                                               const std::vector<TrainCrop>& train_crops,
                                               const std::vector<TrainCrop>& val_crops, int n = 5) {
    require(n >= 1, "train_ensemble: need at least one member");
    std::vector<TrainResult> results;
    results.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        TrainConfig member_cfg = cfg;
        member_cfg.seed = cfg.seed + static_cast<uint64_t>(i);
        NetworkSpec member_spec = spec;
        member_spec.seed = spec.seed + static_cast<uint64_t>(i);
        results.push_back(train(member_cfg, member_spec, features, train_crops, val_crops));
    }
    return results;
}

} // namespace docbin
