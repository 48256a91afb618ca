#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "docbin/trainer.hpp"
#include "test_util.hpp"

using namespace docbin;

namespace {

std::vector<PagePair> tiny_corpus(int n, uint64_t seed, int size = 32) {
    PageParams params;
    params.height = size;
    params.width = size;
    params.seed = seed;
    std::vector<PagePair> pages;
    for (int i = 0; i < n; ++i) {
        PageParams p = params;
        p.seed = seed + static_cast<uint64_t>(i);
        PagePair page = generate_page(p);
        page.name = "page_" + std::to_string(i);
        pages.push_back(std::move(page));
    }
    return pages;
}

TrainConfig tiny_config(uint64_t seed) {
    TrainConfig cfg;
    cfg.crop = 32;
    cfg.stride = 32;
    cfg.batch = 2;
    cfg.seed = seed;
    cfg.jobs = 1;
    return cfg;
}

NetworkSpec tiny_spec(uint64_t seed) {
    NetworkSpec spec;
    spec.depth = 4;
    spec.width = 4;
    spec.scales = 2;
    spec.kernel = 3;
    spec.input_channels = 4;
    spec.seed = seed;
    return spec;
}

} // namespace

TEST(ColorJitter, ZeroAmplitudeIsIdentity) {
    Rng rng(101);
    Tensor stack = testutil::random_tensor({3, 6, 6}, rng, 0.0, 1.0);
    Rng jitter_rng(5);
    Tensor out = color_jitter(stack, 0.0, jitter_rng);
    for (int64_t i = 0; i < stack.size(); ++i) EXPECT_EQ(out[i], stack[i]);
}

TEST(ColorJitter, BoundedShiftOnGrayChannelOnly) {
    Tensor stack = Tensor::full({2, 5, 5}, 0.5);
    Rng rng(9);
    Tensor out = color_jitter(stack, 0.1, rng);
    const int64_t plane = 25;
    for (int64_t i = 0; i < plane; ++i) {
        EXPECT_GE(out[i], 0.4);
        EXPECT_LE(out[i], 0.6);
        EXPECT_EQ(out[i], out[0]); // one constant per sample
    }
    for (int64_t i = plane; i < 2 * plane; ++i) EXPECT_EQ(out[i], 0.5); // feature channel untouched
}

TEST(ColorJitter, SeededReproducibility) {
    Tensor stack = Tensor::full({1, 4, 4}, 0.5);
    Rng a(77), b(77);
    Tensor ja = color_jitter(stack, 0.1, a);
    Tensor jb = color_jitter(stack, 0.1, b);
    for (int64_t i = 0; i < ja.size(); ++i) EXPECT_EQ(ja[i], jb[i]);
}

TEST(SplitPages, ImageLevelDisjointness) {
    auto pages = tiny_corpus(5, 21);
    Rng rng(3);
    auto [train_pages, val_pages] = split_pages(pages, 1, rng);
    EXPECT_EQ(train_pages.size(), 4u);
    EXPECT_EQ(val_pages.size(), 1u);
    std::set<std::string> train_names, val_names;
    for (const auto& p : train_pages) train_names.insert(p.name);
    for (const auto& p : val_pages) val_names.insert(p.name);
    for (const auto& name : val_names) EXPECT_EQ(train_names.count(name), 0u);

    // seeded split reproducible
    Rng rng2(3);
    auto [t2, v2] = split_pages(pages, 1, rng2);
    EXPECT_EQ(v2[0].name, val_pages[0].name);

    EXPECT_THROW(split_pages(pages, 5, rng), std::invalid_argument);
}

TEST(PrepareCrops, GridAndForegroundInvariant) {
    auto pages = tiny_corpus(2, 31, 48);
    TrainConfig cfg = tiny_config(0);
    cfg.crop = 32;
    cfg.stride = 16;
    auto crops = prepare_crops(pages, cfg, FeatureConfig::defaults());
    EXPECT_FALSE(crops.empty());
    for (const auto& crop : crops) {
        EXPECT_EQ(crop.input.dim(0), 4);
        EXPECT_EQ(crop.input.dim(1), 32);
        EXPECT_GE(foreground_count(crop.gt), 1);
        EXPECT_EQ(crop.wm.scheme, "pseudo");
    }
    // crop inputs are slices of the page stack: channel 0 equals the image
    const auto& c0 = crops[0];
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 5; ++c)
            EXPECT_DOUBLE_EQ(c0.input.at3(0, r, c), pages[static_cast<size_t>(c0.page)].image.at(c0.row + r, c0.col + c));
}

TEST(Train, LossDescendsOnTinyCorpus) {
    auto pages = tiny_corpus(4, 51);
    TrainConfig cfg = tiny_config(1);
    cfg.lr0 = 0.02;
    cfg.max_epochs = 3;
    auto crops = prepare_crops(pages, cfg, FeatureConfig::defaults());
    ASSERT_GE(crops.size(), 3u);
    std::vector<TrainCrop> val{crops.back()};
    crops.pop_back();

    TrainResult result = train(cfg, tiny_spec(1), FeatureConfig::defaults(), crops, val);
    ASSERT_GE(result.log.steps.size(), 4u);
    EXPECT_LT(result.log.steps.back().value, result.log.steps.front().value);
}

TEST(Train, DeterministicAcrossRunsAndJobs) {
    auto pages = tiny_corpus(3, 61);
    TrainConfig cfg = tiny_config(5);
    cfg.max_epochs = 2;
    auto crops = prepare_crops(pages, cfg, FeatureConfig::defaults());
    std::vector<TrainCrop> val{crops.back()};
    crops.pop_back();
    ASSERT_FALSE(crops.empty());

    TrainResult a = train(cfg, tiny_spec(5), FeatureConfig::defaults(), crops, val);
    TrainResult b = train(cfg, tiny_spec(5), FeatureConfig::defaults(), crops, val);
    TrainConfig cfg2 = cfg;
    cfg2.jobs = 2;
    TrainResult c = train(cfg2, tiny_spec(5), FeatureConfig::defaults(), crops, val);

    std::ostringstream la, lb, lc;
    write_train_log_csv(la, a.log);
    write_train_log_csv(lb, b.log);
    write_train_log_csv(lc, c.log);
    EXPECT_EQ(la.str(), lb.str());
    EXPECT_EQ(la.str(), lc.str()); // parallel batch items reduce in index order
    EXPECT_EQ(serialize_model(a.network), serialize_model(b.network));
    EXPECT_EQ(serialize_model(a.network), serialize_model(c.network));
}

TEST(Train, PlateauScheduleDecaysThreeTimesThenStops) {
    // With an unreachable improvement threshold every evaluation counts as a
    // plateau: LR decays 1e-3 -> 1e-4 -> 1e-5 -> ~1e-6, and the next decay
    // request ends training instead of dropping below the floor.
    auto pages = tiny_corpus(2, 71);
    TrainConfig cfg = tiny_config(2);
    cfg.min_improvement = 1e9;
    cfg.eval_interval_epochs = 1.0;
    cfg.plateau_epochs = 1.0; // decay after every eval
    auto crops = prepare_crops(pages, cfg, FeatureConfig::defaults());
    std::vector<TrainCrop> val{crops.back()};
    crops.pop_back();
    ASSERT_FALSE(crops.empty());

    TrainResult result = train(cfg, tiny_spec(2), FeatureConfig::defaults(), crops, val);
    ASSERT_EQ(result.log.lr_changes.size(), 3u);
    EXPECT_NEAR(result.log.lr_changes[0].value, 1e-4, 1e-12);
    EXPECT_NEAR(result.log.lr_changes[1].value, 1e-5, 1e-15);
    EXPECT_NEAR(result.log.lr_changes[2].value, 1e-6, 1e-16);
    // LR is non-increasing by exactly factor 0.1
    for (size_t i = 1; i < result.log.lr_changes.size(); ++i)
        EXPECT_NEAR(result.log.lr_changes[i].value, result.log.lr_changes[i - 1].value * 0.1, 1e-18);
}

TEST(Train, ReturnedNetworkMatchesBestLoggedValidation) {
    auto pages = tiny_corpus(4, 81);
    TrainConfig cfg = tiny_config(3);
    cfg.lr0 = 0.02;
    cfg.max_epochs = 4;
    cfg.eval_interval_epochs = 0.5;
    auto crops = prepare_crops(pages, cfg, FeatureConfig::defaults());
    std::vector<TrainCrop> val{crops.back()};
    crops.pop_back();
    ASSERT_FALSE(crops.empty());

    TrainResult result = train(cfg, tiny_spec(3), FeatureConfig::defaults(), crops, val);
    ASSERT_FALSE(result.log.evals.empty());
    double max_eval = -1.0;
    for (const auto& e : result.log.evals) max_eval = std::max(max_eval, e.value);
    EXPECT_DOUBLE_EQ(result.log.best_val_pfm(), max_eval);

    const double recomputed = [&] {
        double sum = 0.0;
        for (const auto& crop : val) {
            Plane<double> prob = forward_probabilities(result.network, crop.input);
            sum += pfm_metric(threshold(prob, 0.5), crop.gt, crop.wm);
        }
        return sum / static_cast<double>(val.size());
    }();
    EXPECT_NEAR(recomputed, max_eval, 1e-12);
}

TEST(TrainEnsemble, SeedsOffsetAndSingletonEqualsTrain) {
    auto pages = tiny_corpus(3, 91);
    TrainConfig cfg = tiny_config(7);
    cfg.max_epochs = 1;
    auto crops = prepare_crops(pages, cfg, FeatureConfig::defaults());
    std::vector<TrainCrop> val{crops.back()};
    crops.pop_back();
    ASSERT_FALSE(crops.empty());

    auto ensemble = train_ensemble(cfg, tiny_spec(7), FeatureConfig::defaults(), crops, val, 2);
    ASSERT_EQ(ensemble.size(), 2u);

    TrainResult single = train(cfg, tiny_spec(7), FeatureConfig::defaults(), crops, val);
    EXPECT_EQ(serialize_model(ensemble[0].network), serialize_model(single.network));
    EXPECT_NE(serialize_model(ensemble[0].network), serialize_model(ensemble[1].network));
}
