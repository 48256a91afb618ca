// docbin: batch CLI for the document image binarization toolkit.
//
// Subcommands: synth, train, binarize, eval, baseline, sweep.
// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 domain error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "docbin/docbin.hpp"

namespace fs = std::filesystem;
using namespace docbin;

namespace {

// ---------------------------------------------------------------------------
// Training options: defaults, key=value config file, CLI overrides (CLI wins)
// ---------------------------------------------------------------------------

struct TrainOptions {
    TrainConfig config;
    NetworkSpec spec;
    FeatureConfig features = FeatureConfig::defaults();
    std::string loss_token = "pfm+fm";
    std::string features_token = "rd";
};

std::map<std::string, std::string> read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(path + ": cannot open config file");
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError(path + ": malformed config line '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

void apply_config_map(const std::map<std::string, std::string>& kv, TrainOptions& opt) {
    auto get = [&](const char* key, auto parse, auto& target) {
        auto it = kv.find(key);
        if (it != kv.end()) target = parse(it->second);
    };
    auto to_d = [](const std::string& s) { return std::stod(s); };
    auto to_i = [](const std::string& s) { return std::stoi(s); };
    auto to_u64 = [](const std::string& s) { return std::stoull(s); };
    auto id = [](const std::string& s) { return s; };

    get("loss", id, opt.loss_token);
    get("features", id, opt.features_token);
    get("lr0", to_d, opt.config.lr0);
    get("batch", to_i, opt.config.batch);
    get("weight_decay", to_d, opt.config.weight_decay);
    get("clip_norm", to_d, opt.config.clip_norm);
    get("lr_factor", to_d, opt.config.lr_factor);
    get("plateau_epochs", to_d, opt.config.plateau_epochs);
    get("lr_floor", to_d, opt.config.lr_floor);
    get("jitter", to_d, opt.config.jitter);
    get("crop", to_i, opt.config.crop);
    get("stride", to_i, opt.config.stride);
    get("seed", to_u64, opt.config.seed);
    get("eval_interval_epochs", to_d, opt.config.eval_interval_epochs);
    get("min_improvement", to_d, opt.config.min_improvement);
    get("max_epochs", to_i, opt.config.max_epochs);
    get("jobs", to_i, opt.config.jobs);
    get("depth", to_i, opt.spec.depth);
    get("width", to_i, opt.spec.width);
    get("scales", to_i, opt.spec.scales);
    get("kernel", to_i, opt.spec.kernel);
}

void finalize_train_options(TrainOptions& opt) {
    opt.config.loss = parse_loss(opt.loss_token);
    opt.features = parse_feature_config(opt.features_token);
    opt.spec.input_channels = opt.features.channel_count();
    opt.spec.seed = opt.config.seed;
}

std::vector<std::string> split_commas(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
}

std::string output_mask_path(const std::string& out_dir, const std::string& input) {
    return (fs::path(out_dir) / (fs::path(input).stem().string() + ".pbm")).string();
}

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

int run_synth(const PageParams& params, int count, const std::string& out_dir) {
    generate_corpus(count, params, out_dir);
    std::cout << "wrote " << count << " page pairs to " << out_dir << "\n";
    return 0;
}

int run_train(TrainOptions opt, const std::string& data_dir, const std::string& model_path,
              std::string log_path, int val_count, int ensemble_n) {
    finalize_train_options(opt);
    std::vector<PagePair> pages = load_corpus(data_dir);
    if (val_count <= 0) val_count = std::min<int>(10, std::max<int>(1, static_cast<int>(pages.size()) / 5));
    Rng split_rng(opt.config.seed);
    auto [train_pages, val_pages] = split_pages(pages, val_count, split_rng);
    auto train_crops = prepare_crops(train_pages, opt.config, opt.features);
    auto val_crops = prepare_crops(val_pages, opt.config, opt.features);
    require_domain(!train_crops.empty(), "train: no usable training crops (all background?)");
    require_domain(!val_crops.empty(), "train: no usable validation crops");

    if (log_path.empty()) log_path = model_path + ".log.csv";
    if (ensemble_n <= 1) {
        TrainResult result = train(opt.config, opt.spec, opt.features, train_crops, val_crops);
        save_model(result.network, model_path);
        std::ofstream log(log_path);
        write_train_log_csv(log, result.log);
        std::cout << "model " << model_path << " best_val_pfm " << fmt_double(result.log.best_val_pfm())
                  << "\n";
        return 0;
    }

    auto results = train_ensemble(opt.config, opt.spec, opt.features, train_crops, val_crops, ensemble_n);
    for (int i = 0; i < ensemble_n; ++i) {
        const std::string member = model_path + "." + std::to_string(i);
        save_model(results[static_cast<size_t>(i)].network, member);
        std::ofstream log(member + ".log.csv");
        write_train_log_csv(log, results[static_cast<size_t>(i)].log);
        std::cout << "model " << member << " best_val_pfm "
                  << fmt_double(results[static_cast<size_t>(i)].log.best_val_pfm()) << "\n";
    }
    return 0;
}

int run_binarize(const std::vector<std::string>& model_paths, const std::vector<std::string>& images,
                 const std::string& out_dir, bool write_probs, int jobs) {
    std::vector<Network> nets;
    nets.reserve(model_paths.size());
    for (const auto& path : model_paths) nets.push_back(load_model(path));
    fs::create_directories(out_dir);

    for (const auto& input : images) {
        const GrayImage image = load_gray(input);
        BinaryMask mask(1, 1);
        if (nets.size() == 1) {
            BinarizeResult res = binarize_image(nets[0], image, jobs);
            mask = std::move(res.mask);
            if (write_probs) {
                const std::string prob_path =
                    (fs::path(out_dir) / (fs::path(input).stem().string() + "_prob.pgm")).string();
                save_image(prob_path, res.probabilities);
            }
        } else {
            std::vector<const Network*> refs;
            refs.reserve(nets.size());
            for (const auto& net : nets) refs.push_back(&net);
            mask = ensemble_binarize(refs, image, jobs);
        }
        const std::string out_path = output_mask_path(out_dir, input);
        save_image(out_path, mask);
        std::cout << out_path << "\n";
    }
    return 0;
}

int run_eval(const std::vector<std::string>& pairs, const std::string& out_path, const std::string& scheme) {
    std::vector<std::string> names;
    std::vector<MetricReport> reports;
    for (size_t i = 0; i + 1 < pairs.size(); i += 2) {
        const std::string& pred_path = pairs[i];
        const std::string& gt_path = pairs[i + 1];
        // annotate per-image failures with the pair, preserving the category
        const std::string pair_tag = pred_path + " vs " + gt_path + ": ";
        try {
            const BinaryMask pred = load_mask(pred_path);
            const BinaryMask gt = load_mask(gt_path);
            const WeightMaps wm = scheme == "uniform" ? uniform_weights(gt) : pseudo_weights(gt);
            reports.push_back(evaluate_pair(pred, gt, wm));
            names.push_back(pred_path);
        } catch (const FormatError& e) {
            throw FormatError(pair_tag + e.what());
        } catch (const std::domain_error& e) {
            throw std::domain_error(pair_tag + e.what());
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument(pair_tag + e.what());
        }
    }
    if (out_path.empty()) {
        write_metric_csv(std::cout, names, reports);
    } else {
        std::ofstream out(out_path);
        if (!out) throw FormatError(out_path + ": cannot open for writing");
        write_metric_csv(out, names, reports);
        const MetricReport mean = aggregate_reports(reports);
        std::cout << "mean pfm " << fmt_double(mean.pfm) << " fm " << fmt_double(mean.fm) << "\n";
    }
    return 0;
}

int run_baseline(const std::string& method, const std::vector<std::string>& images, const std::string& out_dir,
                 int window, double k, double r_cap, double c, double low, double high) {
    fs::create_directories(out_dir);
    for (const auto& input : images) {
        const GrayImage image = load_gray(input);
        BinaryMask mask(1, 1);
        if (method == "otsu") {
            OtsuResult res = otsu(image);
            if (res.constant_input) std::cerr << input << ": constant image, emitting all background\n";
            mask = std::move(res.mask);
        } else if (method == "sauvola") {
            mask = sauvola(image, window, k, r_cap);
        } else {
            mask = howe(image, c, high, low);
        }
        const std::string out_path = output_mask_path(out_dir, input);
        save_image(out_path, mask);
        std::cout << out_path << "\n";
    }
    return 0;
}

int run_sweep(TrainOptions base, const std::string& data_dir, const std::string& out_dir, int val_count,
              const std::string& depths, const std::string& widths, const std::string& scales_list,
              const std::string& kernels) {
    fs::create_directories(out_dir);
    std::vector<PagePair> pages = load_corpus(data_dir);
    if (val_count <= 0) val_count = std::min<int>(10, std::max<int>(1, static_cast<int>(pages.size()) / 5));

    std::ofstream report(fs::path(out_dir) / "sweep.csv");
    report << "depth,width,scales,kernel,parameters,best_val_pfm,model\n";

    for (const std::string& ds : split_commas(depths))
        for (const std::string& ws : split_commas(widths))
            for (const std::string& ss : split_commas(scales_list))
                for (const std::string& ks : split_commas(kernels)) {
                    TrainOptions opt = base;
                    opt.spec.depth = std::stoi(ds);
                    opt.spec.width = std::stoi(ws);
                    opt.spec.scales = std::stoi(ss);
                    opt.spec.kernel = std::stoi(ks);
                    finalize_train_options(opt);

                    Rng split_rng(opt.config.seed);
                    auto [train_pages, val_pages] = split_pages(pages, val_count, split_rng);
                    auto train_crops = prepare_crops(train_pages, opt.config, opt.features);
                    auto val_crops = prepare_crops(val_pages, opt.config, opt.features);
                    require_domain(!train_crops.empty() && !val_crops.empty(), "sweep: no usable crops");

                    TrainResult result = train(opt.config, opt.spec, opt.features, train_crops, val_crops);
                    char name[64];
                    std::snprintf(name, sizeof(name), "model_L%s_D%s_S%s_K%s.fcnb", ds.c_str(), ws.c_str(),
                                  ss.c_str(), ks.c_str());
                    const std::string model_path = (fs::path(out_dir) / name).string();
                    save_model(result.network, model_path);
                    report << ds << ',' << ws << ',' << ss << ',' << ks << ','
                           << result.network.parameter_count() << ',' << fmt_double(result.log.best_val_pfm())
                           << ',' << name << "\n";
                    std::cout << name << " best_val_pfm " << fmt_double(result.log.best_val_pfm()) << "\n";
                }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"docbin: document image binarization with a multi-scale FCN, DIBCO metrics and classical baselines"};
    app.require_subcommand(1);

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "generate a synthetic degraded-document corpus");
    PageParams synth_params;
    int synth_count = 16;
    std::string synth_out;
    bool synth_clean = false;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--count", synth_count, "number of pages");
    synth->add_option("--height", synth_params.height, "page height");
    synth->add_option("--width", synth_params.width, "page width");
    synth->add_option("--seed", synth_params.seed, "base seed");
    synth->add_option("--bleed", synth_params.bleed_opacity, "bleed-through opacity in [0,1]");
    synth->add_option("--noise", synth_params.noise_sigma, "Gaussian noise sigma");
    synth->add_option("--blur", synth_params.blur_sigma, "blur sigma");
    synth->add_option("--gradient", synth_params.gradient_amp, "background gradient amplitude");
    synth->add_option("--min-coverage", synth_params.min_coverage, "min foreground fraction target");
    synth->add_option("--max-coverage", synth_params.max_coverage, "max foreground fraction target");
    synth->add_flag("--clean", synth_clean, "disable all degradations");

    // ---- shared training options ----
    TrainOptions opt;
    std::string config_path, data_dir, model_path, log_path;
    int val_count = 0, ensemble_n = 1;

    auto add_train_flags = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "key=value config file");
        cmd->add_option("--data", data_dir, "corpus directory with manifest.csv")->required();
        cmd->add_option("--val-count", val_count, "validation page count (default: min(10, pages/5))");
        cmd->add_option("--loss", opt.loss_token, "loss: pfm|fm|pfm+fm|ce");
        cmd->add_option("--features", opt.features_token, "feature channels (e.g. rd:5:0.0392,canny,otsu)");
        cmd->add_option("--seed", opt.config.seed, "seed for init, split, shuffling and jitter");
        cmd->add_option("--jobs", opt.config.jobs, "worker threads for batch items");
        cmd->add_option("--batch", opt.config.batch, "mini-batch size");
        cmd->add_option("--crop", opt.config.crop, "training crop size");
        cmd->add_option("--stride", opt.config.stride, "crop stride");
        cmd->add_option("--lr", opt.config.lr0, "initial learning rate");
        cmd->add_option("--max-epochs", opt.config.max_epochs, "epoch cap (0 = run to the LR floor)");
    };

    auto* train_cmd = app.add_subcommand("train", "train an FCN on an image/GT corpus");
    add_train_flags(train_cmd);
    train_cmd->add_option("--model", model_path, "output model path")->required();
    train_cmd->add_option("--log", log_path, "training log CSV (default: <model>.log.csv)");
    train_cmd->add_option("--train-ensemble", ensemble_n, "train N members from consecutive seeds");
    train_cmd->add_option("--depth", opt.spec.depth, "conv layers per path");
    train_cmd->add_option("--width", opt.spec.width, "channels per conv");
    train_cmd->add_option("--scales", opt.spec.scales, "resolution branches");
    train_cmd->add_option("--kernel", opt.spec.kernel, "kernel size (odd)");

    // ---- binarize ----
    auto* binarize_cmd = app.add_subcommand("binarize", "binarize images with trained model(s)");
    std::string bin_model, bin_ensemble, bin_out;
    bool bin_probs = false;
    int bin_jobs = 1;
    std::vector<std::string> bin_images;
    binarize_cmd->add_option("--model", bin_model, "model file");
    binarize_cmd->add_option("--ensemble", bin_ensemble, "comma-separated model files (majority vote)");
    binarize_cmd->add_option("--out", bin_out, "output directory")->required();
    binarize_cmd->add_flag("--probs", bin_probs, "also write probability maps (P5)");
    binarize_cmd->add_option("--jobs", bin_jobs, "worker threads over crops");
    binarize_cmd->add_option("images", bin_images, "input PNM images")->required();

    // ---- eval ----
    auto* eval_cmd = app.add_subcommand("eval", "score prediction/GT mask pairs (P-FM, FM, PSNR, DRD)");
    std::string eval_out, eval_scheme = "pseudo";
    std::vector<std::string> eval_pairs;
    eval_cmd->add_option("--out", eval_out, "report CSV path (default: stdout)");
    eval_cmd->add_option("--scheme", eval_scheme, "weight scheme: pseudo|uniform")
        ->check(CLI::IsMember({"pseudo", "uniform"}));
    eval_cmd->add_option("pairs", eval_pairs, "PRED GT [PRED GT ...]")->required();

    // ---- baseline ----
    auto* baseline_cmd = app.add_subcommand("baseline", "classical binarization methods");
    std::string base_method, base_out;
    int sauvola_window = 31;
    double sauvola_k = 0.2, sauvola_r = 0.5, howe_c = 50.0, canny_low = 0.1, canny_high = 0.2;
    std::vector<std::string> base_images;
    baseline_cmd->add_option("--method", base_method, "otsu|sauvola|howe")
        ->required()
        ->check(CLI::IsMember({"otsu", "sauvola", "howe"}));
    baseline_cmd->add_option("--out", base_out, "output directory")->required();
    baseline_cmd->add_option("--window", sauvola_window, "sauvola window");
    baseline_cmd->add_option("--k", sauvola_k, "sauvola k");
    baseline_cmd->add_option("--R", sauvola_r, "sauvola dynamic range");
    baseline_cmd->add_option("--c", howe_c, "howe pairwise penalty");
    baseline_cmd->add_option("--low", canny_low, "howe canny low threshold");
    baseline_cmd->add_option("--high", canny_high, "howe canny high threshold");
    baseline_cmd->add_option("images", base_images, "input PNM images")->required();

    // ---- sweep ----
    auto* sweep_cmd = app.add_subcommand("sweep", "train one model per architecture grid point");
    std::string sweep_out, sweep_depths = "9", sweep_widths = "64", sweep_scales = "4", sweep_kernels = "9";
    add_train_flags(sweep_cmd);
    sweep_cmd->add_option("--out", sweep_out, "output directory")->required();
    sweep_cmd->add_option("--depth", sweep_depths, "comma list of depths");
    sweep_cmd->add_option("--width", sweep_widths, "comma list of widths");
    sweep_cmd->add_option("--scales", sweep_scales, "comma list of scale counts");
    sweep_cmd->add_option("--kernel", sweep_kernels, "comma list of kernel sizes");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (app.got_subcommand(synth)) {
            if (synth_clean) {
                PageParams clean = PageParams::clean();
                clean.height = synth_params.height;
                clean.width = synth_params.width;
                clean.seed = synth_params.seed;
                clean.min_coverage = synth_params.min_coverage;
                clean.max_coverage = synth_params.max_coverage;
                synth_params = clean;
            }
            return run_synth(synth_params, synth_count, synth_out);
        }
        // config file values sit between built-in defaults and explicit CLI
        // flags: file overrides defaults, flags override the file
        auto merge_config = [&](CLI::App* cmd, bool spec_flags) {
            if (config_path.empty()) return;
            TrainOptions merged;
            apply_config_map(read_config_file(config_path), merged);
            auto given = [&](const char* name) { return cmd->count(name) > 0; };
            if (given("--loss")) merged.loss_token = opt.loss_token;
            if (given("--features")) merged.features_token = opt.features_token;
            if (given("--seed")) merged.config.seed = opt.config.seed;
            if (given("--jobs")) merged.config.jobs = opt.config.jobs;
            if (given("--batch")) merged.config.batch = opt.config.batch;
            if (given("--crop")) merged.config.crop = opt.config.crop;
            if (given("--stride")) merged.config.stride = opt.config.stride;
            if (given("--lr")) merged.config.lr0 = opt.config.lr0;
            if (given("--max-epochs")) merged.config.max_epochs = opt.config.max_epochs;
            if (spec_flags) {
                if (given("--depth")) merged.spec.depth = opt.spec.depth;
                if (given("--width")) merged.spec.width = opt.spec.width;
                if (given("--scales")) merged.spec.scales = opt.spec.scales;
                if (given("--kernel")) merged.spec.kernel = opt.spec.kernel;
            }
            opt = merged;
        };

        if (app.got_subcommand(train_cmd)) {
            merge_config(train_cmd, true);
            return run_train(opt, data_dir, model_path, log_path, val_count, ensemble_n);
        }
        if (app.got_subcommand(binarize_cmd)) {
            std::vector<std::string> models;
            if (!bin_ensemble.empty())
                models = split_commas(bin_ensemble);
            else if (!bin_model.empty())
                models = {bin_model};
            if (models.empty()) {
                std::cerr << "binarize: need --model or --ensemble\n";
                return 1;
            }
            return run_binarize(models, bin_images, bin_out, bin_probs, bin_jobs);
        }
        if (app.got_subcommand(eval_cmd)) {
            if (eval_pairs.size() < 2 || eval_pairs.size() % 2 != 0) {
                std::cerr << "eval: positional arguments must be PRED GT pairs\n";
                return 1;
            }
            return run_eval(eval_pairs, eval_out, eval_scheme);
        }
        if (app.got_subcommand(baseline_cmd))
            return run_baseline(base_method, base_images, base_out, sauvola_window, sauvola_k, sauvola_r,
                                howe_c, canny_low, canny_high);
        if (app.got_subcommand(sweep_cmd)) {
            merge_config(sweep_cmd, false); // sweep's --depth etc. are grid lists
            return run_sweep(opt, data_dir, sweep_out, val_count, sweep_depths, sweep_widths, sweep_scales,
                             sweep_kernels);
        }
        std::cerr << "no subcommand selected\n";
        return 1;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::domain_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
