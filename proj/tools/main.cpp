// mapunetr command-line front end: dataset synthesis, training, evaluation,
// mask inference, and attention-map export.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "mapunetr/harness.hpp"

namespace fs = std::filesystem;
using namespace mapunetr;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

FullConfig resolve_config(const std::string& config_path) {
    if (config_path.empty()) return default_toy_config();
    return load_config(config_path);
}

Model<float> model_from_checkpoint(const std::string& ckpt, FullConfig& cfg_out) {
    if (ckpt.empty()) throw UsageError("--ckpt is required for this subcommand");
    auto loaded = load_checkpoint<float>(ckpt);
    cfg_out = loaded.config;
    return std::move(loaded.model);
}

int cmd_synth(size_t n, size_t size, uint64_t seed, const std::string& out_dir) {
    if (out_dir.empty()) throw UsageError("--out is required for synth");
    auto samples = synth_dataset(n, size, seed);
    save_dataset(samples, out_dir);
    std::printf("wrote %zu samples (%zux%zu) to %s\n", samples.size(), size, size, out_dir.c_str());
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, uint64_t seed, bool deterministic) {
    if (data_dir.empty()) throw UsageError("--data is required for train");
    FullConfig cfg = resolve_config(config_path);
    auto data = load_dataset(data_dir);

    Model<float> model(cfg.model);
    Rng init = Rng(seed).split(0);
    model.init_weights(init);

    TrainOptions opt;
    opt.out_dir = out_dir.empty() ? "." : out_dir;
    opt.seed = seed;
    opt.deterministic = deterministic;
    auto res = train(model, cfg, data, opt);

    const auto& last = res.log.back();
    std::printf("trained %d epochs: loss %.6f dice %.6f (val dice %.6f)\n",
                last.epoch + 1, last.loss, last.dice_coef, last.val_dice_coef);
    std::printf("checkpoints: %s, %s\n", res.best_path.c_str(), res.last_path.c_str());
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, bool deterministic) {
    if (data_dir.empty()) throw UsageError("--data is required for eval");
    FullConfig cfg;
    Model<float> model = model_from_checkpoint(ckpt, cfg);
    auto data = load_dataset(data_dir);

    MetricsReport r = evaluate_parallel(model, data, worker_count(deterministic));
    std::printf("metric     value\n");
    std::printf("---------  --------\n");
    std::printf("dsc        %.6f\n", r.dsc);
    std::printf("iou        %.6f\n", r.iou);
    std::printf("accuracy   %.6f\n", r.accuracy);
    std::printf("precision  %.6f\n", r.precision);
    std::printf("recall     %.6f\n", r.recall);
    std::printf("RESULT dsc=%.6f iou=%.6f accuracy=%.6f precision=%.6f recall=%.6f\n",
                r.dsc, r.iou, r.accuracy, r.precision, r.recall);
    return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& data_dir, const std::string& out_dir) {
    if (data_dir.empty()) throw UsageError("--data is required for infer");
    if (out_dir.empty()) throw UsageError("--out is required for infer");
    FullConfig cfg;
    Model<float> model = model_from_checkpoint(ckpt, cfg);
    auto data = load_dataset(data_dir);
    fs::create_directories(out_dir);

    for (const auto& s : data) {
        auto fwd = model.forward(image_to_tensor<float>(s.image), BnMode::kInfer);
        Mask pred = predict_mask(fwd.probs);
        write_mask_pgm(out_dir + "/pred_" + s.id + ".pgm", pred);
    }
    std::printf("wrote %zu predicted masks to %s\n", data.size(), out_dir.c_str());
    return 0;
}

int cmd_attn(const std::string& ckpt, const std::string& data_dir, const std::string& out_dir,
             int layer, const std::string& method, double alpha) {
    if (data_dir.empty()) throw UsageError("--data is required for attn");
    if (out_dir.empty()) throw UsageError("--out is required for attn");
    FullConfig cfg;
    Model<float> model = model_from_checkpoint(ckpt, cfg);
    const int depth = static_cast<int>(cfg.model.depth);
    if (method == "single" && (layer < 0 || layer >= depth))
        throw UsageError("--layer " + std::to_string(layer) + " out of range; valid layers are 0.." +
                         std::to_string(depth - 1));
    auto data = load_dataset(data_dir);
    fs::create_directories(out_dir);

    for (const auto& s : data) {
        auto fwd = model.forward(image_to_tensor<float>(s.image), BnMode::kInfer);
        std::vector<double> scores;
        std::string tag;
        if (method == "rollout") {
            scores = rollout(fwd.records);
            tag = "rollout";
        } else {
            scores = head_mean_map(fwd.records[static_cast<size_t>(layer)]);
            tag = "layer" + std::to_string(layer);
        }
        SaliencyMap map = to_heatmap(scores, cfg.model.image_h, cfg.model.image_w,
                                     cfg.model.patch_size);
        map.source = tag + "/head_mean";
        write_pgm(out_dir + "/attn_" + s.id + "_" + tag + ".pgm", saliency_to_gray(map));
        write_ppm(out_dir + "/overlay_" + s.id + "_" + tag + ".ppm", overlay(map, s.image, alpha));
    }
    std::printf("wrote %zu attention maps (%s) to %s\n", data.size(), method.c_str(),
                out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MAPUNetR-style transformer/U-Net segmentation pipeline"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_dir, ckpt;
    uint64_t seed = 0;
    bool deterministic = false;
    size_t synth_n = 8, synth_size = 64;
    int layer = 0;
    std::string method = "single";
    double alpha = 0.5;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON configuration file");
        sub->add_option("--data", data_dir, "dataset directory");
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--ckpt", ckpt, "checkpoint file");
        sub->add_option("--seed", seed, "random seed");
        sub->add_flag("--deterministic", deterministic, "single-threaded deterministic mode");
    };

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    add_common(synth);
    synth->add_option("--n", synth_n, "number of samples");
    synth->add_option("--size", synth_size, "square image extent");

    CLI::App* train_cmd = app.add_subcommand("train", "train a model");
    add_common(train_cmd);

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval_cmd);

    CLI::App* infer_cmd = app.add_subcommand("infer", "write predicted masks");
    add_common(infer_cmd);

    CLI::App* attn_cmd = app.add_subcommand("attn", "export attention maps");
    add_common(attn_cmd);
    attn_cmd->add_option("--layer", layer, "encoder layer to visualize");
    attn_cmd->add_option("--method", method, "aggregation method")
        ->check(CLI::IsMember({"single", "rollout"}));
    attn_cmd->add_option("--alpha", alpha, "overlay blend factor")
        ->check(CLI::Range(0.0, 1.0));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(synth_n, synth_size, seed, out_dir);
        if (train_cmd->parsed())
            return cmd_train(config_path, data_dir, out_dir, seed, deterministic);
        if (eval_cmd->parsed()) return cmd_eval(ckpt, data_dir, deterministic);
        if (infer_cmd->parsed()) return cmd_infer(ckpt, data_dir, out_dir);
        if (attn_cmd->parsed()) return cmd_attn(ckpt, data_dir, out_dir, layer, method, alpha);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
