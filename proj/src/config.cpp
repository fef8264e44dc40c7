#include <fstream>

#include "mapunetr/harness.hpp"

#include "json.hpp"

namespace mapunetr {

namespace {

using nlohmann::json;

const char* kind_name(TransformKind k) {
    switch (k) {
        case TransformKind::kCenterCrop: return "center_crop";
        case TransformKind::kRandomRot90: return "random_rot90";
        case TransformKind::kGridDistortion: return "grid_distortion";
        case TransformKind::kFlipH: return "flip_h";
        case TransformKind::kFlipV: return "flip_v";
    }
    return "?";
}

TransformKind kind_from_name(const std::string& s) {
    if (s == "center_crop") return TransformKind::kCenterCrop;
    if (s == "random_rot90") return TransformKind::kRandomRot90;
    if (s == "grid_distortion") return TransformKind::kGridDistortion;
    if (s == "flip_h") return TransformKind::kFlipH;
    if (s == "flip_v") return TransformKind::kFlipV;
    throw ConfigError("config: unknown transform '" + s + "'");
}

}  // namespace

FullConfig default_toy_config() {
    FullConfig cfg;
    cfg.model = ModelConfig{};  // 64x64, C=3, P=8, D=64, h=4, depth 6, skips {1,3,5}
    cfg.schedule = ScheduleConfig{};
    // schedule tuned so the toy setup overfits a handful of synthetic
    // samples on a CPU; the plain ScheduleConfig defaults decay too fast
    // for that
    cfg.schedule.lr0 = 0.05;
    cfg.schedule.momentum = 0.9;
    cfg.schedule.gamma = 0.5;
    cfg.schedule.step_epochs = 50;
    return cfg;
}

std::string config_to_json(const FullConfig& cfg) {
    json j;
    j["image_size"] = {cfg.model.image_h, cfg.model.image_w};
    j["in_channels"] = cfg.model.in_channels;
    j["patch_size"] = cfg.model.patch_size;
    j["embed_dim"] = cfg.model.embed_dim;
    j["num_heads"] = cfg.model.num_heads;
    j["depth"] = cfg.model.depth;
    j["mlp_ratio"] = cfg.model.mlp_ratio;
    j["skip_layers"] = cfg.model.skip_layers;
    j["decoder_channels"] = cfg.model.decoder_channels;
    j["num_classes"] = cfg.model.num_classes;
    j["lr0"] = cfg.schedule.lr0;
    j["gamma"] = cfg.schedule.gamma;
    j["step_epochs"] = cfg.schedule.step_epochs;
    j["momentum"] = cfg.schedule.momentum;
    j["epochs"] = cfg.schedule.epochs;
    j["batch_size"] = cfg.schedule.batch_size;
    if (!cfg.augment.transforms.empty()) {
        json aug;
        for (const auto& t : cfg.augment.transforms)
            aug["transforms"].push_back({{"kind", kind_name(t.kind)}, {"probability", t.probability}});
        aug["crop_h"] = cfg.augment.crop_h;
        aug["crop_w"] = cfg.augment.crop_w;
        aug["distortion_cells"] = cfg.augment.distortion_cells;
        aug["distortion_magnitude"] = cfg.augment.distortion_magnitude;
        j["augment"] = aug;
    }
    return j.dump(2);
}

FullConfig config_from_json(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    FullConfig cfg = default_toy_config();
    auto& m = cfg.model;
    auto& s = cfg.schedule;
    if (j.contains("image_size")) {
        auto sz = j["image_size"];
        if (!sz.is_array() || sz.size() != 2) throw ConfigError("config: image_size must be [H, W]");
        m.image_h = sz[0];
        m.image_w = sz[1];
    }
    m.in_channels = j.value("in_channels", m.in_channels);
    m.patch_size = j.value("patch_size", m.patch_size);
    m.embed_dim = j.value("embed_dim", m.embed_dim);
    m.num_heads = j.value("num_heads", m.num_heads);
    m.depth = j.value("depth", m.depth);
    m.mlp_ratio = j.value("mlp_ratio", m.mlp_ratio);
    if (j.contains("skip_layers")) m.skip_layers = j["skip_layers"].get<std::vector<size_t>>();
    if (j.contains("decoder_channels"))
        m.decoder_channels = j["decoder_channels"].get<std::vector<size_t>>();
    m.num_classes = j.value("num_classes", m.num_classes);
    s.lr0 = j.value("lr0", s.lr0);
    s.gamma = j.value("gamma", s.gamma);
    s.step_epochs = j.value("step_epochs", s.step_epochs);
    s.momentum = j.value("momentum", s.momentum);
    s.epochs = j.value("epochs", s.epochs);
    s.batch_size = j.value("batch_size", s.batch_size);
    if (j.contains("augment")) {
        auto& a = j["augment"];
        for (const auto& t : a.value("transforms", json::array()))
            cfg.augment.transforms.push_back(
                {kind_from_name(t.at("kind")), t.value("probability", 1.0)});
        cfg.augment.crop_h = a.value("crop_h", size_t{0});
        cfg.augment.crop_w = a.value("crop_w", size_t{0});
        cfg.augment.distortion_cells = a.value("distortion_cells", 4);
        cfg.augment.distortion_magnitude = a.value("distortion_magnitude", 0.3);
    }
    m.validate();
    s.validate();
    cfg.augment.validate();
    return cfg;
}

FullConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return config_from_json(text);
}

}  // namespace mapunetr
