#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "mapunetr/attnmap.hpp"
#include "mapunetr/image_io.hpp"
#include "mapunetr/metrics.hpp"
#include "mapunetr/model.hpp"
#include "mapunetr/optim.hpp"
#include "mapunetr/preprocess.hpp"
#include "mapunetr/rng.hpp"

namespace mapunetr {

struct FormatError : IoError {
    using IoError::IoError;
};
struct VersionError : IoError {
    using IoError::IoError;
};

// ---------------------------------------------------------------------------
// configuration

struct FullConfig {
    ModelConfig model;
    ScheduleConfig schedule;
    AugmentConfig augment;
};

// 64x64 binary-segmentation setup that trains on a CPU in minutes.
FullConfig default_toy_config();

std::string config_to_json(const FullConfig& cfg);
FullConfig config_from_json(const std::string& json_text);
FullConfig load_config(const std::string& path);

// ---------------------------------------------------------------------------
// datasets

struct SynthShape {
    bool ellipse = true;
    double cy = 0, cx = 0, ry = 1, rx = 1;
    double intensity = 1.0;

    bool contains(double y, double x) const {
        if (ellipse) {
            double dy = (y - cy) / ry, dx = (x - cx) / rx;
            return dy * dy + dx * dx <= 1.0;
        }
        return std::abs(y - cy) <= ry && std::abs(x - cx) <= rx;
    }
};

// Dark textured background with 1-2 bright shapes; mask is 1 exactly on
// shape pixels. Deterministic in (n, size, seed).
std::vector<Sample> synth_dataset(size_t n, size_t size, uint64_t seed);

// Same, also reporting the analytic shape parameters per sample.
std::vector<Sample> synth_dataset(size_t n, size_t size, uint64_t seed,
                                  std::vector<std::vector<SynthShape>>* shapes_out);

// Directory layout: img_<id>.ppm + mask_<id>.pgm + meta.json.
void save_dataset(const std::vector<Sample>& samples, const std::string& dir, size_t num_classes = 2);
std::vector<Sample> load_dataset(const std::string& dir, size_t* num_classes = nullptr);

// ---------------------------------------------------------------------------
// checkpoints

inline constexpr char kCheckpointMagic[8] = {'M', 'U', 'N', 'R', 'C', 'K', 'P', 'T'};
inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u16(std::ostream& o, uint16_t v) {
    char b[2] = {char(v & 0xff), char(v >> 8)};
    o.write(b, 2);
}
inline void put_u32(std::ostream& o, uint32_t v) {
    char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char(v >> 24)};
    o.write(b, 4);
}
inline uint16_t get_u16(std::istream& i, const std::string& path) {
    unsigned char b[2];
    if (!i.read(reinterpret_cast<char*>(b), 2)) throw FormatError(path + ": truncated checkpoint");
    return uint16_t(b[0]) | uint16_t(b[1]) << 8;
}
inline uint32_t get_u32(std::istream& i, const std::string& path) {
    unsigned char b[4];
    if (!i.read(reinterpret_cast<char*>(b), 4)) throw FormatError(path + ": truncated checkpoint");
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

template <typename T>
constexpr uint8_t dtype_code() {
    return sizeof(T) == 4 ? 0 : 1;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const Model<T>& model, const FullConfig& cfg,
                     uint32_t epoch, const std::vector<uint8_t>& rng_state) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(kCheckpointMagic, 8);
    detail::put_u32(out, kCheckpointVersion);
    std::string js = config_to_json(cfg);
    detail::put_u32(out, static_cast<uint32_t>(js.size()));
    out.write(js.data(), js.size());
    detail::put_u32(out, static_cast<uint32_t>(model.params().size()));
    for (const auto& p : model.params()) {
        detail::put_u16(out, static_cast<uint16_t>(p.name.size()));
        out.write(p.name.data(), p.name.size());
        out.put(static_cast<char>(detail::dtype_code<T>()));
        out.put(static_cast<char>(p.tensor.ndim()));
        for (size_t d : p.tensor.shape()) detail::put_u32(out, static_cast<uint32_t>(d));
        out.write(reinterpret_cast<const char*>(p.tensor.data().data()),
                  p.tensor.numel() * sizeof(T));
    }
    detail::put_u32(out, epoch);
    detail::put_u32(out, static_cast<uint32_t>(rng_state.size()));
    out.write(reinterpret_cast<const char*>(rng_state.data()), rng_state.size());
    if (!out) throw IoError("failed writing checkpoint " + path);
}

template <typename T>
struct LoadedCheckpoint {
    FullConfig config;
    Model<T> model;
    uint32_t epoch = 0;
    std::vector<uint8_t> rng_state;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char magic[8];
    if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kCheckpointMagic))
        throw FormatError(path + ": bad checkpoint magic");
    uint32_t version = detail::get_u32(in, path);
    if (version > kCheckpointVersion)
        throw VersionError(path + ": checkpoint version " + std::to_string(version) +
                           " is newer than supported " + std::to_string(kCheckpointVersion));
    uint32_t cfg_len = detail::get_u32(in, path);
    std::string js(cfg_len, '\0');
    if (!in.read(js.data(), cfg_len)) throw FormatError(path + ": truncated checkpoint");
    FullConfig cfg = config_from_json(js);

    LoadedCheckpoint<T> out{cfg, Model<T>(cfg.model), 0, {}};
    uint32_t n_params = detail::get_u32(in, path);
    if (n_params != out.model.params().size())
        throw FormatError(path + ": parameter count does not match config");
    for (uint32_t i = 0; i < n_params; ++i) {
        uint16_t name_len = detail::get_u16(in, path);
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) throw FormatError(path + ": truncated checkpoint");
        int dtype = in.get();
        int ndims = in.get();
        if (dtype < 0 || ndims < 0) throw FormatError(path + ": truncated checkpoint");
        if (dtype != detail::dtype_code<T>())
            throw FormatError(path + ": dtype code " + std::to_string(dtype) +
                              " does not match model precision");
        Shape shape(static_cast<size_t>(ndims));
        for (auto& d : shape) d = detail::get_u32(in, path);
        auto& p = out.model.param(name);
        if (p.tensor.shape() != shape)
            throw FormatError(path + ": shape mismatch for parameter '" + name + "'");
        if (!in.read(reinterpret_cast<char*>(p.tensor.data().data()), p.tensor.numel() * sizeof(T)))
            throw FormatError(path + ": truncated checkpoint");
    }
    out.epoch = detail::get_u32(in, path);
    uint32_t rng_len = detail::get_u32(in, path);
    out.rng_state.resize(rng_len);
    if (rng_len &&
        !in.read(reinterpret_cast<char*>(out.rng_state.data()), rng_len))
        throw FormatError(path + ": truncated checkpoint");
    return out;
}

// ---------------------------------------------------------------------------
// training

struct EpochLog {
    int epoch = 0;
    double accuracy = 0, dice_coef = 0, loss = 0, lr = 0;
    double val_acc = 0, val_dice_coef = 0, val_loss = 0;
};

struct TrainOptions {
    std::string out_dir;
    uint64_t seed = 0;
    bool deterministic = false;
};

struct SplitIndices {
    std::vector<size_t> train, val;
};

// Deterministic seeded-shuffle 80/20 split; val is never empty when n >= 2.
SplitIndices split_dataset(size_t n, Rng& rng);

void write_log_csv(const std::string& path, const std::vector<EpochLog>& rows);

template <typename T>
struct TrainResult {
    std::vector<EpochLog> log;
    std::string best_path, last_path;
    double best_val_dice = 0;
};

// The end-to-end loop: per epoch shuffle, batch, forward (train mode),
// dice loss, backward, SGD step at lr_at(epoch); soft-dice / pixel accuracy
// / loss logged for both splits; checkpoints at best val dice and at end.
template <typename T>
TrainResult<T> train(Model<T>& model, const FullConfig& cfg, const std::vector<Sample>& data,
                     const TrainOptions& opt) {
    cfg.schedule.validate();
    if (data.size() < static_cast<size_t>(cfg.schedule.batch_size))
        throw ConfigError("train: dataset of " + std::to_string(data.size()) +
                          " samples is smaller than one batch of " +
                          std::to_string(cfg.schedule.batch_size));
    std::filesystem::create_directories(opt.out_dir);

    Rng root(opt.seed);
    Rng shuffle_rng = root.split(1);
    Rng augment_rng = root.split(2);

    SplitIndices split = split_dataset(data.size(), shuffle_rng);
    const auto& val_idx = split.val.empty() ? split.train : split.val;

    SgdOptimizer<T> opt_sgd(cfg.schedule.momentum);
    TrainResult<T> result;
    result.best_path = opt.out_dir + "/best.ckpt";
    result.last_path = opt.out_dir + "/last.ckpt";
    result.best_val_dice = -1.0;

    for (int epoch = 0; epoch < cfg.schedule.epochs; ++epoch) {
        double lr = lr_at(epoch, cfg.schedule);
        std::vector<size_t> order = split.train;
        shuffle_rng.shuffle(order);

        double tr_loss = 0, tr_dice = 0, tr_acc = 0;
        size_t b = 0;
        while (b < order.size()) {
            size_t batch_n = std::min(order.size() - b, static_cast<size_t>(cfg.schedule.batch_size));
            opt_sgd.zero_grad(model.params());
            for (size_t i = 0; i < batch_n; ++i) {
                const Sample& base = data[order[b + i]];
                Sample s = cfg.augment.transforms.empty() ? base
                                                          : augment(base, cfg.augment, augment_rng);
                auto fwd = model.forward(image_to_tensor<T>(s.image), BnMode::kTrain);
                Tensor<T> loss = dice_loss(fwd.probs, s.mask);
                tr_loss += static_cast<double>(loss.item());
                tr_dice += soft_dice(fwd.probs, s.mask);
                tr_acc += pixel_accuracy(predict_mask(fwd.probs), s.mask);
                backward(scale(loss, T(1) / static_cast<T>(batch_n)));
            }
            opt_sgd.step(model.params(), lr);
            b += batch_n;
        }
        double nt = static_cast<double>(order.size());

        double va_loss = 0, va_dice = 0, va_acc = 0;
        for (size_t i : val_idx) {
            auto fwd = model.forward(image_to_tensor<T>(data[i].image), BnMode::kInfer);
            va_loss += static_cast<double>(dice_loss(fwd.probs, data[i].mask).item());
            va_dice += soft_dice(fwd.probs, data[i].mask);
            va_acc += pixel_accuracy(predict_mask(fwd.probs), data[i].mask);
        }
        double nv = static_cast<double>(val_idx.size());

        EpochLog row;
        row.epoch = epoch;
        row.accuracy = tr_acc / nt;
        row.dice_coef = tr_dice / nt;
        row.loss = tr_loss / nt;
        row.lr = lr;
        row.val_acc = va_acc / nv;
        row.val_dice_coef = va_dice / nv;
        row.val_loss = va_loss / nv;
        result.log.push_back(row);

        if (row.val_dice_coef > result.best_val_dice) {
            result.best_val_dice = row.val_dice_coef;
            save_checkpoint(result.best_path, model, cfg, static_cast<uint32_t>(epoch),
                            shuffle_rng.state());
        }
    }

    save_checkpoint(result.last_path, model, cfg,
                    static_cast<uint32_t>(cfg.schedule.epochs), shuffle_rng.state());
    write_log_csv(opt.out_dir + "/log.csv", result.log);
    return result;
}

// Worker cap from MAPUNETR_THREADS; 1 in deterministic mode.
size_t worker_count(bool deterministic);

// evaluate() over samples, chunked across threads with index-ordered
// reduction; identical results for any thread count.
template <typename T>
MetricsReport evaluate_parallel(Model<T>& model, const std::vector<Sample>& samples,
                                size_t threads, uint8_t positive_class = 1) {
    if (samples.empty()) throw ContractError("evaluate: empty dataset");
    threads = std::max<size_t>(1, std::min(threads, samples.size()));
    if (threads == 1) return evaluate(model, samples, positive_class);

    std::vector<MetricsReport> per(samples.size());
    std::vector<std::thread> pool;
    for (size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t]() {
            for (size_t i = t; i < samples.size(); i += threads) {
                auto fwd = model.forward(image_to_tensor<T>(samples[i].image), BnMode::kInfer);
                per[i] = metrics_from_confusion(
                    confusion(predict_mask(fwd.probs), samples[i].mask, positive_class));
            }
        });
    }
    for (auto& th : pool) th.join();

    MetricsReport mean;
    for (const auto& r : per) {
        mean.dsc += r.dsc;
        mean.iou += r.iou;
        mean.accuracy += r.accuracy;
        mean.precision += r.precision;
        mean.recall += r.recall;
    }
    double n = static_cast<double>(samples.size());
    mean.dsc /= n;
    mean.iou /= n;
    mean.accuracy /= n;
    mean.precision /= n;
    mean.recall /= n;
    return mean;
}

}  // namespace mapunetr
