#include <algorithm>
#include <cinttypes>
#include <filesystem>
#include <fstream>

#include "mapunetr/harness.hpp"

#include "json.hpp"

namespace fs = std::filesystem;

namespace mapunetr {

namespace {

std::string pad_id(size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04zu", i);
    return buf;
}

}  // namespace

std::vector<Sample> synth_dataset(size_t n, size_t size, uint64_t seed) {
    return synth_dataset(n, size, seed, nullptr);
}

std::vector<Sample> synth_dataset(size_t n, size_t size, uint64_t seed,
                                  std::vector<std::vector<SynthShape>>* shapes_out) {
    if (n < 1) throw ConfigError("synth_dataset: n must be >= 1");
    if (size < 16) throw ConfigError("synth_dataset: size must be >= 16");
    std::vector<Sample> out;
    if (shapes_out) shapes_out->clear();
    Rng root(seed);
    for (size_t i = 0; i < n; ++i) {
        Rng rng = root.split(i);
        Sample s;
        s.id = pad_id(i);
        s.image = Image(size, size, 3);
        s.mask = Mask(size, size);

        // dark textured background with a gentle diagonal ramp
        double ramp = rng.uniform(0.0, 0.08);
        float tint[3] = {static_cast<float>(rng.uniform(0.9, 1.1)),
                         static_cast<float>(rng.uniform(0.9, 1.1)),
                         static_cast<float>(rng.uniform(0.9, 1.1))};
        for (size_t y = 0; y < size; ++y)
            for (size_t x = 0; x < size; ++x) {
                double base = 0.06 + 0.12 * rng.uniform() +
                              ramp * (static_cast<double>(y + x) / (2.0 * size));
                for (size_t c = 0; c < 3; ++c)
                    s.image.at(y, x, c) = std::min(0.3f, static_cast<float>(base) * tint[c]);
            }

        std::vector<SynthShape> shapes;
        size_t n_shapes = 1 + rng.uniform_int(2);
        for (size_t k = 0; k < n_shapes; ++k) {
            SynthShape sh;
            sh.ellipse = rng.uniform() < 0.5;
            sh.cy = rng.uniform(0.22, 0.78) * size;
            sh.cx = rng.uniform(0.22, 0.78) * size;
            sh.ry = rng.uniform(0.08, 0.2) * size;
            sh.rx = rng.uniform(0.08, 0.2) * size;
            sh.intensity = rng.uniform(0.7, 1.0);
            shapes.push_back(sh);
        }
        for (size_t y = 0; y < size; ++y)
            for (size_t x = 0; x < size; ++x) {
                for (const auto& sh : shapes) {
                    if (!sh.contains(static_cast<double>(y), static_cast<double>(x))) continue;
                    double v = sh.intensity * (0.92 + 0.08 * rng.uniform());
                    for (size_t c = 0; c < 3; ++c)
                        s.image.at(y, x, c) = static_cast<float>(std::min(1.0, v));
                    s.mask.at(y, x) = 1;
                    break;
                }
            }
        if (shapes_out) shapes_out->push_back(std::move(shapes));
        out.push_back(std::move(s));
    }
    return out;
}

void save_dataset(const std::vector<Sample>& samples, const std::string& dir, size_t num_classes) {
    fs::create_directories(dir);
    for (const auto& s : samples) {
        write_ppm(dir + "/img_" + s.id + ".ppm", s.image);
        write_mask_pgm(dir + "/mask_" + s.id + ".pgm", s.mask);
    }
    nlohmann::json meta{{"num_classes", num_classes}, {"count", samples.size()}};
    std::ofstream out(dir + "/meta.json");
    out << meta.dump(2) << "\n";
}

std::vector<Sample> load_dataset(const std::string& dir, size_t* num_classes_out) {
    if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir);

    size_t num_classes = 2;
    {
        std::ifstream meta_in(dir + "/meta.json");
        if (meta_in) {
            nlohmann::json meta = nlohmann::json::parse(meta_in);
            num_classes = meta.value("num_classes", size_t{2});
        }
    }
    if (num_classes_out) *num_classes_out = num_classes;

    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(dir)) {
        std::string name = entry.path().filename().string();
        if (name.starts_with("img_") && name.ends_with(".ppm"))
            ids.push_back(name.substr(4, name.size() - 8));
    }
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw FormatError("dataset directory " + dir + " contains no img_*.ppm files");

    std::vector<Sample> out;
    for (const auto& id : ids) {
        std::string mask_path = dir + "/mask_" + id + ".pgm";
        if (!fs::exists(mask_path)) throw FormatError("missing mask for image id '" + id + "'");
        Sample s;
        s.id = id;
        s.image = read_ppm(dir + "/img_" + id + ".ppm");
        s.mask = read_mask_pgm(mask_path);
        if (s.mask.h != s.image.h || s.mask.w != s.image.w)
            throw FormatError("image/mask extent mismatch for id '" + id + "'");
        for (uint8_t v : s.mask.data)
            if (v >= num_classes)
                throw FormatError("mask id '" + id + "' contains class " + std::to_string(v) +
                                  " >= num_classes " + std::to_string(num_classes));
        out.push_back(std::move(s));
    }
    return out;
}

SplitIndices split_dataset(size_t n, Rng& rng) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    rng.shuffle(idx);
    size_t n_val = n >= 2 ? std::max<size_t>(1, n / 5) : 0;
    SplitIndices s;
    s.train.assign(idx.begin(), idx.end() - n_val);
    s.val.assign(idx.end() - n_val, idx.end());
    return s;
}

void write_log_csv(const std::string& path, const std::vector<EpochLog>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "epoch,accuracy,dice_coef,loss,lr,val_acc,val_dice_coef,val_loss\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.17g,%.6f,%.6f,%.6f\n", r.epoch,
                      r.accuracy, r.dice_coef, r.loss, r.lr, r.val_acc, r.val_dice_coef, r.val_loss);
        out << buf;
    }
}

size_t worker_count(bool deterministic) {
    if (deterministic) return 1;
    const char* env = std::getenv("MAPUNETR_THREADS");
    if (!env) return 1;
    long v = std::strtol(env, nullptr, 10);
    return v >= 1 ? static_cast<size_t>(v) : 1;
}

}  // namespace mapunetr
