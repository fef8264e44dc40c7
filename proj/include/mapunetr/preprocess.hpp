#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mapunetr/rng.hpp"
#include "mapunetr/tensor.hpp"

namespace mapunetr {

// H x W x C float image, row-major, values nominally in [0,1].
struct Image {
    size_t h = 0, w = 0, c = 0;
    std::vector<float> data;

    Image() = default;
    Image(size_t h_, size_t w_, size_t c_, float fill = 0.f)
        : h(h_), w(w_), c(c_), data(h_ * w_ * c_, fill) {}

    float& at(size_t y, size_t x, size_t ch) { return data[(y * w + x) * c + ch]; }
    float at(size_t y, size_t x, size_t ch) const { return data[(y * w + x) * c + ch]; }
};

// H x W integer class mask.
struct Mask {
    size_t h = 0, w = 0;
    std::vector<uint8_t> data;

    Mask() = default;
    Mask(size_t h_, size_t w_, uint8_t fill = 0) : h(h_), w(w_), data(h_ * w_, fill) {}

    uint8_t& at(size_t y, size_t x) { return data[y * w + x]; }
    uint8_t at(size_t y, size_t x) const { return data[y * w + x]; }
};

// Paired image and label mask; every spatial transform applies to both.
struct Sample {
    Image image;
    Mask mask;
    std::string id;
};

struct NormStats {
    std::vector<float> mean;
    std::vector<float> stddev;
    float eps = 1e-7f;
};

enum class TransformKind { kCenterCrop, kRandomRot90, kGridDistortion, kFlipH, kFlipV };

struct TransformSpec {
    TransformKind kind;
    double probability = 1.0;
};

struct AugmentConfig {
    std::vector<TransformSpec> transforms;
    size_t crop_h = 0, crop_w = 0;  // used by kCenterCrop
    int distortion_cells = 4;
    double distortion_magnitude = 0.3;

    void validate() const;
};

// Bilinear image / nearest mask resize to R x R.
Sample resize_sample(const Sample& s, size_t r);

// Centered window of extent h x w; offsets floor((H-h)/2), floor((W-w)/2).
Sample crop_center(const Sample& s, size_t h, size_t w);

// k counter-clockwise quarter turns, k in {0,1,2,3}.
Sample rot90(const Sample& s, int k);

enum class FlipAxis { kHorizontal, kVertical };
Sample flip(const Sample& s, FlipAxis axis);

// Divides each axis into n cells, scales every cell step by an independent
// uniform factor in [1-d, 1+d], renormalizes the cumulative grid to the full
// extent and remaps pixels (bilinear image, nearest mask).
Sample grid_distortion(const Sample& s, int n, double d, uint64_t seed);

Image normalize_zscore(const Image& img, const NormStats& stats);
Image normalize_minmax(const Image& img);

// Applies cfg.transforms in order, each fired independently with its
// probability; pure function of (sample, cfg, rng state).
Sample augment(const Sample& s, const AugmentConfig& cfg, Rng& rng);

}  // namespace mapunetr
