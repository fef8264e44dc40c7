#pragma once

#include <string>
#include <vector>

#include "mapunetr/model.hpp"
#include "mapunetr/preprocess.hpp"

namespace mapunetr {

// Per-pixel saliency in [0,1] with the extents of the source image.
struct SaliencyMap {
    size_t h = 0, w = 0;
    std::vector<double> values;
    std::string source;  // e.g. "layer3/head_mean" or "rollout"
};

// Attention received per token: mean over heads of the column means of each
// head's N x N matrix. Non-negative; sums to 1.
std::vector<double> head_mean_map(const AttentionRecord& rec);

// Attention emitted per token (row means), exposed alongside the default.
std::vector<double> row_mean_map(const AttentionRecord& rec);

// Attention rollout: per layer take the head-mean matrix A, mix in the
// residual path as (A + I)/2, row-normalize, and left-multiply onto the
// running product; returns column means of the final matrix.
std::vector<double> rollout(const std::vector<AttentionRecord>& records);

// Token scores -> patch grid -> bilinear upsample to H x W -> min-max
// normalize (an all-constant map becomes all zeros).
SaliencyMap to_heatmap(const std::vector<double>& scores, size_t image_h, size_t image_w, size_t p);

// Continuous bilinear lookup into the token grid before normalization;
// used to state the monotonicity property at token centers.
double heatmap_sample_raw(const std::vector<double>& scores, size_t grid_rows, size_t grid_cols,
                          double y, double x);

// (1-alpha)*image + alpha*colorize(map). The color ramp is a monotone
// 3-stop blend: (0.05,0.03,0.15) -> (0.90,0.45,0.10) -> (1.00,1.00,0.85).
Image overlay(const SaliencyMap& map, const Image& image, double alpha);

// Grayscale rendering of the map, same extents.
Image saliency_to_gray(const SaliencyMap& map);

}  // namespace mapunetr
