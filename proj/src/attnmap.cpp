#include "mapunetr/attnmap.hpp"

#include <algorithm>
#include <cmath>

namespace mapunetr {

namespace {

// head-averaged N x N matrix
std::vector<double> head_mean_matrix(const AttentionRecord& rec) {
    const size_t n = rec.n;
    std::vector<double> m(n * n, 0.0);
    for (size_t h = 0; h < rec.heads; ++h)
        for (size_t e = 0; e < n * n; ++e) m[e] += rec.weights[h * n * n + e];
    for (double& v : m) v /= static_cast<double>(rec.heads);
    return m;
}

std::vector<double> column_means(const std::vector<double>& m, size_t n) {
    std::vector<double> out(n, 0.0);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) out[j] += m[i * n + j];
    for (double& v : out) v /= static_cast<double>(n);
    return out;
}

}  // namespace

std::vector<double> head_mean_map(const AttentionRecord& rec) {
    return column_means(head_mean_matrix(rec), rec.n);
}

std::vector<double> row_mean_map(const AttentionRecord& rec) {
    const size_t n = rec.n;
    std::vector<double> m = head_mean_matrix(rec);
    std::vector<double> out(n, 0.0);
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < n; ++j) out[i] += m[i * n + j];
        out[i] /= static_cast<double>(n);
    }
    return out;
}

std::vector<double> rollout(const std::vector<AttentionRecord>& records) {
    if (records.empty()) throw ContractError("rollout: no attention records");
    const size_t n = records.front().n;
    // running product, starts at identity
    std::vector<double> prod(n * n, 0.0);
    for (size_t i = 0; i < n; ++i) prod[i * n + i] = 1.0;

    for (const auto& rec : records) {
        if (rec.n != n) throw ShapeError("rollout: token count differs across layers");
        std::vector<double> a = head_mean_matrix(rec);
        // mix in the residual path and re-normalize rows
        for (size_t i = 0; i < n; ++i) {
            double row_sum = 0.0;
            for (size_t j = 0; j < n; ++j) {
                double v = 0.5 * (a[i * n + j] + (i == j ? 1.0 : 0.0));
                a[i * n + j] = v;
                row_sum += v;
            }
            for (size_t j = 0; j < n; ++j) a[i * n + j] /= row_sum;
        }
        std::vector<double> next(n * n, 0.0);
        for (size_t i = 0; i < n; ++i)
            for (size_t k = 0; k < n; ++k) {
                double av = a[i * n + k];
                for (size_t j = 0; j < n; ++j) next[i * n + j] += av * prod[k * n + j];
            }
        prod = std::move(next);
    }
    return column_means(prod, n);
}

double heatmap_sample_raw(const std::vector<double>& scores, size_t grid_rows, size_t grid_cols,
                          double y, double x) {
    double yc = std::clamp(y, 0.0, static_cast<double>(grid_rows - 1));
    double xc = std::clamp(x, 0.0, static_cast<double>(grid_cols - 1));
    size_t y0 = static_cast<size_t>(yc), x0 = static_cast<size_t>(xc);
    size_t y1 = std::min(y0 + 1, grid_rows - 1), x1 = std::min(x0 + 1, grid_cols - 1);
    double fy = yc - y0, fx = xc - x0;
    double v00 = scores[y0 * grid_cols + x0], v01 = scores[y0 * grid_cols + x1];
    double v10 = scores[y1 * grid_cols + x0], v11 = scores[y1 * grid_cols + x1];
    double top = v00 + (v01 - v00) * fx;
    double bot = v10 + (v11 - v10) * fx;
    return top + (bot - top) * fy;
}

SaliencyMap to_heatmap(const std::vector<double>& scores, size_t image_h, size_t image_w, size_t p) {
    if (p == 0 || image_h % p != 0 || image_w % p != 0)
        throw ShapeError("to_heatmap: patch size does not divide image extents");
    const size_t rows = image_h / p, cols = image_w / p;
    if (scores.size() != rows * cols)
        throw ShapeError("to_heatmap: got " + std::to_string(scores.size()) + " scores for a " +
                         std::to_string(rows) + "x" + std::to_string(cols) + " grid");

    SaliencyMap map;
    map.h = image_h;
    map.w = image_w;
    map.values.resize(image_h * image_w);
    double sy = static_cast<double>(rows) / image_h;
    double sx = static_cast<double>(cols) / image_w;
    for (size_t y = 0; y < image_h; ++y)
        for (size_t x = 0; x < image_w; ++x)
            map.values[y * image_w + x] =
                heatmap_sample_raw(scores, rows, cols, (y + 0.5) * sy - 0.5, (x + 0.5) * sx - 0.5);

    auto [lo_it, hi_it] = std::minmax_element(map.values.begin(), map.values.end());
    double lo = *lo_it, hi = *hi_it;
    if (hi == lo) {
        std::fill(map.values.begin(), map.values.end(), 0.0);
    } else {
        for (double& v : map.values) v = (v - lo) / (hi - lo);
    }
    return map;
}

namespace {

void ramp_color(double v, double rgb[3]) {
    static const double stops[3][3] = {
        {0.05, 0.03, 0.15}, {0.90, 0.45, 0.10}, {1.00, 1.00, 0.85}};
    v = std::clamp(v, 0.0, 1.0);
    double t = v * 2.0;
    int seg = t < 1.0 ? 0 : 1;
    double f = t - seg;
    for (int c = 0; c < 3; ++c) rgb[c] = stops[seg][c] + f * (stops[seg + 1][c] - stops[seg][c]);
}

}  // namespace

Image overlay(const SaliencyMap& map, const Image& image, double alpha) {
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("overlay: alpha must be in [0,1]");
    if (map.h != image.h || map.w != image.w)
        throw ShapeError("overlay: map extents do not match image");
    Image out(image.h, image.w, 3);
    double rgb[3];
    for (size_t y = 0; y < image.h; ++y)
        for (size_t x = 0; x < image.w; ++x) {
            ramp_color(map.values[y * map.w + x], rgb);
            for (size_t c = 0; c < 3; ++c) {
                // single-channel images broadcast to gray
                float base = image.at(y, x, image.c == 3 ? c : 0);
                out.at(y, x, c) =
                    static_cast<float>((1.0 - alpha) * base + alpha * rgb[c]);
            }
        }
    return out;
}

Image saliency_to_gray(const SaliencyMap& map) {
    Image out(map.h, map.w, 1);
    for (size_t i = 0; i < map.values.size(); ++i) out.data[i] = static_cast<float>(map.values[i]);
    return out;
}

}  // namespace mapunetr
