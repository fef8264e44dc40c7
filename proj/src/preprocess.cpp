#include "mapunetr/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace mapunetr {

namespace {

float sample_bilinear(const Image& img, double y, double x, size_t ch) {
    double yc = std::clamp(y, 0.0, static_cast<double>(img.h - 1));
    double xc = std::clamp(x, 0.0, static_cast<double>(img.w - 1));
    size_t y0 = static_cast<size_t>(yc);
    size_t x0 = static_cast<size_t>(xc);
    size_t y1 = std::min(y0 + 1, img.h - 1);
    size_t x1 = std::min(x0 + 1, img.w - 1);
    double fy = yc - static_cast<double>(y0);
    double fx = xc - static_cast<double>(x0);
    double v00 = img.at(y0, x0, ch), v01 = img.at(y0, x1, ch);
    double v10 = img.at(y1, x0, ch), v11 = img.at(y1, x1, ch);
    double top = v00 + (v01 - v00) * fx;
    double bot = v10 + (v11 - v10) * fx;
    return static_cast<float>(top + (bot - top) * fy);
}

size_t nearest_index(double v, size_t n) {
    long i = static_cast<long>(std::floor(v + 0.5));
    return static_cast<size_t>(std::clamp(i, 0L, static_cast<long>(n - 1)));
}

// Cumulative source coordinates for a distorted axis: n cells whose steps
// are scaled by factors in [1-d, 1+d], renormalized to span [0, extent-1].
std::vector<double> distorted_axis(size_t extent, int n, double d, Rng& rng) {
    std::vector<double> step(n);
    double total = 0;
    for (int i = 0; i < n; ++i) {
        step[i] = rng.uniform(1.0 - d, 1.0 + d);
        total += step[i];
    }
    // cumulative grid over [0,1], renormalized
    std::vector<double> knots(n + 1, 0.0);
    for (int i = 0; i < n; ++i) knots[i + 1] = knots[i] + step[i] / total;
    knots[n] = 1.0;

    // map each destination coordinate through the piecewise-linear grid
    std::vector<double> src(extent);
    double span = static_cast<double>(extent - 1);
    for (size_t p = 0; p < extent; ++p) {
        double u = span > 0 ? static_cast<double>(p) / span : 0.0;  // in [0,1]
        int cell = std::min(static_cast<int>(u * n), n - 1);
        double lo = static_cast<double>(cell) / n, hi = static_cast<double>(cell + 1) / n;
        double f = (u - lo) / (hi - lo);
        double v = knots[cell] + f * (knots[cell + 1] - knots[cell]);
        src[p] = v * span;
    }
    return src;
}

}  // namespace

void AugmentConfig::validate() const {
    for (const auto& t : transforms)
        if (t.probability < 0.0 || t.probability > 1.0)
            throw ConfigError("augment: transform probability must be in [0,1]");
    if (distortion_cells < 1) throw ConfigError("augment: distortion_cells must be >= 1");
    if (distortion_magnitude < 0.0 || distortion_magnitude >= 1.0)
        throw ConfigError("augment: distortion_magnitude must be in [0,1)");
}

Sample resize_sample(const Sample& s, size_t r) {
    if (r < 1) throw ConfigError("resize_sample: target extent must be >= 1");
    if (s.image.h == r && s.image.w == r) return s;
    Sample out;
    out.id = s.id;
    out.image = Image(r, r, s.image.c);
    out.mask = Mask(r, r);
    double sy = static_cast<double>(s.image.h) / r;
    double sx = static_cast<double>(s.image.w) / r;
    for (size_t y = 0; y < r; ++y)
        for (size_t x = 0; x < r; ++x) {
            double src_y = (y + 0.5) * sy - 0.5;
            double src_x = (x + 0.5) * sx - 0.5;
            for (size_t ch = 0; ch < s.image.c; ++ch)
                out.image.at(y, x, ch) = sample_bilinear(s.image, src_y, src_x, ch);
            out.mask.at(y, x) = s.mask.at(nearest_index(src_y, s.mask.h), nearest_index(src_x, s.mask.w));
        }
    return out;
}

Sample crop_center(const Sample& s, size_t h, size_t w) {
    if (h > s.image.h || w > s.image.w)
        throw ShapeError("crop_center: target " + std::to_string(h) + "x" + std::to_string(w) +
                         " exceeds source " + std::to_string(s.image.h) + "x" + std::to_string(s.image.w));
    size_t oy = (s.image.h - h) / 2;
    size_t ox = (s.image.w - w) / 2;
    Sample out;
    out.id = s.id;
    out.image = Image(h, w, s.image.c);
    out.mask = Mask(h, w);
    for (size_t y = 0; y < h; ++y)
        for (size_t x = 0; x < w; ++x) {
            for (size_t ch = 0; ch < s.image.c; ++ch)
                out.image.at(y, x, ch) = s.image.at(oy + y, ox + x, ch);
            out.mask.at(y, x) = s.mask.at(oy + y, ox + x);
        }
    return out;
}

Sample rot90(const Sample& s, int k) {
    k = ((k % 4) + 4) % 4;
    if (k == 0) return s;
    Sample cur = s;
    for (int t = 0; t < k; ++t) {
        // one CCW quarter turn: out[i][j] = in[j][C-1-i]
        size_t rows = cur.image.h, cols = cur.image.w;
        Sample next;
        next.id = cur.id;
        next.image = Image(cols, rows, cur.image.c);
        next.mask = Mask(cols, rows);
        for (size_t i = 0; i < cols; ++i)
            for (size_t j = 0; j < rows; ++j) {
                for (size_t ch = 0; ch < cur.image.c; ++ch)
                    next.image.at(i, j, ch) = cur.image.at(j, cols - 1 - i, ch);
                next.mask.at(i, j) = cur.mask.at(j, cols - 1 - i);
            }
        cur = std::move(next);
    }
    return cur;
}

Sample flip(const Sample& s, FlipAxis axis) {
    Sample out = s;
    size_t h = s.image.h, w = s.image.w;
    for (size_t y = 0; y < h; ++y)
        for (size_t x = 0; x < w; ++x) {
            size_t sy = axis == FlipAxis::kVertical ? h - 1 - y : y;
            size_t sx = axis == FlipAxis::kHorizontal ? w - 1 - x : x;
            for (size_t ch = 0; ch < s.image.c; ++ch) out.image.at(y, x, ch) = s.image.at(sy, sx, ch);
            out.mask.at(y, x) = s.mask.at(sy, sx);
        }
    return out;
}

Sample grid_distortion(const Sample& s, int n, double d, uint64_t seed) {
    if (n < 1) throw ConfigError("grid_distortion: n must be >= 1");
    if (d < 0.0 || d >= 1.0) throw ConfigError("grid_distortion: d must be in [0,1)");
    if (d == 0.0) return s;
    Rng rng(seed);
    std::vector<double> src_y = distorted_axis(s.image.h, n, d, rng);
    std::vector<double> src_x = distorted_axis(s.image.w, n, d, rng);
    Sample out;
    out.id = s.id;
    out.image = Image(s.image.h, s.image.w, s.image.c);
    out.mask = Mask(s.mask.h, s.mask.w);
    for (size_t y = 0; y < s.image.h; ++y)
        for (size_t x = 0; x < s.image.w; ++x) {
            for (size_t ch = 0; ch < s.image.c; ++ch)
                out.image.at(y, x, ch) = sample_bilinear(s.image, src_y[y], src_x[x], ch);
            out.mask.at(y, x) =
                s.mask.at(nearest_index(src_y[y], s.mask.h), nearest_index(src_x[x], s.mask.w));
        }
    return out;
}

Image normalize_zscore(const Image& img, const NormStats& stats) {
    if (stats.mean.size() != img.c || stats.stddev.size() != img.c)
        throw ShapeError("normalize_zscore: stats channels do not match image channels");
    if (stats.eps <= 0) throw ConfigError("normalize_zscore: eps must be > 0");
    Image out = img;
    for (size_t i = 0; i < out.data.size(); ++i) {
        size_t ch = i % img.c;
        out.data[i] = (img.data[i] - stats.mean[ch]) / std::max(stats.stddev[ch], stats.eps);
    }
    return out;
}

Image normalize_minmax(const Image& img) {
    if (img.data.empty()) return img;
    float lo = img.data[0], hi = img.data[0];
    for (float v : img.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    Image out = img;
    if (hi == lo) {
        std::fill(out.data.begin(), out.data.end(), 0.f);
        return out;
    }
    float range = hi - lo;
    for (float& v : out.data) v = (v - lo) / range;
    return out;
}

Sample augment(const Sample& s, const AugmentConfig& cfg, Rng& rng) {
    cfg.validate();
    Sample cur = s;
    for (const auto& t : cfg.transforms) {
        double u = rng.uniform();
        if (u >= t.probability) continue;
        switch (t.kind) {
            case TransformKind::kCenterCrop:
                cur = crop_center(cur, cfg.crop_h ? cfg.crop_h : cur.image.h,
                                  cfg.crop_w ? cfg.crop_w : cur.image.w);
                break;
            case TransformKind::kRandomRot90:
                cur = rot90(cur, static_cast<int>(rng.uniform_int(4)));
                break;
            case TransformKind::kGridDistortion:
                cur = grid_distortion(cur, cfg.distortion_cells, cfg.distortion_magnitude,
                                      rng.next_u64());
                break;
            case TransformKind::kFlipH:
                cur = flip(cur, FlipAxis::kHorizontal);
                break;
            case TransformKind::kFlipV:
                cur = flip(cur, FlipAxis::kVertical);
                break;
        }
    }
    return cur;
}

}  // namespace mapunetr
