#pragma once

#include <cstdint>
#include <vector>

#include "mapunetr/model.hpp"
#include "mapunetr/preprocess.hpp"
#include "mapunetr/tensor.hpp"

namespace mapunetr {

struct ConfusionCounts {
    uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
    uint64_t total() const { return tp + fp + tn + fn; }
};

struct MetricsReport {
    double dsc = 0, iou = 0, accuracy = 0, precision = 0, recall = 0;
};

// Exhaustive per-pixel counting against one positive class.
ConfusionCounts confusion(const Mask& pred, const Mask& target, uint8_t positive_class = 1);

// dsc = 2tp/(2tp+fp+fn), iou = tp/(tp+fp+fn), accuracy = (tp+tn)/total,
// precision = tp/(tp+fp), recall = tp/(tp+fn). Degenerate denominators:
// a metric with no positives on either side scores 1, a metric whose
// positives are all wrong scores 0.
MetricsReport metrics_from_confusion(const ConfusionCounts& c);

// 2|P∩G| / |P∪G| — the nonstandard overlap-over-union variant, exposed for
// comparison only; can exceed 1.
double dsc_union_denominator(const ConfusionCounts& c);

// Smoothed soft dice on the foreground channels of a K x H x W probability
// tensor, differentiable; averaged over foreground classes when K > 2.
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& probs, const Mask& target, T smooth = T(1)) {
    if (smooth <= T(0)) throw ConfigError("dice_loss: smooth must be > 0");
    if (probs.ndim() != 3) throw ShapeError("dice_loss: need [KxHxW], got " + shape_str(probs.shape()));
    const size_t k = probs.dim(0), h = probs.dim(1), w = probs.dim(2);
    if (target.h != h || target.w != w)
        throw ShapeError("dice_loss: target extents do not match probabilities");

    Tensor<T> acc = Tensor<T>::scalar(T(0));
    for (size_t c = 1; c < k; ++c) {
        std::vector<T> onehot(h * w, T(0));
        T g_sum = T(0);
        for (size_t i = 0; i < h * w; ++i)
            if (target.data[i] == c) {
                onehot[i] = T(1);
                g_sum += T(1);
            }
        Tensor<T> plane = channel_plane(probs, c);
        Tensor<T> gt = Tensor<T>::from({h * w}, std::move(onehot));
        Tensor<T> num = affine(sum_all(mul(plane, gt)), T(2), smooth);
        Tensor<T> den = affine(sum_all(plane), T(1), smooth + g_sum);
        acc = add(acc, affine(div(num, den), T(-1), T(1)));  // 1 - dice_c
    }
    return scale(acc, T(1) / static_cast<T>(k - 1));
}

// Flat view of channel c of a [K,H,W] tensor, differentiable.
template <typename T>
Tensor<T> channel_plane(const Tensor<T>& probs, size_t c) {
    const size_t hw = probs.dim(1) * probs.dim(2);
    std::vector<T> out(probs.data().begin() + c * hw, probs.data().begin() + (c + 1) * hw);
    auto pn = probs.node();
    return detail::op<T>({hw}, std::move(out), {probs}, [pn, c, hw](detail::Node<T>& self) {
        if (!pn->requires_grad) return;
        pn->ensure_grad();
        for (size_t i = 0; i < hw; ++i) pn->grad[c * hw + i] += self.grad[i];
    });
}

// Non-differentiable soft dice score (the training-log "dice_coef").
template <typename T>
double soft_dice(const Tensor<T>& probs, const Mask& target, double smooth = 1.0) {
    const size_t k = probs.dim(0), h = probs.dim(1), w = probs.dim(2);
    double acc = 0;
    for (size_t c = 1; c < k; ++c) {
        double inter = 0, p_sum = 0, g_sum = 0;
        for (size_t i = 0; i < h * w; ++i) {
            double p = static_cast<double>(probs.data()[c * h * w + i]);
            double g = target.data[i] == c ? 1.0 : 0.0;
            inter += p * g;
            p_sum += p;
            g_sum += g;
        }
        acc += (2.0 * inter + smooth) / (p_sum + g_sum + smooth);
    }
    return acc / static_cast<double>(k - 1);
}

double pixel_accuracy(const Mask& pred, const Mask& target);

// Macro mean of per-sample hard metrics (forward -> argmax -> confusion).
template <typename T>
MetricsReport evaluate(Model<T>& model, const std::vector<Sample>& samples,
                       uint8_t positive_class = 1) {
    if (samples.empty()) throw ContractError("evaluate: empty dataset");
    MetricsReport mean;
    for (const auto& s : samples) {
        auto fwd = model.forward(image_to_tensor<T>(s.image), BnMode::kInfer);
        Mask pred = predict_mask(fwd.probs);
        MetricsReport r = metrics_from_confusion(confusion(pred, s.mask, positive_class));
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
