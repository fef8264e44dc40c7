#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mapunetr/metrics.hpp"
#include "mapunetr/rng.hpp"

using namespace mapunetr;

namespace {

Mask random_mask(size_t h, size_t w, Rng& rng) {
    Mask m(h, w);
    for (auto& v : m.data) v = static_cast<uint8_t>(rng.uniform_int(2));
    return m;
}

// brute-force oracle: recompute every metric from raw pixel loops
MetricsReport brute_force(const Mask& pred, const Mask& target) {
    uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        if (pred.data[i] == 1 && target.data[i] == 1) ++tp;
        if (pred.data[i] == 1 && target.data[i] != 1) ++fp;
        if (pred.data[i] != 1 && target.data[i] == 1) ++fn;
        if (pred.data[i] != 1 && target.data[i] != 1) ++tn;
    }
    MetricsReport r;
    r.dsc = (2 * tp + fp + fn) ? 2.0 * tp / (2.0 * tp + fp + fn) : 1.0;
    r.iou = (tp + fp + fn) ? 1.0 * tp / (tp + fp + fn) : 1.0;
    r.accuracy = 1.0 * (tp + tn) / (tp + fp + tn + fn);
    r.precision = (tp + fp) ? 1.0 * tp / (tp + fp) : (fn ? 0.0 : 1.0);
    r.recall = (tp + fn) ? 1.0 * tp / (tp + fn) : (fp ? 0.0 : 1.0);
    return r;
}

}  // namespace

TEST_CASE("confusion counting") {
    Mask pred(2, 2), target(2, 2);
    pred.data = {1, 1, 0, 0};
    target.data = {1, 0, 1, 0};
    auto c = confusion(pred, target);
    CHECK(c.tp == 1);
    CHECK(c.fp == 1);
    CHECK(c.fn == 1);
    CHECK(c.tn == 1);
    CHECK(c.total() == 4);

    auto self = confusion(target, target);
    CHECK(self.fp == 0);
    CHECK(self.fn == 0);

    Mask other(3, 3);
    CHECK_THROWS_AS(confusion(pred, other), ShapeError);
}

TEST_CASE("metrics_from_confusion") {
    ConfusionCounts c{3, 1, 4, 2};
    auto r = metrics_from_confusion(c);
    CHECK(r.accuracy == doctest::Approx(0.7));
    CHECK(r.precision == doctest::Approx(0.75));
    CHECK(r.recall == doctest::Approx(0.6));
    CHECK(r.dsc == doctest::Approx(6.0 / 9.0));
    CHECK(r.iou == doctest::Approx(0.5));

    // perfect prediction with at least one positive
    auto perfect = metrics_from_confusion(ConfusionCounts{5, 0, 11, 0});
    CHECK(perfect.dsc == 1.0);
    CHECK(perfect.iou == 1.0);
    CHECK(perfect.accuracy == 1.0);
    CHECK(perfect.precision == 1.0);
    CHECK(perfect.recall == 1.0);

    // both masks empty
    auto empty = metrics_from_confusion(ConfusionCounts{0, 0, 16, 0});
    CHECK(empty.dsc == 1.0);
    CHECK(empty.iou == 1.0);
    CHECK(empty.precision == 1.0);
    CHECK(empty.recall == 1.0);
    CHECK(empty.accuracy == 1.0);

    // union-denominator variant doubles the iou
    CHECK(dsc_union_denominator(c) == doctest::Approx(2.0 * r.iou));
}

TEST_CASE("metric oracle on random pairs") {
    Rng rng(99);
    for (int trial = 0; trial < 1000; ++trial) {
        Mask pred = random_mask(16, 16, rng);
        Mask target = random_mask(16, 16, rng);
        auto r = metrics_from_confusion(confusion(pred, target));
        auto o = brute_force(pred, target);
        CHECK(std::abs(r.dsc - o.dsc) <= 1e-12);
        CHECK(std::abs(r.iou - o.iou) <= 1e-12);
        CHECK(std::abs(r.accuracy - o.accuracy) <= 1e-12);
        CHECK(std::abs(r.precision - o.precision) <= 1e-12);
        CHECK(std::abs(r.recall - o.recall) <= 1e-12);
        // dice/jaccard identity for binary masks
        CHECK(std::abs(r.dsc - 2.0 * r.iou / (1.0 + r.iou)) <= 1e-12);
        CHECK(r.dsc >= r.iou);
        for (double v : {r.dsc, r.iou, r.accuracy, r.precision, r.recall}) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("dice_loss values") {
    // one-hot probs equal to target -> loss 0
    Mask target(2, 2);
    target.data = {0, 1, 1, 0};
    std::vector<double> onehot(2 * 2 * 2);
    for (size_t i = 0; i < 4; ++i) {
        onehot[0 * 4 + i] = target.data[i] == 0 ? 1.0 : 0.0;
        onehot[1 * 4 + i] = target.data[i] == 1 ? 1.0 : 0.0;
    }
    auto probs = Tensor<double>::from({2, 2, 2}, onehot);
    CHECK(dice_loss(probs, target).item() == doctest::Approx(0.0).epsilon(1e-12));

    // one-hot of the complement -> loss -> 1 as smooth -> 0
    Mask comp(2, 2);
    for (size_t i = 0; i < 4; ++i) comp.data[i] = 1 - target.data[i];
    double prev = 0.0;
    for (double smooth : {1.0, 1e-3, 1e-6, 1e-9}) {
        double l = dice_loss(probs, comp, smooth).item();
        CHECK(l >= prev);
        prev = l;
    }
    CHECK(prev == doctest::Approx(1.0).epsilon(1e-6));

    CHECK_THROWS_AS(dice_loss(probs, target, 0.0), ConfigError);
}

TEST_CASE("dice_loss matches direct-summation oracle") {
    // uniform 0.5 probs over a 16x16 mask with half foreground
    Mask half(16, 16);
    for (size_t i = 0; i < half.data.size() / 2; ++i) half.data[i] = 1;
    auto probs = Tensor<double>(Shape{2, 16, 16}, 0.5);
    double smooth = 1.0;
    // direct summation
    double inter = 0, p_sum = 0, g_sum = 0;
    for (size_t i = 0; i < 256; ++i) {
        inter += 0.5 * (half.data[i] == 1 ? 1.0 : 0.0);
        p_sum += 0.5;
        g_sum += half.data[i] == 1 ? 1.0 : 0.0;
    }
    double expected = 1.0 - (2 * inter + smooth) / (p_sum + g_sum + smooth);
    CHECK(std::abs(dice_loss(probs, half, smooth).item() - expected) <= 1e-12);
}

TEST_CASE("dice_loss decreases along the path toward one_hot") {
    Rng rng(7);
    Mask target(8, 8);
    for (auto& v : target.data) v = static_cast<uint8_t>(rng.uniform_int(2));
    // random normalized probs
    std::vector<double> p(2 * 64);
    for (size_t i = 0; i < 64; ++i) {
        double a = rng.uniform(0.1, 0.9);
        p[i] = a;
        p[64 + i] = 1.0 - a;
    }
    auto interp = [&](double t) {
        std::vector<double> q(2 * 64);
        for (size_t i = 0; i < 64; ++i) {
            double hot1 = target.data[i] == 1 ? 1.0 : 0.0;
            q[64 + i] = (1 - t) * p[64 + i] + t * hot1;
            q[i] = 1.0 - q[64 + i];
        }
        return dice_loss(Tensor<double>::from({2, 8, 8}, q), target).item();
    };
    double l0 = interp(0.0), l1 = interp(0.33), l2 = interp(0.66), l3 = interp(1.0);
    CHECK(l0 > l1);
    CHECK(l1 > l2);
    CHECK(l2 > l3);
}

TEST_CASE("dice_loss gradient vs finite differences") {
    Rng rng(11);
    Mask target(4, 4);
    for (auto& v : target.data) v = static_cast<uint8_t>(rng.uniform_int(2));
    std::vector<double> data(2 * 16);
    for (auto& v : data) v = rng.uniform(0.05, 0.95);
    auto probs = Tensor<double>::from({2, 4, 4}, data);
    probs.set_requires_grad(true);
    backward(dice_loss(probs, target));
    auto f =[&]() { return dice_loss(probs.detached(), target).item(); };
    // manual finite differences
    double max_err = 0;
    for (size_t i = 0; i < probs.numel(); ++i) {
        double saved = probs.data()[i];
        probs.data()[i] = saved + 1e-6;
        double fp = f();
        probs.data()[i] = saved - 1e-6;
        double fm = f();
        probs.data()[i] = saved;
        double fd = (fp - fm) / 2e-6;
        double denom = std::max({std::abs(fd), std::abs(probs.grad()[i]), 1e-8});
        max_err = std::max(max_err, std::abs(fd - probs.grad()[i]) / denom);
    }
    CHECK(max_err <= 1e-5);
}

TEST_CASE("soft_dice and pixel_accuracy") {
    Mask m(2, 2);
    m.data = {1, 1, 0, 0};
    std::vector<double> onehot = {0, 0, 1, 1, 1, 1, 0, 0};
    auto probs = Tensor<double>::from({2, 2, 2}, onehot);
    CHECK(soft_dice(probs, m, 0.0) == doctest::Approx(1.0));
    CHECK(pixel_accuracy(predict_mask(probs), m) == 1.0);
}
