#include "mapunetr/metrics.hpp"

namespace mapunetr {

ConfusionCounts confusion(const Mask& pred, const Mask& target, uint8_t positive_class) {
    if (pred.h != target.h || pred.w != target.w)
        throw ShapeError("confusion: mask extents differ, " + std::to_string(pred.h) + "x" +
                         std::to_string(pred.w) + " vs " + std::to_string(target.h) + "x" +
                         std::to_string(target.w));
    ConfusionCounts c;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        bool p = pred.data[i] == positive_class;
        bool g = target.data[i] == positive_class;
        if (p && g)
            ++c.tp;
        else if (p && !g)
            ++c.fp;
        else if (!p && g)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

MetricsReport metrics_from_confusion(const ConfusionCounts& c) {
    MetricsReport r;
    auto ratio = [](uint64_t num, uint64_t den, uint64_t misses) {
        if (den == 0) return misses == 0 ? 1.0 : 0.0;
        return static_cast<double>(num) / static_cast<double>(den);
    };
    r.dsc = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, c.fp + c.fn);
    r.iou = ratio(c.tp, c.tp + c.fp + c.fn, c.fp + c.fn);
    r.precision = ratio(c.tp, c.tp + c.fp, c.fn);
    r.recall = ratio(c.tp, c.tp + c.fn, c.fp);
    r.accuracy = c.total() > 0
                     ? static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total())
                     : 1.0;
    return r;
}

double dsc_union_denominator(const ConfusionCounts& c) {
    uint64_t uni = c.tp + c.fp + c.fn;
    if (uni == 0) return 1.0;
    return 2.0 * static_cast<double>(c.tp) / static_cast<double>(uni);
}

double pixel_accuracy(const Mask& pred, const Mask& target) {
    if (pred.h != target.h || pred.w != target.w)
        throw ShapeError("pixel_accuracy: mask extents differ");
    if (pred.data.empty()) return 1.0;
    size_t hits = 0;
    for (size_t i = 0; i < pred.data.size(); ++i)
        if (pred.data[i] == target.data[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(pred.data.size());
}

}  // namespace mapunetr
