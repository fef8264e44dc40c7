#pragma once

// Central finite-difference oracle for gradient tests. Independent of the
// autodiff path: it only re-runs the forward function with nudged inputs.

#include <cmath>
#include <functional>
#include <vector>

#include "mapunetr/rng.hpp"
#include "mapunetr/tensor.hpp"

namespace gradcheck {

struct Result {
    double max_rel_err = 0.0;
    size_t checked = 0;
    double worst_fd = 0.0;   // finite-difference estimate at the worst coordinate
    double worst_an = 0.0;   // analytic gradient at the worst coordinate
    size_t worst_coord = 0;
};

// Compares t.grad() (already populated by backward) against central
// differences of `loss_fn`, which must recompute the scalar loss from the
// current contents of t.data(). Checks up to `max_coords` coordinates,
// sampled deterministically. Differences below `atol` are treated as FD
// roundoff noise (central-difference resolution is about eps/h) and ignored.
template <typename T>
Result check_tensor(mapunetr::Tensor<T>& t, const std::function<double()>& loss_fn,
                    double h = 1e-5, size_t max_coords = 0, uint64_t seed = 123,
                    double atol = 1e-9) {
    Result res;
    std::vector<size_t> coords(t.numel());
    for (size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (max_coords > 0 && max_coords < coords.size()) {
        mapunetr::Rng rng(seed);
        rng.shuffle(coords);
        coords.resize(max_coords);
    }
    for (size_t i : coords) {
        T saved = t.data()[i];
        t.data()[i] = saved + static_cast<T>(h);
        double fp = loss_fn();
        t.data()[i] = saved - static_cast<T>(h);
        double fm = loss_fn();
        t.data()[i] = saved;
        double fd = (fp - fm) / (2.0 * h);
        double an = static_cast<double>(t.grad()[i]);
        double diff = std::abs(fd - an);
        double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
        double rel = diff <= atol ? 0.0 : diff / denom;
        if (rel > res.max_rel_err) {
            res.max_rel_err = rel;
            res.worst_fd = fd;
            res.worst_an = an;
            res.worst_coord = i;
        }
        ++res.checked;
    }
    return res;
}

}  // namespace gradcheck
