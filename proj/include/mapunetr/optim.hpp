#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "mapunetr/tensor.hpp"

namespace mapunetr {

// Named model weight. Non-trainable parameters (batch-norm running stats)
// are serialized but never receive gradient updates.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> tensor;
    bool trainable = true;
};

struct ScheduleConfig {
    double lr0 = 0.01;
    double gamma = 0.1;
    int step_epochs = 20;
    double momentum = 0.0;
    int epochs = 70;
    int batch_size = 8;

    void validate() const {
        if (lr0 <= 0) throw ConfigError("schedule: lr0 must be > 0");
        if (gamma <= 0 || gamma > 1) throw ConfigError("schedule: gamma must be in (0, 1]");
        if (step_epochs < 1) throw ConfigError("schedule: step_epochs must be >= 1");
        if (momentum < 0 || momentum >= 1) throw ConfigError("schedule: momentum must be in [0, 1)");
        if (batch_size < 1) throw ConfigError("schedule: batch_size must be >= 1");
    }
};

// Step decay: lr0 * gamma^floor(epoch / step_epochs). Computed by repeated
// multiplication: left-to-right products match the decimal literals
// (0.01 * 0.1 * 0.1 == 1e-4 bitwise) where std::pow drifts by an ulp.
inline double lr_at(int epoch, const ScheduleConfig& s) {
    if (epoch < 0) throw ContractError("lr_at: epoch must be >= 0");
    double lr = s.lr0;
    for (int k = 0; k < epoch / s.step_epochs; ++k) lr *= s.gamma;
    return lr;
}

struct ParamCounts {
    size_t total = 0;
    size_t trainable = 0;
    size_t non_trainable = 0;
};

template <typename T>
ParamCounts count_params(const std::vector<Parameter<T>>& params) {
    ParamCounts c;
    for (const auto& p : params) {
        c.total += p.tensor.numel();
        (p.trainable ? c.trainable : c.non_trainable) += p.tensor.numel();
    }
    return c;
}

// SGD with optional momentum: v <- momentum*v + g; w <- w - lr*v.
// Velocity buffers are keyed by parameter name and persist across steps.
template <typename T>
class SgdOptimizer {
public:
    explicit SgdOptimizer(double momentum = 0.0) : momentum_(momentum) {
        if (momentum < 0 || momentum >= 1) throw ConfigError("sgd: momentum must be in [0, 1)");
    }

    void step(std::vector<Parameter<T>>& params, double lr) {
        for (auto& p : params) {
            if (!p.trainable) continue;
            if (p.tensor.grad().size() != p.tensor.numel())
                throw ContractError("sgd_step: missing gradient on trainable parameter '" + p.name + "'");
            auto& v = velocity_[p.name];
            if (v.size() != p.tensor.numel()) v.assign(p.tensor.numel(), T(0));
            auto& w = p.tensor.data();
            const auto& g = p.tensor.grad();
            for (size_t i = 0; i < w.size(); ++i) {
                v[i] = T(momentum_) * v[i] + g[i];
                w[i] -= T(lr) * v[i];
            }
        }
    }

    void zero_grad(std::vector<Parameter<T>>& params) {
        for (auto& p : params) p.tensor.zero_grad();
    }

private:
    double momentum_;
    std::unordered_map<std::string, std::vector<T>> velocity_;
};

}  // namespace mapunetr
