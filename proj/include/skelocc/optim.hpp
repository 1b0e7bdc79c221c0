#pragma once

#include <vector>

#include "skelocc/tensor.hpp"

namespace skelocc {

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

/// Adam with bias correction. Moment state lives with the optimizer and
/// persists across step() calls; gradients are cleared after each step.
/// Parameters without a gradient this step are left untouched.
class Adam {
public:
    Adam(std::vector<Tensor> params, AdamConfig cfg = {});

    void step();
    void zero_grad();
    void set_lr(float lr) { cfg_.lr = lr; }
    void set_config(const AdamConfig& cfg) { cfg_ = cfg; }
    const AdamConfig& config() const { return cfg_; }
    float lr() const { return cfg_.lr; }
    const std::vector<Tensor>& params() const { return params_; }

private:
    struct State {
        std::vector<float> m, v;
        long t = 0;
    };
    std::vector<Tensor> params_;
    std::vector<State> state_;
    AdamConfig cfg_;
};

/// Free-function form: one Adam update on `opt`'s parameters with the given
/// hyper-parameters.
void adam_step(Adam& opt, float lr, float beta1, float beta2, float eps);

}  // namespace skelocc
