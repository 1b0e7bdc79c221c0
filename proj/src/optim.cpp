#include "skelocc/optim.hpp"

#include <cmath>

namespace skelocc {

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg)
    : params_(std::move(params)), state_(params_.size()), cfg_(cfg) {}

void Adam::step() {
    for (size_t k = 0; k < params_.size(); ++k) {
        Tensor& p = params_[k];
        if (!p.has_grad()) continue;
        State& s = state_[k];
        const size_t n = static_cast<size_t>(p.numel());
        if (s.m.empty()) {
            s.m.assign(n, 0.0f);
            s.v.assign(n, 0.0f);
        }
        ++s.t;
        const float c1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(s.t));
        const float c2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(s.t));
        auto data = p.data();
        auto grad = p.grad();
        for (size_t i = 0; i < n; ++i) {
            const float g = grad[i];
            s.m[i] = cfg_.beta1 * s.m[i] + (1.0f - cfg_.beta1) * g;
            s.v[i] = cfg_.beta2 * s.v[i] + (1.0f - cfg_.beta2) * g * g;
            const float mh = s.m[i] / c1;
            const float vh = s.v[i] / c2;
            data[i] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
        }
        p.zero_grad();
    }
}

void Adam::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

void adam_step(Adam& opt, float lr, float beta1, float beta2, float eps) {
    opt.set_config({lr, beta1, beta2, eps});
    opt.step();
}

}  // namespace skelocc
