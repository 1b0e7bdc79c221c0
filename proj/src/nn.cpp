#include "skelocc/nn.hpp"

#include <cmath>

namespace skelocc {

namespace {

Tensor uniform(Shape shape, float bound, std::mt19937& rng) {
    std::uniform_real_distribution<float> dist(-bound, bound);
    Tensor t = Tensor::zeros(std::move(shape), true);
    for (float& v : t.data()) v = dist(rng);
    return t;
}

}  // namespace

Linear::Linear(int64_t in, int64_t out, std::mt19937& rng, float gain)
    : w(uniform({in, out}, gain * std::sqrt(6.0f / static_cast<float>(in)), rng)),
      b(Tensor::zeros({out}, true)) {}

Linear Linear::zeros(int64_t in, int64_t out) {
    Linear l;
    l.w = Tensor::zeros({in, out}, true);
    l.b = Tensor::zeros({out}, true);
    return l;
}

void Linear::collect(NamedTensors& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
}

Conv3x3::Conv3x3(int64_t in, int64_t out, std::mt19937& rng, float gain)
    : k(uniform({out, in, 3, 3}, gain * std::sqrt(6.0f / static_cast<float>(in * 9)), rng)),
      b(Tensor::zeros({out}, true)) {}

Conv3x3 Conv3x3::zeros(int64_t in, int64_t out) {
    Conv3x3 c;
    c.k = Tensor::zeros({out, in, 3, 3}, true);
    c.b = Tensor::zeros({out}, true);
    return c;
}

void Conv3x3::collect(NamedTensors& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".k", k);
    out.emplace_back(prefix + ".b", b);
}

std::vector<Tensor> tensors_of(const NamedTensors& named) {
    std::vector<Tensor> out;
    out.reserve(named.size());
    for (const auto& [_, t] : named) out.push_back(t);
    return out;
}

}  // namespace skelocc
