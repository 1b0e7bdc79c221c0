#pragma once

#include <random>
#include <string>

#include "skelocc/checkpoint.hpp"
#include "skelocc/tensor.hpp"

namespace skelocc {

/// Fully connected layer y = x·W + b with W stored as in×out.
struct Linear {
    Tensor w, b;

    Linear() = default;
    /// He-uniform weights, zero bias. `gain` scales the weight bound.
    Linear(int64_t in, int64_t out, std::mt19937& rng, float gain = 1.0f);
    static Linear zeros(int64_t in, int64_t out);

    Tensor operator()(const Tensor& x) const { return linear(x, w, b); }
    void collect(NamedTensors& out, const std::string& prefix) const;
    int64_t in_features() const { return w.dim(0); }
    int64_t out_features() const { return w.dim(1); }
};

/// 3×3 same-padding convolution with bias.
struct Conv3x3 {
    Tensor k, b;

    Conv3x3() = default;
    Conv3x3(int64_t in, int64_t out, std::mt19937& rng, float gain = 1.0f);
    static Conv3x3 zeros(int64_t in, int64_t out);

    Tensor operator()(const Tensor& x) const { return conv2d(x, k, b); }
    void collect(NamedTensors& out, const std::string& prefix) const;
};

std::vector<Tensor> tensors_of(const NamedTensors& named);

}  // namespace skelocc
