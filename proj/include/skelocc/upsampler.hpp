#pragma once

#include <random>

#include "skelocc/camera.hpp"
#include "skelocc/checkpoint.hpp"
#include "skelocc/image.hpp"
#include "skelocc/nn.hpp"

namespace skelocc {

struct UpsamplerConfig {
    int features = 8;  // d extra channels next to RGB
    int width = 32;
    int blocks = 3;
    uint64_t seed = 3;
};

/// ×2 refinement: residual conv blocks over RGB ⊕ features, nearest ×2,
/// two convolutions to RGB, added to the bilinear ×2 of the RGB input and
/// clamped to [0,1]. The last convolution starts at zero, so an untrained
/// model reproduces bilinear upsampling.
class Upsampler {
public:
    explicit Upsampler(const UpsamplerConfig& cfg = {});

    const UpsamplerConfig& config() const { return cfg_; }
    /// rgb 3×H×W, features d×H×W (channel-major) → 3×2H×2W.
    Tensor forward(const Tensor& rgb, const Tensor& features) const;

    NamedTensors parameters() const;  // "up.*"
    void load(const std::map<std::string, Tensor>& source);

private:
    UpsamplerConfig cfg_;
    Conv3x3 head_;
    std::vector<Conv3x3> body_;  // 2 per block
    Conv3x3 refine_, out_;
};

/// Interleaved H×W×C image → channel-major C×H×W tensor and back.
Tensor image_to_chw(const Image& img);
Image chw_to_image(const Tensor& t);

/// Maps a crop rendered under affine T (full → crop pixels) back into a
/// full_w×full_h frame by bilinear resampling; outside pixels get `background`.
/// Throws std::invalid_argument for singular T.
Image restore_full(const Image& crop, const Mat3& T, int full_w, int full_h, float background = 0.0f);

}  // namespace skelocc
