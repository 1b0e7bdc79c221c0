#include "skelocc/upsampler.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace skelocc {

Upsampler::Upsampler(const UpsamplerConfig& cfg) : cfg_(cfg) {
    std::mt19937 rng(static_cast<uint32_t>(cfg.seed));
    head_ = Conv3x3(3 + cfg.features, cfg.width, rng);
    for (int b = 0; b < cfg.blocks; ++b) {
        body_.emplace_back(cfg.width, cfg.width, rng);
        body_.emplace_back(cfg.width, cfg.width, rng, 0.1f);
    }
    refine_ = Conv3x3(cfg.width, cfg.width, rng);
    out_ = Conv3x3::zeros(cfg.width, 3);
}

Tensor Upsampler::forward(const Tensor& rgb, const Tensor& features) const {
    if (rgb.rank() != 3 || rgb.dim(0) != 3)
        throw std::invalid_argument("upsampler: rgb must be 3×H×W, got " + shape_str(rgb.shape()));
    if (features.rank() != 3 || features.dim(0) != cfg_.features || features.dim(1) != rgb.dim(1) ||
        features.dim(2) != rgb.dim(2))
        throw std::invalid_argument("upsampler: expected " + std::to_string(cfg_.features) + "×" +
                                    std::to_string(rgb.dim(1)) + "×" + std::to_string(rgb.dim(2)) +
                                    " features, got " + shape_str(features.shape()));
    const int64_t H = rgb.dim(1), W = rgb.dim(2), C = 3 + cfg_.features;
    const Tensor x = reshape(concat_cols({reshape(rgb, {1, 3 * H * W}), reshape(features, {1, cfg_.features * H * W})}),
                             {C, H, W});
    Tensor h = relu(head_(x));
    for (int b = 0; b < cfg_.blocks; ++b)
        h = add(h, body_[static_cast<size_t>(2 * b + 1)](relu(body_[static_cast<size_t>(2 * b)](h))));
    const Tensor up = upsample_nearest2x(h);
    const Tensor residual = out_(relu(refine_(up)));
    return clamp(add(upsample_bilinear2x(rgb), residual), 0.0f, 1.0f);
}

NamedTensors Upsampler::parameters() const {
    NamedTensors out;
    head_.collect(out, "up.head");
    for (size_t i = 0; i < body_.size(); ++i) body_[i].collect(out, "up.body" + std::to_string(i));
    refine_.collect(out, "up.refine");
    out_.collect(out, "up.out");
    return out;
}

void Upsampler::load(const std::map<std::string, Tensor>& source) { assign_from(parameters(), source); }

Tensor image_to_chw(const Image& img) {
    Tensor t = Tensor::zeros({img.channels, img.height, img.width});
    auto d = t.data();
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                d[(static_cast<size_t>(c) * img.height + y) * img.width + x] = img.at(x, y, c);
    return t;
}

Image chw_to_image(const Tensor& t) {
    if (t.rank() != 3) throw std::invalid_argument("chw_to_image: expected C×H×W, got " + shape_str(t.shape()));
    const int C = static_cast<int>(t.dim(0)), H = static_cast<int>(t.dim(1)), W = static_cast<int>(t.dim(2));
    Image img(W, H, C);
    const auto d = t.data();
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) img.at(x, y, c) = d[(static_cast<size_t>(c) * H + y) * W + x];
    return img;
}

Image restore_full(const Image& crop, const Mat3& T, int full_w, int full_h, float background) {
    if (!(std::fabs(T.determinant()) > 1e-12)) throw std::invalid_argument("restore_full: crop transform is singular");
    return warp_affine(crop, T, full_w, full_h, background);
}

}  // namespace skelocc
