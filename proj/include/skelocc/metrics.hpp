#pragma once

#include "skelocc/image.hpp"

namespace skelocc {

inline constexpr double kPsnrCap = 99.0;

/// 10·log10(1/MSE) over all channels; kPsnrCap when MSE < 1e-10.
/// Throws std::invalid_argument on shape mismatch.
double psnr(const Image& a, const Image& b);

/// Mean SSIM over all window×window patches (stride 1, uniform weights) of
/// the luminance images. Throws when either side is smaller than the window.
double ssim(const Image& a, const Image& b, int window = 8, double k1 = 0.01, double k2 = 0.03, double L = 1.0);

}  // namespace skelocc
