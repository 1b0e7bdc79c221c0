#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace skelocc {

/// Interleaved float image (row-major, H×W×C), values nominally in [0,1].
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<float> data;

    Image() = default;
    Image(int w, int h, int c, float fill = 0.0f)
        : width(w), height(h), channels(c), data(static_cast<size_t>(w) * h * c, fill) {}

    float& at(int x, int y, int c) { return data[(static_cast<size_t>(y) * width + x) * channels + c]; }
    float at(int x, int y, int c) const { return data[(static_cast<size_t>(y) * width + x) * channels + c]; }
    bool empty() const { return data.empty(); }
    bool same_shape(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

/// Bilinear lookup at continuous pixel coordinates (pixel i spans [i, i+1),
/// centre at i+0.5). Returns nullopt when the point lies outside the frame.
std::optional<Eigen::Vector3f> sample_bilinear_rgb(const Image& img, double u, double v);
float sample_bilinear(const Image& img, double u, double v, int channel, float outside = 0.0f);

/// Warps `src` into a `width`×`height` frame: destination pixel centre q maps
/// to source location H·q (homogeneous). Pixels mapping outside get `fill`.
Image warp_affine(const Image& src, const Eigen::Matrix3d& dst_to_src, int width, int height,
                  float fill = 0.0f);

Image to_gray(const Image& rgb);

void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

/// Raw little-endian float32 row-major buffer (used for depth maps).
void write_f32(const std::filesystem::path& path, std::span<const float> values);
std::vector<float> read_f32(const std::filesystem::path& path);

}  // namespace skelocc
