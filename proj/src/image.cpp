#include "skelocc/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace skelocc {

float sample_bilinear(const Image& img, double u, double v, int channel, float outside) {
    if (u < 0.0 || v < 0.0 || u > img.width || v > img.height) return outside;
    const double x = std::clamp(u - 0.5, 0.0, static_cast<double>(img.width - 1));
    const double y = std::clamp(v - 0.5, 0.0, static_cast<double>(img.height - 1));
    const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
    const int x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
    const float fx = static_cast<float>(x - x0), fy = static_cast<float>(y - y0);
    return (1 - fy) * ((1 - fx) * img.at(x0, y0, channel) + fx * img.at(x1, y0, channel)) +
           fy * ((1 - fx) * img.at(x0, y1, channel) + fx * img.at(x1, y1, channel));
}

std::optional<Eigen::Vector3f> sample_bilinear_rgb(const Image& img, double u, double v) {
    if (u < 0.0 || v < 0.0 || u > img.width || v > img.height) return std::nullopt;
    Eigen::Vector3f c;
    for (int k = 0; k < 3; ++k) c[k] = sample_bilinear(img, u, v, k);
    return c;
}

Image warp_affine(const Image& src, const Eigen::Matrix3d& dst_to_src, int width, int height, float fill) {
    Image out(width, height, src.channels, fill);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const Eigen::Vector3d q = dst_to_src * Eigen::Vector3d(x + 0.5, y + 0.5, 1.0);
            const double u = q.x() / q.z(), v = q.y() / q.z();
            if (u < 0.0 || v < 0.0 || u > src.width || v > src.height) continue;
            for (int c = 0; c < src.channels; ++c) out.at(x, y, c) = sample_bilinear(src, u, v, c, fill);
        }
    return out;
}

Image to_gray(const Image& rgb) {
    if (rgb.channels == 1) return rgb;
    Image g(rgb.width, rgb.height, 1);
    for (int y = 0; y < rgb.height; ++y)
        for (int x = 0; x < rgb.width; ++x)
            g.at(x, y, 0) = 0.299f * rgb.at(x, y, 0) + 0.587f * rgb.at(x, y, 1) + 0.114f * rgb.at(x, y, 2);
    return g;
}

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};

}  // namespace

void write_png(const std::filesystem::path& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3)
        throw std::invalid_argument("write_png: only 1 or 3 channels supported");
    std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng failed writing " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(static_cast<size_t>(img.width) * img.channels);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c)
                row[static_cast<size_t>(x) * img.channels + c] =
                    static_cast<png_byte>(std::lround(std::clamp(img.at(x, y, c), 0.0f, 1.0f) * 255.0f));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
    std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("cannot open " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("libpng failed reading " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_palette_to_rgb(png);
    png_set_strip_alpha(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int ch = static_cast<int>(png_get_channels(png, info));
    Image img(w, h, ch);
    std::vector<png_byte> row(png_get_rowbytes(png, info));
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c) img.at(x, y, c) = row[static_cast<size_t>(x) * ch + c] / 255.0f;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_f32(const std::filesystem::path& path, std::span<const float> values) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
}

std::vector<float> read_f32(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    const auto bytes = static_cast<size_t>(is.tellg());
    if (bytes % sizeof(float) != 0) throw std::runtime_error("not a float32 buffer: " + path.string());
    std::vector<float> v(bytes / sizeof(float));
    is.seekg(0);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(bytes));
    return v;
}

}  // namespace skelocc
