#include "skelocc/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace skelocc {

namespace {

std::string dims(const Image& i) {
    return std::to_string(i.width) + "x" + std::to_string(i.height) + "x" + std::to_string(i.channels);
}

}  // namespace

double psnr(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("psnr: shape mismatch " + dims(a) + " vs " + dims(b));
    if (a.data.empty()) throw std::invalid_argument("psnr: empty images");
    double se = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - b.data[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.data.size());
    return mse < 1e-10 ? kPsnrCap : 10.0 * std::log10(1.0 / mse);
}

double ssim(const Image& a, const Image& b, int window, double k1, double k2, double L) {
    if (a.width != b.width || a.height != b.height || a.channels != b.channels)
        throw std::invalid_argument("ssim: shape mismatch " + dims(a) + " vs " + dims(b));
    if (window < 1 || a.width < window || a.height < window)
        throw std::invalid_argument("ssim: image " + dims(a) + " is smaller than the " + std::to_string(window) +
                                    "-pixel window");
    const Image ga = to_gray(a), gb = to_gray(b);
    const int W = a.width, H = a.height;
    const double c1 = (k1 * L) * (k1 * L), c2 = (k2 * L) * (k2 * L);
    const double n = static_cast<double>(window) * window;
    double total = 0.0;
    int64_t count = 0;
    for (int y = 0; y + window <= H; ++y)
        for (int x = 0; x + window <= W; ++x) {
            double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            for (int dy = 0; dy < window; ++dy)
                for (int dx = 0; dx < window; ++dx) {
                    const double va = ga.at(x + dx, y + dy, 0), vb = gb.at(x + dx, y + dy, 0);
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            const double ma = sa / n, mb = sb / n;
            const double va = saa / n - ma * ma, vb = sbb / n - mb * mb, cov = sab / n - ma * mb;
            total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++count;
        }
    return total / static_cast<double>(count);
}

}  // namespace skelocc
