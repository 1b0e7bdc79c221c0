#pragma once

// Finite-difference gradient oracle. Every case pairs the float32 autodiff
// op with an independent double-precision reference forward written here;
// the reference is differenced centrally (step 1e-3) and compared against
// the reverse-mode gradient of a random linear projection of the output.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "skelocc/tensor.hpp"

namespace gradcheck {

using skelocc::Shape;
using skelocc::Tensor;

struct Arg {
    Shape shape;
    std::vector<double> v;
    bool differentiable = true;
};

using RefFn = std::function<std::vector<double>(const std::vector<Arg>&)>;
using OpFn = std::function<Tensor(const std::vector<Tensor>&)>;
using MakeFn = std::function<std::vector<Arg>(std::mt19937&)>;

struct Case {
    std::string name;
    MakeFn make;
    OpFn op;
    RefFn ref;
};

inline Arg random_arg(Shape shape, std::mt19937& rng, double lo = -2.0, double hi = 2.0,
                      double avoid = 0.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    Arg a{std::move(shape), {}, true};
    const int64_t n = skelocc::numel_of(a.shape);
    for (int64_t i = 0; i < n; ++i) {
        double x = d(rng);
        // keep samples off kinks (relu/abs/clamp) so central differences are valid
        while (avoid > 0.0 && std::fabs(x) < avoid) x = d(rng);
        a.v.push_back(x);
    }
    return a;
}

inline Tensor to_tensor(const Arg& a) {
    std::vector<float> f(a.v.begin(), a.v.end());
    return Tensor::from(a.shape, std::move(f), a.differentiable);
}

struct Result {
    double rel_error = 0.0;  // ‖g − fd‖₂ / ‖fd‖₂ over all differentiable inputs
    double fd_norm = 0.0;
    double forward_error = 0.0;  // max |float forward − double reference|
};

/// Runs one randomized check. The projection weights r are drawn from the
/// same generator, so the result is a pure function of the seed.
inline Result run(const Case& c, uint32_t seed, double step = 1e-3) {
    std::mt19937 rng(seed);
    std::vector<Arg> args = c.make(rng);
    const std::vector<double> y0 = c.ref(args);
    std::uniform_real_distribution<double> rd(-1.0, 1.0);
    std::vector<double> r(y0.size());
    for (double& x : r) x = rd(rng);

    auto projected = [&](const std::vector<Arg>& a) {
        const std::vector<double> y = c.ref(a);
        double s = 0.0;
        for (size_t i = 0; i < y.size(); ++i) s += r[i] * y[i];
        return s;
    };

    std::vector<Tensor> ins;
    for (const Arg& a : args) ins.push_back(to_tensor(a));
    Tensor y = c.op(ins);
    Result res;
    for (size_t i = 0; i < y0.size(); ++i)
        res.forward_error = std::max(res.forward_error, std::fabs(static_cast<double>(y.data()[i]) - y0[i]));
    std::vector<float> rf(r.begin(), r.end());
    Tensor loss = skelocc::sum(skelocc::mul(y, Tensor::from(y.shape(), rf)));
    skelocc::backward(loss);

    double num = 0.0, den = 0.0;
    for (size_t k = 0; k < args.size(); ++k) {
        if (!args[k].differentiable) continue;
        for (size_t i = 0; i < args[k].v.size(); ++i) {
            std::vector<Arg> plus = args, minus = args;
            plus[k].v[i] += step;
            minus[k].v[i] -= step;
            const double fd = (projected(plus) - projected(minus)) / (2.0 * step);
            const double g = ins[k].has_grad() ? static_cast<double>(ins[k].grad()[i]) : 0.0;
            num += (g - fd) * (g - fd);
            den += fd * fd;
        }
    }
    res.fd_norm = std::sqrt(den);
    res.rel_error = den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
    return res;
}

// ---- double-precision reference forwards ------------------------------------

inline std::vector<double> ref_unary(const Arg& a, const std::function<double(double)>& f) {
    std::vector<double> y(a.v.size());
    for (size_t i = 0; i < y.size(); ++i) y[i] = f(a.v[i]);
    return y;
}

inline std::vector<double> ref_binary(const Arg& a, const Arg& b,
                                      const std::function<double(double, double)>& f) {
    const size_t n = std::max(a.v.size(), b.v.size());
    std::vector<double> y(n);
    for (size_t i = 0; i < n; ++i)
        y[i] = f(a.v.size() == 1 ? a.v[0] : a.v[i], b.v.size() == 1 ? b.v[0] : b.v[i]);
    return y;
}

inline std::vector<double> ref_matmul(const Arg& a, const Arg& b) {
    const int64_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    std::vector<double> y(static_cast<size_t>(m * n), 0.0);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (int64_t t = 0; t < k; ++t) s += a.v[i * k + t] * b.v[t * n + j];
            y[i * n + j] = s;
        }
    return y;
}

inline std::vector<double> ref_conv2d(const Arg& in, const Arg& ker, const Arg* bias) {
    const int64_t C = in.shape[0], H = in.shape[1], W = in.shape[2], O = ker.shape[0];
    std::vector<double> y(static_cast<size_t>(O * H * W), 0.0);
    for (int64_t o = 0; o < O; ++o)
        for (int64_t yy = 0; yy < H; ++yy)
            for (int64_t xx = 0; xx < W; ++xx) {
                double s = bias ? bias->v[o] : 0.0;
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t dy = -1; dy <= 1; ++dy)
                        for (int64_t dx = -1; dx <= 1; ++dx) {
                            const int64_t sy = yy + dy, sx = xx + dx;
                            if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                            s += ker.v[((o * C + c) * 3 + (dy + 1)) * 3 + (dx + 1)] * in.v[(c * H + sy) * W + sx];
                        }
                y[(o * H + yy) * W + xx] = s;
            }
    return y;
}

inline std::vector<double> ref_bilinear2x(const Arg& in) {
    const int64_t C = in.shape[0], H = in.shape[1], W = in.shape[2];
    auto coord = [](int64_t o, int64_t n) {
        double s = (o + 0.5) / 2.0 - 0.5;
        return std::clamp(s, 0.0, static_cast<double>(n - 1));
    };
    std::vector<double> y(static_cast<size_t>(C * 4 * H * W));
    for (int64_t c = 0; c < C; ++c)
        for (int64_t oy = 0; oy < 2 * H; ++oy)
            for (int64_t ox = 0; ox < 2 * W; ++ox) {
                const double sy = coord(oy, H), sx = coord(ox, W);
                const int64_t y0 = static_cast<int64_t>(std::floor(sy)), x0 = static_cast<int64_t>(std::floor(sx));
                const int64_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
                const double fy = sy - y0, fx = sx - x0;
                auto p = [&](int64_t yy, int64_t xx) { return in.v[(c * H + yy) * W + xx]; };
                y[(c * 2 * H + oy) * 2 * W + ox] = (1 - fy) * ((1 - fx) * p(y0, x0) + fx * p(y0, x1)) +
                                                   fy * ((1 - fx) * p(y1, x0) + fx * p(y1, x1));
            }
    return y;
}

/// Emission–absorption quadrature written directly from the transmittance
/// definition T_i = exp(−Σ_{j<i} σ_j δ_j), in double precision.
inline std::vector<double> ref_composite(const Arg& sigma, const Arg& values, const std::vector<double>& deltas,
                                         int64_t C, const std::vector<double>& bg) {
    const int64_t R = sigma.shape[0], S = sigma.shape[1];
    std::vector<double> y(static_cast<size_t>(R * (C + 1)), 0.0);
    for (int64_t r = 0; r < R; ++r) {
        double optical = 0.0;
        for (int64_t i = 0; i < S; ++i) {
            const double T = std::exp(-optical);
            const double a = 1.0 - std::exp(-sigma.v[r * S + i] * deltas[r * S + i]);
            for (int64_t c = 0; c < C; ++c) y[r * (C + 1) + c] += T * a * values.v[(r * S + i) * C + c];
            y[r * (C + 1) + C] += T * a;
            optical += sigma.v[r * S + i] * deltas[r * S + i];
        }
        for (int64_t c = 0; c < C; ++c) y[r * (C + 1) + c] += std::exp(-optical) * bg[c];
    }
    return y;
}

/// The full op table used by both the unit tests and the acceptance suite.
std::vector<Case> all_cases();

/// Random R×S rays through composite() against the transmittance-definition
/// reference.
Case composite_case(int64_t samples);

}  // namespace gradcheck
