#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace skelocc {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t numel_of(const Shape& s);

struct TensorImpl {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until a gradient reaches this tensor
    bool requires_grad = false;

    float* grad_buffer();  // allocates zeros on first use
};

/// Dense row-major float32 array with optional participation in the
/// reverse-mode graph. Copies share storage (handle semantics).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
    static Tensor scalar(float v, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int64_t dim(size_t i) const { return impl_->shape.at(i); }
    size_t rank() const { return impl_->shape.size(); }
    int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

    std::span<float> data() { return impl_->data; }
    std::span<const float> data() const { return impl_->data; }
    std::span<const float> grad() const { return impl_->grad; }
    bool has_grad() const { return !impl_->grad.empty(); }
    void zero_grad() { impl_->grad.clear(); }
    float item() const;
    float at(int64_t i) const { return impl_->data.at(static_cast<size_t>(i)); }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }

    /// Copy of the values with no graph linkage; never receives gradient.
    Tensor detach() const;

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

/// One recorded operation. `backward` reads the output gradient and
/// accumulates into the inputs' gradients.
struct OpRecord {
    const char* name;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    std::function<void()> backward;
};

/// Define-by-run tape. Records are kept in creation order, which is a
/// topological order; backward() walks them in reverse. One tape per thread.
class Graph {
public:
    static Graph& current();

    void record(OpRecord op);
    /// Seeds d(loss)/d(loss) = 1 for a scalar loss and propagates to every
    /// leaf with requires_grad. The tape is cleared afterwards.
    void backward(const Tensor& loss);
    void clear();
    size_t size() const { return ops_.size(); }

    static bool grad_enabled();
    static void set_grad_enabled(bool on);

private:
    std::vector<OpRecord> ops_;
};

class NoGradGuard {
public:
    NoGradGuard() : prev_(Graph::grad_enabled()) { Graph::set_grad_enabled(false); }
    ~NoGradGuard() { Graph::set_grad_enabled(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

/// Flushes denormal floats to zero on the calling thread while alive.
class DenormalGuard {
public:
    DenormalGuard();
    ~DenormalGuard();
    DenormalGuard(const DenormalGuard&) = delete;
    DenormalGuard& operator=(const DenormalGuard&) = delete;

private:
    unsigned int prev_;
};

inline void backward(const Tensor& loss) { Graph::current().backward(loss); }

// ---- elementwise -----------------------------------------------------------
// Binary ops accept equal shapes, or either operand with a single element.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor pow(const Tensor& a, float exponent);
Tensor clamp(const Tensor& a, float lo, float hi);
Tensor scale(const Tensor& a, float factor);
Tensor add_scalar(const Tensor& a, float value);

/// Elementwise binary op by name: add, sub, mul, div. Unary names: neg, exp,
/// log, relu, sigmoid, tanh. Unknown names throw.
Tensor elementwise(const std::string& op, const Tensor& a, const Tensor* b = nullptr);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Weighted mean with constant per-element weights: sum(w*a)/sum(w).
Tensor weighted_mean(const Tensor& a, std::span<const float> weights);

// ---- linear algebra and layout --------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
/// x[N×I]·W[I×O] + b[O]. The bias is added per row.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
/// Adds a length-C vector to every row of x[N×C].
Tensor add_row(const Tensor& x, const Tensor& row);
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);  // 2-D only
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, int64_t begin, int64_t end);
/// out[i] = table[idx[i]]; gradients scatter-add back into the table.
Tensor gather_rows(const Tensor& table, std::span<const int32_t> idx);
/// out has n_rows rows filled with `fill`; row idx[i] receives src[i].
Tensor scatter_rows(const Tensor& src, std::span<const int32_t> idx, int64_t n_rows,
                    std::span<const float> fill);
/// Row-wise max over groups of `group` consecutive rows: [G·group × C] → [G × C].
Tensor max_pool_rows(const Tensor& a, int64_t group);

/// relu(x[i]·gamma[group[i]] + beta[group[i]]) row-wise; gamma and beta are G×C.
Tensor film_relu(const Tensor& x, const Tensor& gamma, const Tensor& beta, std::span<const int32_t> group);

// ---- image ops (single image, channel-major C×H×W) -------------------------

/// 3×3 convolution, stride 1, zero padding 1. kernel is O×C×3×3, bias O.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias);
Tensor conv2d(const Tensor& input, const Tensor& kernel);
Tensor upsample_nearest2x(const Tensor& input);
/// Half-pixel-centred bilinear ×2 upsampling with edge clamping.
Tensor upsample_bilinear2x(const Tensor& input);

// ---- volume rendering ------------------------------------------------------

/// Discrete emission-absorption quadrature over R rays of S samples.
/// sigma is R×S (non-negative), values is R×(S·C) laid out sample-major,
/// deltas R×S constant segment lengths, background C constant values.
/// Returns R×(C+1): composited channels followed by opacity Σ T_i α_i.
Tensor composite(const Tensor& sigma, const Tensor& values, std::span<const float> deltas,
                 int64_t channels, std::span<const float> background);

}  // namespace skelocc
