#include "skelocc/tensor.hpp"

#include <cblas.h>
#include <malloc.h>
#include <xmmintrin.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace skelocc {

namespace {

// Keep large activations on the heap so repeated steps reuse warm pages.
const bool g_heap_tuned = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
}();

thread_local Graph t_graph;
thread_local bool t_grad_enabled = true;

using ImplPtr = std::shared_ptr<TensorImpl>;

ImplPtr make_impl(Shape shape) {
    auto impl = std::make_shared<TensorImpl>();
    impl->data.assign(static_cast<size_t>(numel_of(shape)), 0.0f);
    impl->shape = std::move(shape);
    return impl;
}

bool tracking(std::initializer_list<const Tensor*> inputs) {
    if (!t_grad_enabled) return false;
    for (const Tensor* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

void record(const char* name, std::vector<ImplPtr> inputs, const ImplPtr& out,
            std::function<void()> fn) {
    out->requires_grad = true;
    t_graph.record(OpRecord{name, std::move(inputs), out, std::move(fn)});
}

void require(bool cond, const std::string& what) {
    if (!cond) throw std::invalid_argument(what);
}

// ---- elementwise helpers ---------------------------------------------------

struct BinaryShape {
    Shape out;
    bool a_scalar = false;
    bool b_scalar = false;
};

BinaryShape binary_shape(const char* op, const Tensor& a, const Tensor& b) {
    BinaryShape r;
    if (a.shape() == b.shape()) {
        r.out = a.shape();
    } else if (b.numel() == 1) {
        r.out = a.shape();
        r.b_scalar = true;
    } else if (a.numel() == 1) {
        r.out = b.shape();
        r.a_scalar = true;
    } else {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    }
    return r;
}

// fwd(x, y) -> z ; dx(x, y, z) and dy(x, y, z) are local partials.
template <class Fwd, class Dx, class Dy>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Dx dx, Dy dy) {
    BinaryShape bs = binary_shape(name, a, b);
    auto out = make_impl(bs.out);
    const size_t n = out->data.size();
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    float* po = out->data.data();
    const size_t sa = bs.a_scalar ? 0 : 1;
    const size_t sb = bs.b_scalar ? 0 : 1;
    for (size_t i = 0; i < n; ++i) po[i] = fwd(pa[i * sa], pb[i * sb]);
    if (tracking({&a, &b})) {
        ImplPtr ia = a.impl(), ib = b.impl();
        TensorImpl* o = out.get();
        record(name, {ia, ib}, out, [ia, ib, o, sa, sb, n, dx, dy] {
            const float* g = o->grad.data();
            const float* x = ia->data.data();
            const float* y = ib->data.data();
            const float* z = o->data.data();
            if (ia->requires_grad) {
                float* gx = ia->grad_buffer();
                for (size_t i = 0; i < n; ++i) gx[i * sa] += g[i] * dx(x[i * sa], y[i * sb], z[i]);
            }
            if (ib->requires_grad) {
                float* gy = ib->grad_buffer();
                for (size_t i = 0; i < n; ++i) gy[i * sb] += g[i] * dy(x[i * sa], y[i * sb], z[i]);
            }
        });
    }
    return Tensor(out);
}

template <class Fwd, class D>
Tensor unary_op(const char* name, const Tensor& a, Fwd fwd, D d) {
    auto out = make_impl(a.shape());
    const size_t n = out->data.size();
    const float* pa = a.data().data();
    float* po = out->data.data();
    for (size_t i = 0; i < n; ++i) po[i] = fwd(pa[i]);
    if (tracking({&a})) {
        ImplPtr ia = a.impl();
        TensorImpl* o = out.get();
        record(name, {ia}, out, [ia, o, n, d] {
            const float* g = o->grad.data();
            const float* x = ia->data.data();
            const float* z = o->data.data();
            float* gx = ia->grad_buffer();
            for (size_t i = 0; i < n; ++i) gx[i] += g[i] * d(x[i], z[i]);
        });
    }
    return Tensor(out);
}

float stable_sigmoid(float x) {
    if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
    float e = std::exp(x);
    return e / (1.0f + e);
}

float stable_softplus(float x) {
    return x > 20.0f ? x : std::log1p(std::exp(x));
}

// C[m×n] (+)= op(A)·op(B)
void gemm(bool ta, bool tb, int m, int n, int k, const float* a, int lda, const float* b, int ldb,
          float beta, float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n,
                k, 1.0f, a, lda, b, ldb, beta, c, ldc);
}

}  // namespace

// ---- basics -----------------------------------------------------------------

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) {
        if (e < 0) throw std::invalid_argument("negative extent in shape " + shape_str(s));
        n *= e;
    }
    return n;
}

DenormalGuard::DenormalGuard() : prev_(_mm_getcsr()) { _mm_setcsr(prev_ | 0x8040u); }
DenormalGuard::~DenormalGuard() { _mm_setcsr(prev_); }

float* TensorImpl::grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
    return grad.data();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto impl = make_impl(std::move(shape));
    impl->requires_grad = requires_grad;
    return Tensor(impl);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.data().begin(), t.data().end(), value);
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
    if (numel_of(shape) != static_cast<int64_t>(values.size()))
        throw std::invalid_argument("Tensor::from: shape " + shape_str(shape) + " does not hold " +
                                    std::to_string(values.size()) + " values");
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(impl);
}

Tensor Tensor::scalar(float v, bool requires_grad) { return from({1}, {v}, requires_grad); }

float Tensor::item() const {
    if (numel() != 1) throw std::logic_error("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
}

Tensor Tensor::detach() const { return from(shape(), impl_->data, false); }

// ---- graph ------------------------------------------------------------------

Graph& Graph::current() { return t_graph; }
bool Graph::grad_enabled() { return t_grad_enabled; }
void Graph::set_grad_enabled(bool on) { t_grad_enabled = on; }

void Graph::record(OpRecord op) { ops_.push_back(std::move(op)); }

void Graph::clear() { ops_.clear(); }

void Graph::backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be a scalar, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) {
        clear();
        return;
    }
    loss.impl()->grad_buffer()[0] += 1.0f;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
        if (it->output->grad.empty()) continue;
        it->backward();
    }
    // Intermediate gradients are dropped with the tape; leaves keep theirs.
    for (auto& op : ops_) op.output->grad.clear();
    clear();
}

// ---- elementwise --------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](float x, float y) { return x + y; },
        [](float, float, float) { return 1.0f; }, [](float, float, float) { return 1.0f; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](float x, float y) { return x - y; },
        [](float, float, float) { return 1.0f; }, [](float, float, float) { return -1.0f; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, [](float x, float y) { return x * y; },
        [](float, float y, float) { return y; }, [](float x, float, float) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        "div", a, b, [](float x, float y) { return x / y; },
        [](float, float y, float) { return 1.0f / y; },
        [](float x, float y, float) { return -x / (y * y); });
}

Tensor neg(const Tensor& a) {
    return unary_op(
        "neg", a, [](float x) { return -x; }, [](float, float) { return -1.0f; });
}

Tensor exp(const Tensor& a) {
    return unary_op(
        "exp", a, [](float x) { return std::exp(x); }, [](float, float z) { return z; });
}

Tensor log(const Tensor& a) {
    return unary_op(
        "log", a, [](float x) { return std::log(x); }, [](float x, float) { return 1.0f / x; });
}

Tensor relu(const Tensor& a) {
    return unary_op(
        "relu", a, [](float x) { return x > 0.0f ? x : 0.0f; },
        [](float x, float) { return x > 0.0f ? 1.0f : 0.0f; });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op("sigmoid", a, stable_sigmoid, [](float, float z) { return z * (1.0f - z); });
}

Tensor tanh(const Tensor& a) {
    return unary_op(
        "tanh", a, [](float x) { return std::tanh(x); },
        [](float, float z) { return 1.0f - z * z; });
}

Tensor softplus(const Tensor& a) {
    return unary_op("softplus", a, stable_softplus,
                    [](float x, float) { return stable_sigmoid(x); });
}

Tensor abs(const Tensor& a) {
    return unary_op(
        "abs", a, [](float x) { return std::fabs(x); },
        [](float x, float) { return x > 0.0f ? 1.0f : (x < 0.0f ? -1.0f : 0.0f); });
}

Tensor pow(const Tensor& a, float e) {
    return unary_op(
        "pow", a, [e](float x) { return std::pow(x, e); },
        [e](float x, float) { return e * std::pow(x, e - 1.0f); });
}

Tensor clamp(const Tensor& a, float lo, float hi) {
    return unary_op(
        "clamp", a, [lo, hi](float x) { return std::clamp(x, lo, hi); },
        [lo, hi](float x, float) { return (x >= lo && x <= hi) ? 1.0f : 0.0f; });
}

Tensor scale(const Tensor& a, float f) {
    return unary_op(
        "scale", a, [f](float x) { return x * f; }, [f](float, float) { return f; });
}

Tensor add_scalar(const Tensor& a, float v) {
    return unary_op(
        "add_scalar", a, [v](float x) { return x + v; }, [](float, float) { return 1.0f; });
}

Tensor elementwise(const std::string& op, const Tensor& a, const Tensor* b) {
    if (b != nullptr) {
        if (op == "add") return add(a, *b);
        if (op == "sub") return sub(a, *b);
        if (op == "mul") return mul(a, *b);
        if (op == "div") return div(a, *b);
    } else {
        if (op == "neg") return neg(a);
        if (op == "exp") return exp(a);
        if (op == "log") return log(a);
        if (op == "relu") return relu(a);
        if (op == "sigmoid") return sigmoid(a);
        if (op == "tanh") return tanh(a);
    }
    throw std::invalid_argument("elementwise: unknown op '" + op + "'");
}

// ---- reductions ---------------------------------------------------------------

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (float v : a.data()) acc += v;
    auto out = make_impl({1});
    out->data[0] = static_cast<float>(acc);
    if (tracking({&a})) {
        ImplPtr ia = a.impl();
        TensorImpl* o = out.get();
        record("sum", {ia}, out, [ia, o] {
            const float g = o->grad[0];
            float* gx = ia->grad_buffer();
            for (size_t i = 0; i < ia->data.size(); ++i) gx[i] += g;
        });
    }
    return Tensor(out);
}

Tensor mean(const Tensor& a) {
    require(a.numel() > 0, "mean of empty tensor");
    return scale(sum(a), 1.0f / static_cast<float>(a.numel()));
}

Tensor weighted_mean(const Tensor& a, std::span<const float> w) {
    require(static_cast<int64_t>(w.size()) == a.numel(),
            "weighted_mean: weight count does not match " + shape_str(a.shape()));
    double acc = 0.0, wsum = 0.0;
    for (size_t i = 0; i < w.size(); ++i) {
        acc += static_cast<double>(w[i]) * a.data()[i];
        wsum += w[i];
    }
    const float inv = wsum > 0.0 ? static_cast<float>(1.0 / wsum) : 0.0f;
    auto out = make_impl({1});
    out->data[0] = static_cast<float>(acc) * inv;
    if (tracking({&a})) {
        ImplPtr ia = a.impl();
        TensorImpl* o = out.get();
        std::vector<float> wc(w.begin(), w.end());
        record("weighted_mean", {ia}, out, [ia, o, wc = std::move(wc), inv] {
            const float g = o->grad[0] * inv;
            float* gx = ia->grad_buffer();
            for (size_t i = 0; i < wc.size(); ++i) gx[i] += g * wc[i];
        });
    }
    return Tensor(out);
}

// ---- linear algebra -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require(a.rank() == 2 && b.rank() == 2,
            "matmul: expected 2-D operands, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    require(a.dim(1) == b.dim(0),
            "matmul: inner dimensions differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const int m = static_cast<int>(a.dim(0)), k = static_cast<int>(a.dim(1)),
              n = static_cast<int>(b.dim(1));
    auto out = make_impl({m, n});
    if (m > 0 && n > 0 && k > 0)
        gemm(false, false, m, n, k, a.data().data(), k, b.data().data(), n, 0.0f, out->data.data(), n);
    if (tracking({&a, &b})) {
        ImplPtr ia = a.impl(), ib = b.impl();
        TensorImpl* o = out.get();
        record("matmul", {ia, ib}, out, [ia, ib, o, m, n, k] {
            const float* g = o->grad.data();
            if (m == 0 || n == 0 || k == 0) return;
            if (ia->requires_grad)  // dA = G·Bᵀ
                gemm(false, true, m, k, n, g, n, ib->data.data(), n, 1.0f, ia->grad_buffer(), k);
            if (ib->requires_grad)  // dB = Aᵀ·G
                gemm(true, false, k, n, m, ia->data.data(), k, g, n, 1.0f, ib->grad_buffer(), n);
        });
    }
    return Tensor(out);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    require(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(0),
            "linear: input " + shape_str(x.shape()) + " does not match weight " + shape_str(w.shape()));
    require(b.numel() == w.dim(1), "linear: bias " + shape_str(b.shape()) + " does not match weight " +
                                       shape_str(w.shape()));
    const int m = static_cast<int>(x.dim(0)), k = static_cast<int>(x.dim(1)),
              n = static_cast<int>(w.dim(1));
    auto out = make_impl({m, n});
    float* po = out->data.data();
    const float* pb = b.data().data();
    for (int i = 0; i < m; ++i) std::copy(pb, pb + n, po + static_cast<size_t>(i) * n);
    if (m > 0 && n > 0 && k > 0)
        gemm(false, false, m, n, k, x.data().data(), k, w.data().data(), n, 1.0f, po, n);
    if (tracking({&x, &w, &b})) {
        ImplPtr ix = x.impl(), iw = w.impl(), ib = b.impl();
        TensorImpl* o = out.get();
        record("linear", {ix, iw, ib}, out, [ix, iw, ib, o, m, n, k] {
            const float* g = o->grad.data();
            if (m == 0) return;
            if (ix->requires_grad && k > 0)
                gemm(false, true, m, k, n, g, n, iw->data.data(), n, 1.0f, ix->grad_buffer(), k);
            if (iw->requires_grad && k > 0)
                gemm(true, false, k, n, m, ix->data.data(), k, g, n, 1.0f, iw->grad_buffer(), n);
            if (ib->requires_grad) {
                float* gb = ib->grad_buffer();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) gb[j] += g[static_cast<size_t>(i) * n + j];
            }
        });
    }
    return Tensor(out);
}

Tensor add_row(const Tensor& x, const Tensor& row) {
    require(x.rank() == 2 && row.numel() == x.dim(1),
            "add_row: row " + shape_str(row.shape()) + " does not match " + shape_str(x.shape()));
    const int64_t m = x.dim(0), n = x.dim(1);
    auto out = make_impl(x.shape());
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) out->data[i * n + j] = x.data()[i * n + j] + row.data()[j];
    if (tracking({&x, &row})) {
        ImplPtr ix = x.impl(), ir = row.impl();
        TensorImpl* o = out.get();
        record("add_row", {ix, ir}, out, [ix, ir, o, m, n] {
            const float* g = o->grad.data();
            if (ix->requires_grad) {
                float* gx = ix->grad_buffer();
                for (int64_t i = 0; i < m * n; ++i) gx[i] += g[i];
            }
            if (ir->requires_grad) {
                float* gr = ir->grad_buffer();
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < n; ++j) gr[j] += g[i * n + j];
            }
        });
    }
    return Tensor(out);
}

Tensor reshape(const Tensor& a, Shape shape) {
    require(numel_of(shape) == a.numel(),
            "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    auto out = std::make_shared<TensorImpl>();
    out->shape = std::move(shape);
    out->data = a.impl()->data;
    if (tracking({&a})) {
        ImplPtr ia = a.impl();
        TensorImpl* o = out.get();
        record("reshape", {ia}, out, [ia, o] {
            float* gx = ia->grad_buffer();
            for (size_t i = 0; i < o->grad.size(); ++i) gx[i] += o->grad[i];
        });
    }
    return Tensor(out);
}

Tensor transpose(const Tensor& a) {
    require(a.rank() == 2, "transpose: expected 2-D, got " + shape_str(a.shape()));
    const int64_t m = a.dim(0), n = a.dim(1);
    auto out = make_impl({n, m});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) out->data[j * m + i] = a.data()[i * n + j];
    if (tracking({&a})) {
        ImplPtr ia = a.impl();
        TensorImpl* o = out.get();
        record("transpose", {ia}, out, [ia, o, m, n] {
            float* gx = ia->grad_buffer();
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j) gx[i * n + j] += o->grad[j * m + i];
        });
    }
    return Tensor(out);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    require(!parts.empty(), "concat_cols: no inputs");
    const int64_t m = parts[0].dim(0);
    int64_t total = 0;
    for (const Tensor& p : parts) {
        require(p.rank() == 2 && p.dim(0) == m,
                "concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
        total += p.dim(1);
    }
    auto out = make_impl({m, total});
    std::vector<int64_t> offsets;
    int64_t off = 0;
    for (const Tensor& p : parts) {
        const int64_t w = p.dim(1);
        for (int64_t i = 0; i < m; ++i)
            std::copy_n(p.data().data() + i * w, w, out->data.data() + i * total + off);
        offsets.push_back(off);
        off += w;
    }
    bool track = false;
    for (const Tensor& p : parts) track = track || tracking({&p});
    if (track) {
        std::vector<ImplPtr> ins;
        for (const Tensor& p : parts) ins.push_back(p.impl());
        TensorImpl* o = out.get();
        record("concat_cols", ins, out, [ins, offsets, o, m, total] {
            for (size_t k = 0; k < ins.size(); ++k) {
                if (!ins[k]->requires_grad) continue;
                const int64_t w = ins[k]->shape[1];
                float* gx = ins[k]->grad_buffer();
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < w; ++j) gx[i * w + j] += o->grad[i * total + offsets[k] + j];
            }
        });
    }
    return Tensor(out);
}

Tensor slice_cols(const Tensor& a, int64_t begin, int64_t end) {
    require(a.rank() == 2 && 0 <= begin && begin <= end && end <= a.dim(1),
            "slice_cols: bad range [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                shape_str(a.shape()));
    const int64_t m = a.dim(0), n = a.dim(1), w = end - begin;
    auto out = make_impl({m, w});
    for (int64_t i = 0; i < m; ++i)
        std::copy_n(a.data().data() + i * n + begin, w, out->data.data() + i * w);
    if (tracking({&a})) {
        ImplPtr ia = a.impl();
        TensorImpl* o = out.get();
        record("slice_cols", {ia}, out, [ia, o, m, n, w, begin] {
            float* gx = ia->grad_buffer();
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < w; ++j) gx[i * n + begin + j] += o->grad[i * w + j];
        });
    }
    return Tensor(out);
}

Tensor gather_rows(const Tensor& table, std::span<const int32_t> idx) {
    require(table.rank() == 2, "gather_rows: table must be 2-D, got " + shape_str(table.shape()));
    const int64_t rows = table.dim(0), c = table.dim(1), m = static_cast<int64_t>(idx.size());
    auto out = make_impl({m, c});
    for (int64_t i = 0; i < m; ++i) {
        require(idx[i] >= 0 && idx[i] < rows,
                "gather_rows: index " + std::to_string(idx[i]) + " out of range " + std::to_string(rows));
        std::copy_n(table.data().data() + idx[i] * c, c, out->data.data() + i * c);
    }
    if (tracking({&table})) {
        ImplPtr it = table.impl();
        TensorImpl* o = out.get();
        std::vector<int32_t> ic(idx.begin(), idx.end());
        record("gather_rows", {it}, out, [it, o, ic = std::move(ic), c] {
            float* gt = it->grad_buffer();
            for (size_t i = 0; i < ic.size(); ++i)
                for (int64_t j = 0; j < c; ++j) gt[ic[i] * c + j] += o->grad[i * c + j];
        });
    }
    return Tensor(out);
}

Tensor scatter_rows(const Tensor& src, std::span<const int32_t> idx, int64_t n_rows,
                    std::span<const float> fill) {
    require(src.rank() == 2 && src.dim(0) == static_cast<int64_t>(idx.size()),
            "scatter_rows: " + std::to_string(idx.size()) + " indices for " + shape_str(src.shape()));
    const int64_t c = src.dim(1);
    require(static_cast<int64_t>(fill.size()) == c, "scatter_rows: fill width mismatch");
    auto out = make_impl({n_rows, c});
    for (int64_t i = 0; i < n_rows; ++i) std::copy(fill.begin(), fill.end(), out->data.data() + i * c);
    for (size_t i = 0; i < idx.size(); ++i) {
        require(idx[i] >= 0 && idx[i] < n_rows, "scatter_rows: index out of range");
        std::copy_n(src.data().data() + i * c, c, out->data.data() + idx[i] * c);
    }
    if (tracking({&src})) {
        ImplPtr is = src.impl();
        TensorImpl* o = out.get();
        std::vector<int32_t> ic(idx.begin(), idx.end());
        record("scatter_rows", {is}, out, [is, o, ic = std::move(ic), c] {
            float* gs = is->grad_buffer();
            for (size_t i = 0; i < ic.size(); ++i)
                for (int64_t j = 0; j < c; ++j) gs[i * c + j] += o->grad[ic[i] * c + j];
        });
    }
    return Tensor(out);
}

Tensor max_pool_rows(const Tensor& a, int64_t group) {
    require(a.rank() == 2 && group > 0 && a.dim(0) % group == 0,
            "max_pool_rows: " + shape_str(a.shape()) + " not divisible into groups of " +
                std::to_string(group));
    const int64_t g = a.dim(0) / group, c = a.dim(1);
    auto out = make_impl({g, c});
    std::vector<int64_t> argmax(static_cast<size_t>(g * c));
    for (int64_t k = 0; k < g; ++k)
        for (int64_t j = 0; j < c; ++j) {
            int64_t best = k * group;
            for (int64_t r = k * group + 1; r < (k + 1) * group; ++r)
                if (a.data()[r * c + j] > a.data()[best * c + j]) best = r;
            argmax[k * c + j] = best;
            out->data[k * c + j] = a.data()[best * c + j];
        }
    if (tracking({&a})) {
        ImplPtr ia = a.impl();
        TensorImpl* o = out.get();
        record("max_pool_rows", {ia}, out, [ia, o, argmax = std::move(argmax), c] {
            float* gx = ia->grad_buffer();
            for (size_t i = 0; i < argmax.size(); ++i)
                gx[argmax[i] * c + static_cast<int64_t>(i) % c] += o->grad[i];
        });
    }
    return Tensor(out);
}

Tensor film_relu(const Tensor& x, const Tensor& gamma, const Tensor& beta, std::span<const int32_t> group) {
    require(x.rank() == 2 && gamma.rank() == 2 && gamma.shape() == beta.shape() && gamma.dim(1) == x.dim(1),
            "film_relu: x " + shape_str(x.shape()) + " does not match gamma " + shape_str(gamma.shape()) +
                " and beta " + shape_str(beta.shape()));
    require(static_cast<int64_t>(group.size()) == x.dim(0), "film_relu: one group index per row required");
    const int64_t m = x.dim(0), c = x.dim(1), g = gamma.dim(0);
    for (int32_t k : group)
        require(k >= 0 && k < g, "film_relu: group " + std::to_string(k) + " out of range " + std::to_string(g));
    auto out = make_impl(x.shape());
    const float* px = x.data().data();
    const float* pg = gamma.data().data();
    const float* pb = beta.data().data();
    float* po = out->data.data();
    for (int64_t i = 0; i < m; ++i) {
        const float* gr = pg + group[i] * c;
        const float* br = pb + group[i] * c;
        const float* xr = px + i * c;
        float* orow = po + i * c;
        for (int64_t j = 0; j < c; ++j) orow[j] = std::max(0.0f, xr[j] * gr[j] + br[j]);
    }
    if (tracking({&x, &gamma, &beta})) {
        ImplPtr ix = x.impl(), ig = gamma.impl(), ib = beta.impl();
        TensorImpl* o = out.get();
        std::vector<int32_t> gc(group.begin(), group.end());
        record("film_relu", {ix, ig, ib}, out, [ix, ig, ib, o, gc = std::move(gc), m, c] {
            const float* go = o->grad.data();
            const float* z = o->data.data();
            const float* xv = ix->data.data();
            const float* gv = ig->data.data();
            std::vector<float> d(static_cast<size_t>(c));
            float* gx = ix->requires_grad ? ix->grad_buffer() : nullptr;
            float* gg = ig->requires_grad ? ig->grad_buffer() : nullptr;
            float* gb = ib->requires_grad ? ib->grad_buffer() : nullptr;
            for (int64_t i = 0; i < m; ++i) {
                const int64_t k = gc[static_cast<size_t>(i)] * c;
                const float* zr = z + i * c;
                const float* gr = go + i * c;
                for (int64_t j = 0; j < c; ++j) d[j] = zr[j] > 0.0f ? gr[j] : 0.0f;
                if (gx) {
                    float* dst = gx + i * c;
                    for (int64_t j = 0; j < c; ++j) dst[j] += d[j] * gv[k + j];
                }
                if (gg) {
                    const float* xr = xv + i * c;
                    float* dst = gg + k;
                    for (int64_t j = 0; j < c; ++j) dst[j] += d[j] * xr[j];
                }
                if (gb) {
                    float* dst = gb + k;
                    for (int64_t j = 0; j < c; ++j) dst[j] += d[j];
                }
            }
        });
    }
    return Tensor(out);
}

// ---- image ops ------------------------------------------------------------------

namespace {

// cols[(c*9 + ky*3 + kx) × (H*W)]
void im2col3(const float* in, int64_t C, int64_t H, int64_t W, float* cols) {
    const int64_t hw = H * W;
    for (int64_t c = 0; c < C; ++c)
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                float* row = cols + ((c * 9) + ky * 3 + kx) * hw;
                for (int64_t y = 0; y < H; ++y) {
                    const int64_t sy = y + ky - 1;
                    float* dst = row + y * W;
                    if (sy < 0 || sy >= H) {
                        std::fill_n(dst, W, 0.0f);
                        continue;
                    }
                    const float* src = in + (c * H + sy) * W;
                    for (int64_t x = 0; x < W; ++x) {
                        const int64_t sx = x + kx - 1;
                        dst[x] = (sx < 0 || sx >= W) ? 0.0f : src[sx];
                    }
                }
            }
}

void col2im3(const float* cols, int64_t C, int64_t H, int64_t W, float* out) {
    const int64_t hw = H * W;
    for (int64_t c = 0; c < C; ++c)
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                const float* row = cols + ((c * 9) + ky * 3 + kx) * hw;
                for (int64_t y = 0; y < H; ++y) {
                    const int64_t sy = y + ky - 1;
                    if (sy < 0 || sy >= H) continue;
                    float* dst = out + (c * H + sy) * W;
                    for (int64_t x = 0; x < W; ++x) {
                        const int64_t sx = x + kx - 1;
                        if (sx >= 0 && sx < W) dst[sx] += row[y * W + x];
                    }
                }
            }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
    require(input.rank() == 3, "conv2d: input must be C×H×W, got " + shape_str(input.shape()));
    require(kernel.rank() == 4 && kernel.dim(2) == 3 && kernel.dim(3) == 3,
            "conv2d: kernel must be O×C×3×3, got " + shape_str(kernel.shape()));
    require(kernel.dim(1) == input.dim(0), "conv2d: channel mismatch, input " + shape_str(input.shape()) +
                                               " kernel " + shape_str(kernel.shape()));
    const bool has_bias = bias.defined();
    if (has_bias) require(bias.numel() == kernel.dim(0), "conv2d: bias does not match output channels");
    const int64_t C = input.dim(0), H = input.dim(1), W = input.dim(2), O = kernel.dim(0);
    const int64_t hw = H * W, kc = C * 9;
    auto cols = std::make_shared<std::vector<float>>(static_cast<size_t>(kc * hw));
    im2col3(input.data().data(), C, H, W, cols->data());
    auto out = make_impl({O, H, W});
    if (has_bias)
        for (int64_t o = 0; o < O; ++o) std::fill_n(out->data.data() + o * hw, hw, bias.data()[o]);
    gemm(false, false, static_cast<int>(O), static_cast<int>(hw), static_cast<int>(kc),
         kernel.data().data(), static_cast<int>(kc), cols->data(), static_cast<int>(hw), has_bias ? 1.0f : 0.0f,
         out->data.data(), static_cast<int>(hw));
    const bool track = has_bias ? tracking({&input, &kernel, &bias}) : tracking({&input, &kernel});
    if (track) {
        ImplPtr ii = input.impl(), ik = kernel.impl();
        ImplPtr ib = has_bias ? bias.impl() : nullptr;
        TensorImpl* o = out.get();
        std::vector<ImplPtr> ins{ii, ik};
        if (ib) ins.push_back(ib);
        record("conv2d", ins, out, [ii, ik, ib, o, cols, C, H, W, O, hw, kc] {
            const float* g = o->grad.data();
            if (ik->requires_grad)
                gemm(false, true, static_cast<int>(O), static_cast<int>(kc), static_cast<int>(hw), g,
                     static_cast<int>(hw), cols->data(), static_cast<int>(hw), 1.0f, ik->grad_buffer(),
                     static_cast<int>(kc));
            if (ib && ib->requires_grad) {
                float* gb = ib->grad_buffer();
                for (int64_t oc = 0; oc < O; ++oc) {
                    double acc = 0.0;
                    for (int64_t i = 0; i < hw; ++i) acc += g[oc * hw + i];
                    gb[oc] += static_cast<float>(acc);
                }
            }
            if (ii->requires_grad) {
                std::vector<float> dcols(static_cast<size_t>(kc * hw));
                gemm(true, false, static_cast<int>(kc), static_cast<int>(hw), static_cast<int>(O),
                     ik->data.data(), static_cast<int>(kc), g, static_cast<int>(hw), 0.0f, dcols.data(),
                     static_cast<int>(hw));
                col2im3(dcols.data(), C, H, W, ii->grad_buffer());
            }
        });
    }
    return Tensor(out);
}

Tensor conv2d(const Tensor& input, const Tensor& kernel) { return conv2d(input, kernel, Tensor()); }

Tensor upsample_nearest2x(const Tensor& input) {
    require(input.rank() == 3, "upsample_nearest2x: expected C×H×W, got " + shape_str(input.shape()));
    const int64_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
    auto out = make_impl({C, 2 * H, 2 * W});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < 2 * H; ++y)
            for (int64_t x = 0; x < 2 * W; ++x)
                out->data[(c * 2 * H + y) * 2 * W + x] = input.data()[(c * H + y / 2) * W + x / 2];
    if (tracking({&input})) {
        ImplPtr ii = input.impl();
        TensorImpl* o = out.get();
        record("upsample_nearest2x", {ii}, out, [ii, o, C, H, W] {
            float* gx = ii->grad_buffer();
            for (int64_t c = 0; c < C; ++c)
                for (int64_t y = 0; y < 2 * H; ++y)
                    for (int64_t x = 0; x < 2 * W; ++x)
                        gx[(c * H + y / 2) * W + x / 2] += o->grad[(c * 2 * H + y) * 2 * W + x];
        });
    }
    return Tensor(out);
}

namespace {

struct Tap {
    int64_t i0, i1;
    float w0, w1;
};

std::vector<Tap> bilinear_taps(int64_t n) {
    std::vector<Tap> taps(static_cast<size_t>(2 * n));
    for (int64_t o = 0; o < 2 * n; ++o) {
        float s = (static_cast<float>(o) + 0.5f) * 0.5f - 0.5f;
        s = std::clamp(s, 0.0f, static_cast<float>(n - 1));
        const int64_t i0 = static_cast<int64_t>(std::floor(s));
        const int64_t i1 = std::min(i0 + 1, n - 1);
        const float f = s - static_cast<float>(i0);
        taps[o] = {i0, i1, 1.0f - f, f};
    }
    return taps;
}

}  // namespace

Tensor upsample_bilinear2x(const Tensor& input) {
    require(input.rank() == 3, "upsample_bilinear2x: expected C×H×W, got " + shape_str(input.shape()));
    const int64_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
    auto ty = bilinear_taps(H), tx = bilinear_taps(W);
    auto out = make_impl({C, 2 * H, 2 * W});
    const float* in = input.data().data();
    for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < 2 * H; ++y) {
            const Tap& a = ty[y];
            for (int64_t x = 0; x < 2 * W; ++x) {
                const Tap& b = tx[x];
                const float* p = in + c * H * W;
                out->data[(c * 2 * H + y) * 2 * W + x] =
                    a.w0 * (b.w0 * p[a.i0 * W + b.i0] + b.w1 * p[a.i0 * W + b.i1]) +
                    a.w1 * (b.w0 * p[a.i1 * W + b.i0] + b.w1 * p[a.i1 * W + b.i1]);
            }
        }
    if (tracking({&input})) {
        ImplPtr ii = input.impl();
        TensorImpl* o = out.get();
        record("upsample_bilinear2x", {ii}, out, [ii, o, C, H, W, ty, tx] {
            float* gx = ii->grad_buffer();
            for (int64_t c = 0; c < C; ++c)
                for (int64_t y = 0; y < 2 * H; ++y) {
                    const Tap& a = ty[y];
                    for (int64_t x = 0; x < 2 * W; ++x) {
                        const Tap& b = tx[x];
                        const float g = o->grad[(c * 2 * H + y) * 2 * W + x];
                        float* p = gx + c * H * W;
                        p[a.i0 * W + b.i0] += g * a.w0 * b.w0;
                        p[a.i0 * W + b.i1] += g * a.w0 * b.w1;
                        p[a.i1 * W + b.i0] += g * a.w1 * b.w0;
                        p[a.i1 * W + b.i1] += g * a.w1 * b.w1;
                    }
                }
        });
    }
    return Tensor(out);
}

// ---- volume rendering ---------------------------------------------------------------

Tensor composite(const Tensor& sigma, const Tensor& values, std::span<const float> deltas,
                 int64_t channels, std::span<const float> background) {
    require(sigma.rank() == 2, "composite: sigma must be R×S, got " + shape_str(sigma.shape()));
    const int64_t R = sigma.dim(0), S = sigma.dim(1), Cc = channels;
    require(values.rank() == 2 && values.dim(0) == R && values.dim(1) == S * Cc,
            "composite: values " + shape_str(values.shape()) + " do not match sigma " +
                shape_str(sigma.shape()) + " with " + std::to_string(Cc) + " channels");
    require(static_cast<int64_t>(deltas.size()) == R * S, "composite: delta count mismatch");
    require(static_cast<int64_t>(background.size()) == Cc, "composite: background width mismatch");
    const int64_t OC = Cc + 1;
    auto out = make_impl({R, OC});
    // Per-sample transmittance before the sample and weight, kept for backward.
    auto trans = std::make_shared<std::vector<float>>(static_cast<size_t>(R * (S + 1)));
    auto weight = std::make_shared<std::vector<float>>(static_cast<size_t>(R * S));
    const float* sg = sigma.data().data();
    const float* vv = values.data().data();
    for (int64_t r = 0; r < R; ++r) {
        float T = 1.0f;
        float* o = out->data.data() + r * OC;
        for (int64_t i = 0; i < S; ++i) {
            const float surv = std::exp(-sg[r * S + i] * deltas[r * S + i]);
            const float alpha = 1.0f - surv;
            const float w = T * alpha;
            (*trans)[r * (S + 1) + i] = T;
            (*weight)[r * S + i] = w;
            for (int64_t c = 0; c < Cc; ++c) o[c] += w * vv[(r * S + i) * Cc + c];
            o[Cc] += w;
            T *= surv;
        }
        (*trans)[r * (S + 1) + S] = T;
        for (int64_t c = 0; c < Cc; ++c) o[c] += T * background[c];
    }
    if (tracking({&sigma, &values})) {
        ImplPtr is = sigma.impl(), iv = values.impl();
        TensorImpl* o = out.get();
        std::vector<float> dl(deltas.begin(), deltas.end());
        std::vector<float> bg(background.begin(), background.end());
        record("composite", {is, iv}, out, [is, iv, o, trans, weight, dl = std::move(dl), bg = std::move(bg), R, S, Cc, OC] {
            const float* g = o->grad.data();
            float* gs = is->requires_grad ? is->grad_buffer() : nullptr;
            float* gv = iv->requires_grad ? iv->grad_buffer() : nullptr;
            const float* v = iv->data.data();
            for (int64_t r = 0; r < R; ++r) {
                const float* gr = g + r * OC;
                const float TS = (*trans)[r * (S + 1) + S];
                // suffix = Σ_{j>i} w_j·<g, v_j> + T_S·<g, bg>
                double suffix = 0.0;
                for (int64_t c = 0; c < Cc; ++c) suffix += static_cast<double>(gr[c]) * bg[c];
                suffix *= TS;
                for (int64_t i = S - 1; i >= 0; --i) {
                    const float w = (*weight)[r * S + i];
                    const float Tnext = (*trans)[r * (S + 1) + i + 1];
                    double gdotv = 0.0;
                    for (int64_t c = 0; c < Cc; ++c) {
                        const float vc = v[(r * S + i) * Cc + c];
                        gdotv += static_cast<double>(gr[c]) * vc;
                        if (gv) gv[(r * S + i) * Cc + c] += gr[c] * w;
                    }
                    if (gs) {
                        const float d = dl[r * S + i];
                        gs[r * S + i] += static_cast<float>(d * (Tnext * gdotv - suffix) + d * TS * gr[Cc]);
                    }
                    suffix += w * gdotv;
                }
            }
        });
    }
    return Tensor(out);
}

}  // namespace skelocc
