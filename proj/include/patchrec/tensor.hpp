#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "patchrec/error.hpp"
#include "patchrec/rng.hpp"

namespace patchrec {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? " x " : "") << s[i];
    os << "]";
    return os.str();
}

/// Dense row-major tensor of 64-bit floats with reverse-mode autodiff.
///
/// A Tensor is a cheap handle (shared storage). Gradients live next to the
/// data and are lazily allocated the first time something accumulates into
/// them. Operations record their backward closures on the thread's active
/// ComputationTape; with no active tape they are plain numeric kernels.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        Tensor t;
        t.impl_ = std::make_shared<Impl>();
        t.impl_->shape = std::move(shape);
        t.impl_->data.assign(shape_numel(t.impl_->shape), 0.0);
        t.impl_->requires_grad = requires_grad;
        return t;
    }

    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size()) {
            throw DimensionError("Tensor: shape " + shape_str(shape) + " does not match " +
                                 std::to_string(data.size()) + " values");
        }
        Tensor t;
        t.impl_ = std::make_shared<Impl>();
        t.impl_->shape = std::move(shape);
        t.impl_->data = std::move(data);
        t.impl_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    static Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (double& x : t.impl_->data) x = rng.normal(0.0, stddev);
        return t;
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t numel() const { return impl_->data.size(); }

    std::size_t rows() const { return impl_->shape.size() == 2 ? impl_->shape[0] : 1; }
    std::size_t cols() const {
        return impl_->shape.size() == 2 ? impl_->shape[1] : impl_->shape.empty() ? 1 : impl_->shape[0];
    }

    std::span<double> data() { return impl_->data; }
    std::span<const double> data() const { return impl_->data; }

    double value() const {
        if (numel() != 1) throw DimensionError("Tensor::value: tensor is not scalar");
        return impl_->data[0];
    }

    double& at(std::size_t r, std::size_t c) { return impl_->data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return impl_->data[r * cols() + c]; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool b) { impl_->requires_grad = b; }

    bool has_grad() const { return !impl_->grad.empty(); }

    /// Gradient buffer, allocated (zeroed) on first use.
    std::span<double> grad() {
        ensure_grad();
        return impl_->grad;
    }
    std::span<const double> grad() const {
        const_cast<Tensor*>(this)->ensure_grad();
        return impl_->grad;
    }

    void zero_grad() {
        if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
    }

    /// Deep copy; detached from any graph.
    Tensor clone() const {
        Tensor t = from(impl_->shape, impl_->data, impl_->requires_grad);
        return t;
    }

    /// True while a tape is active and this tensor participates in the graph.
    bool tracked() const { return impl_ && (impl_->requires_grad || impl_->tape_tracked); }

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

private:
    struct Impl {
        Shape shape;
        std::vector<double> data;
        bool requires_grad = false;
        bool tape_tracked = false; // set when produced under an active tape
        std::vector<double> grad;
    };

    void ensure_grad() {
        if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    }

    std::shared_ptr<Impl> impl_;

    friend class ComputationTape;
    friend void mark_tracked(Tensor& t);
};

inline void mark_tracked(Tensor& t) { t.impl_->tape_tracked = true; }

/// Ordered record of the primitive operations of one forward pass.
///
/// Ops append themselves in execution order, which is a topological order of
/// the define-by-run graph; backward() therefore visits nodes exactly once in
/// reverse creation order. The tape is rebuilt for every training step.
class ComputationTape {
public:
    ComputationTape() = default;
    ComputationTape(const ComputationTape&) = delete;
    ComputationTape& operator=(const ComputationTape&) = delete;

    void record(std::function<void()> backward_fn) {
        nodes_.push_back(std::move(backward_fn));
    }

    std::size_t size() const { return nodes_.size(); }

    /// Seed d(loss)/d(loss) = 1 and run all recorded backward closures in
    /// reverse topological order.
    void backward(Tensor& loss) {
        if (loss.numel() != 1) throw DimensionError("backward: loss must be scalar");
        loss.grad()[0] += 1.0;
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            nodes_[i]();
        }
    }

    void clear() { nodes_.clear(); }

    static ComputationTape* active() { return active_; }

    /// RAII activation of a tape on the current thread.
    class Scope {
    public:
        explicit Scope(ComputationTape& tape) : prev_(active_) { active_ = &tape; }
        ~Scope() { active_ = prev_; }
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        ComputationTape* prev_;
    };

private:
    std::vector<std::function<void()>> nodes_;
    static thread_local ComputationTape* active_;
};

inline thread_local ComputationTape* ComputationTape::active_ = nullptr;

namespace detail {

inline bool taping(std::initializer_list<const Tensor*> inputs) {
    if (ComputationTape::active() == nullptr) return false;
    for (const Tensor* t : inputs) {
        if (t->tracked()) return true;
    }
    return false;
}

inline void record(Tensor& out, std::function<void()> fn) {
    mark_tracked(out);
    ComputationTape::active()->record(std::move(fn));
}

} // namespace detail

// ---------------------------------------------------------------------------
// Primitive operations
// ---------------------------------------------------------------------------

/// C[m x n] = A[m x k] * B[k x n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions disagree: " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor c = Tensor::zeros({m, n});
    {
        const double* pa = a.data().data();
        const double* pb = b.data().data();
        double* pc = c.data().data();
        for (std::size_t i = 0; i < m; ++i) {
            const double* arow = pa + i * k;
            double* crow = pc + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = arow[p];
                const double* brow = pb + p * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }
    if (detail::taping({&a, &b})) {
        Tensor ac = a, bc = b, cc = c;
        detail::record(c, [ac, bc, cc, m, k, n]() mutable {
            if (!cc.has_grad()) return;
            const double* g = cc.grad().data();
            if (ac.tracked()) {
                // dA = dC * B^T
                double* ga = ac.grad().data();
                const double* pb = bc.data().data();
                for (std::size_t i = 0; i < m; ++i) {
                    const double* grow = g + i * n;
                    double* garow = ga + i * k;
                    for (std::size_t p = 0; p < k; ++p) {
                        const double* brow = pb + p * n;
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        garow[p] += acc;
                    }
                }
            }
            if (bc.tracked()) {
                // dB = A^T * dC
                double* gb = bc.grad().data();
                const double* pa = ac.data().data();
                for (std::size_t i = 0; i < m; ++i) {
                    const double* arow = pa + i * k;
                    const double* grow = g + i * n;
                    for (std::size_t p = 0; p < k; ++p) {
                        const double av = arow[p];
                        double* gbrow = gb + p * n;
                        for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                    }
                }
            }
        });
    }
    return c;
}

/// C[m x n] = A[m x k] * B[n x k]^T  (both operands row-major, no transpose copy)
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.cols()) {
        throw DimensionError("matmul_nt: inner dimensions disagree: " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()) + " transposed");
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    Tensor c = Tensor::zeros({m, n});
    {
        const double* pa = a.data().data();
        const double* pb = b.data().data();
        double* pc = c.data().data();
        for (std::size_t i = 0; i < m; ++i) {
            const double* arow = pa + i * k;
            double* crow = pc + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                const double* brow = pb + j * k;
                double acc = 0.0;
                for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
                crow[j] = acc;
            }
        }
    }
    if (detail::taping({&a, &b})) {
        Tensor ac = a, bc = b, cc = c;
        detail::record(c, [ac, bc, cc, m, k, n]() mutable {
            if (!cc.has_grad()) return;
            const double* g = cc.grad().data();
            if (ac.tracked()) {
                // dA = dC * B
                double* ga = ac.grad().data();
                const double* pb = bc.data().data();
                for (std::size_t i = 0; i < m; ++i) {
                    const double* grow = g + i * n;
                    double* garow = ga + i * k;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double gv = grow[j];
                        const double* brow = pb + j * k;
                        for (std::size_t p = 0; p < k; ++p) garow[p] += gv * brow[p];
                    }
                }
            }
            if (bc.tracked()) {
                // dB = dC^T * A
                double* gb = bc.grad().data();
                const double* pa = ac.data().data();
                for (std::size_t i = 0; i < m; ++i) {
                    const double* arow = pa + i * k;
                    const double* grow = g + i * n;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double gv = grow[j];
                        double* gbrow = gb + j * k;
                        for (std::size_t p = 0; p < k; ++p) gbrow[p] += gv * arow[p];
                    }
                }
            }
        });
    }
    return c;
}

/// Elementwise sum of two same-shape tensors.
inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("add: shapes disagree: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    Tensor c = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) c.data()[i] = a.data()[i] + b.data()[i];
    if (detail::taping({&a, &b})) {
        Tensor ac = a, bc = b, cc = c;
        detail::record(c, [ac, bc, cc]() mutable {
            if (!cc.has_grad()) return;
            const auto g = cc.grad();
            if (ac.tracked()) {
                auto ga = ac.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (bc.tracked()) {
                auto gb = bc.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return c;
}

/// Broadcast-add a row vector b[1 x n] to every row of x[m x n].
inline Tensor add_rowvec(const Tensor& x, const Tensor& b) {
    const std::size_t m = x.rows(), n = x.cols();
    if (b.numel() != n) {
        throw DimensionError("add_rowvec: vector " + shape_str(b.shape()) +
                             " does not match row width of " + shape_str(x.shape()));
    }
    Tensor c = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) c.data()[i * n + j] = x.data()[i * n + j] + b.data()[j];
    if (detail::taping({&x, &b})) {
        Tensor xc = x, bc = b, cc = c;
        detail::record(c, [xc, bc, cc, m, n]() mutable {
            if (!cc.has_grad()) return;
            const auto g = cc.grad();
            if (xc.tracked()) {
                auto gx = xc.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            if (bc.tracked()) {
                auto gb = bc.grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
            }
        });
    }
    return c;
}

inline Tensor scale(const Tensor& x, double s) {
    Tensor c = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) c.data()[i] = x.data()[i] * s;
    if (detail::taping({&x})) {
        Tensor xc = x, cc = c;
        detail::record(c, [xc, cc, s]() mutable {
            if (!cc.has_grad() || !xc.tracked()) return;
            const auto g = cc.grad();
            auto gx = xc.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s;
        });
    }
    return c;
}

/// Exact GELU: 0.5 x (1 + erf(x / sqrt(2)))
inline Tensor gelu(const Tensor& x) {
    Tensor c = Tensor::zeros(x.shape());
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double v = x.data()[i];
        c.data()[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
    }
    if (detail::taping({&x})) {
        Tensor xc = x, cc = c;
        detail::record(c, [xc, cc]() mutable {
            if (!cc.has_grad() || !xc.tracked()) return;
            constexpr double inv_sqrt2 = 0.70710678118654752440;
            constexpr double inv_sqrt2pi = 0.39894228040143267794;
            const auto g = cc.grad();
            auto gx = xc.grad();
            const auto xd = xc.data();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double v = xd[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
                gx[i] += g[i] * (cdf + v * pdf);
            }
        });
    }
    return c;
}

/// Per-row layer normalization: y = (x - mean) / sqrt(var + eps) * gain + bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
    const std::size_t m = x.rows(), n = x.cols();
    if (gain.numel() != n || bias.numel() != n) {
        throw DimensionError("layer_norm: gain/bias width does not match " + shape_str(x.shape()));
    }
    Tensor c = Tensor::zeros(x.shape());
    std::vector<double> inv_std(m), means(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = x.data().data() + i * n;
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += row[j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = row[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double istd = 1.0 / std::sqrt(var + eps);
        means[i] = mean;
        inv_std[i] = istd;
        double* out = c.data().data() + i * n;
        for (std::size_t j = 0; j < n; ++j)
            out[j] = (row[j] - mean) * istd * gain.data()[j] + bias.data()[j];
    }
    if (detail::taping({&x, &gain, &bias})) {
        Tensor xc = x, gc = gain, bc = bias, cc = c;
        detail::record(c, [xc, gc, bc, cc, m, n, inv_std, means]() mutable {
            if (!cc.has_grad()) return;
            const double* g = cc.grad().data();
            const double* xd = xc.data().data();
            const double* gd = gc.data().data();
            double* ggain = gc.tracked() ? gc.grad().data() : nullptr;
            double* gbias = bc.tracked() ? bc.grad().data() : nullptr;
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = g + i * n;
                const double* xrow = xd + i * n;
                const double istd = inv_std[i], mean = means[i];
                if (ggain || gbias) {
                    for (std::size_t j = 0; j < n; ++j) {
                        const double xhat = (xrow[j] - mean) * istd;
                        if (ggain) ggain[j] += grow[j] * xhat;
                        if (gbias) gbias[j] += grow[j];
                    }
                }
                if (xc.tracked()) {
                    // d/dx of (xhat * gain): sum terms through mean and variance
                    double sum_gg = 0.0, sum_ggx = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double gg = grow[j] * gd[j];
                        const double xhat = (xrow[j] - mean) * istd;
                        sum_gg += gg;
                        sum_ggx += gg * xhat;
                    }
                    double* gx = xc.grad().data() + i * n;
                    const double invn = 1.0 / static_cast<double>(n);
                    for (std::size_t j = 0; j < n; ++j) {
                        const double gg = grow[j] * gd[j];
                        const double xhat = (xrow[j] - mean) * istd;
                        gx[j] += istd * (gg - invn * sum_gg - xhat * invn * sum_ggx);
                    }
                }
            }
        });
    }
    return c;
}

/// Row-wise causal softmax over a square score matrix: row i is a softmax of
/// columns 0..i, columns above the diagonal are exactly zero.
inline Tensor causal_softmax(const Tensor& scores) {
    const std::size_t m = scores.rows(), n = scores.cols();
    if (m != n) {
        throw DimensionError("causal_softmax: expected square scores, got " +
                             shape_str(scores.shape()));
    }
    Tensor c = Tensor::zeros(scores.shape());
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = scores.data().data() + i * n;
        double* out = c.data().data() + i * n;
        double mx = row[0];
        for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
            out[j] = std::exp(row[j] - mx);
            denom += out[j];
        }
        const double inv = 1.0 / denom;
        for (std::size_t j = 0; j <= i; ++j) out[j] *= inv;
    }
    if (detail::taping({&scores})) {
        Tensor sc = scores, cc = c;
        detail::record(c, [sc, cc, m, n]() mutable {
            if (!cc.has_grad() || !sc.tracked()) return;
            const double* g = cc.grad().data();
            const double* y = cc.data().data();
            double* gs = sc.grad().data();
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = g + i * n;
                const double* yrow = y + i * n;
                double dot = 0.0;
                for (std::size_t j = 0; j <= i; ++j) dot += grow[j] * yrow[j];
                double* gsrow = gs + i * n;
                for (std::size_t j = 0; j <= i; ++j) gsrow[j] += yrow[j] * (grow[j] - dot);
            }
        });
    }
    return c;
}

/// Column means of rows[n x d] -> [1 x d]. Backward hands each input row
/// exactly grad/n (one division, no other arithmetic).
inline Tensor mean_pool(const Tensor& rows) {
    const std::size_t n = rows.rows(), d = rows.cols();
    if (rows.shape().size() != 2 || n == 0) {
        throw DimensionError("mean_pool: need a non-empty [n x d] input, got " +
                             shape_str(rows.shape()));
    }
    Tensor c = Tensor::zeros({1, d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) c.data()[j] += rows.data()[i * d + j];
    for (std::size_t j = 0; j < d; ++j) c.data()[j] /= static_cast<double>(n);
    if (detail::taping({&rows})) {
        Tensor rc = rows, cc = c;
        detail::record(c, [rc, cc, n, d]() mutable {
            if (!cc.has_grad() || !rc.tracked()) return;
            const auto g = cc.grad();
            auto gr = rc.grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j)
                    gr[i * d + j] += g[j] / static_cast<double>(n);
        });
    }
    return c;
}

/// Gather rows of an embedding table: out[t] = table[ids[t]].
inline Tensor embedding_gather(const Tensor& table, std::span<const std::int32_t> ids) {
    const std::size_t v = table.rows(), d = table.cols();
    for (std::int32_t id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= v) {
            throw DimensionError("embedding_gather: id " + std::to_string(id) +
                                 " out of range for table " + shape_str(table.shape()));
        }
    }
    Tensor c = Tensor::zeros({ids.size(), d});
    for (std::size_t t = 0; t < ids.size(); ++t) {
        const double* src = table.data().data() + static_cast<std::size_t>(ids[t]) * d;
        double* dst = c.data().data() + t * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] = src[j];
    }
    if (detail::taping({&table})) {
        Tensor tc = table, cc = c;
        std::vector<std::int32_t> idv(ids.begin(), ids.end());
        detail::record(c, [tc, cc, idv, d]() mutable {
            if (!cc.has_grad() || !tc.tracked()) return;
            const double* g = cc.grad().data();
            double* gt = tc.grad().data();
            for (std::size_t t = 0; t < idv.size(); ++t) {
                double* dst = gt + static_cast<std::size_t>(idv[t]) * d;
                const double* src = g + t * d;
                for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return c;
}

inline Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t len) {
    const std::size_t m = x.rows(), n = x.cols();
    if (start + len > m) {
        throw DimensionError("slice_rows: [" + std::to_string(start) + ", " +
                             std::to_string(start + len) + ") exceeds " + shape_str(x.shape()));
    }
    Tensor c = Tensor::zeros({len, n});
    std::copy_n(x.data().data() + start * n, len * n, c.data().data());
    if (detail::taping({&x})) {
        Tensor xc = x, cc = c;
        detail::record(c, [xc, cc, start, n, len]() mutable {
            if (!cc.has_grad() || !xc.tracked()) return;
            const auto g = cc.grad();
            auto gx = xc.grad();
            for (std::size_t i = 0; i < len * n; ++i) gx[start * n + i] += g[i];
        });
    }
    return c;
}

inline Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len) {
    const std::size_t m = x.rows(), n = x.cols();
    if (start + len > n) {
        throw DimensionError("slice_cols: [" + std::to_string(start) + ", " +
                             std::to_string(start + len) + ") exceeds " + shape_str(x.shape()));
    }
    Tensor c = Tensor::zeros({m, len});
    for (std::size_t i = 0; i < m; ++i)
        std::copy_n(x.data().data() + i * n + start, len, c.data().data() + i * len);
    if (detail::taping({&x})) {
        Tensor xc = x, cc = c;
        detail::record(c, [xc, cc, m, n, start, len]() mutable {
            if (!cc.has_grad() || !xc.tracked()) return;
            const auto g = cc.grad();
            auto gx = xc.grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < len; ++j) gx[i * n + start + j] += g[i * len + j];
        });
    }
    return c;
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no parts");
    const std::size_t n = parts[0].cols();
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        if (p.cols() != n) {
            throw DimensionError("concat_rows: width mismatch: " + shape_str(p.shape()) +
                                 " vs width " + std::to_string(n));
        }
        total += p.rows();
    }
    Tensor c = Tensor::zeros({total, n});
    std::size_t row = 0;
    for (const Tensor& p : parts) {
        std::copy_n(p.data().data(), p.numel(), c.data().data() + row * n);
        row += p.rows();
    }
    bool any = false;
    for (const Tensor& p : parts) {
        if (detail::taping({&p})) any = true;
    }
    if (any) {
        std::vector<Tensor> pc = parts;
        Tensor cc = c;
        detail::record(c, [pc, cc, n]() mutable {
            if (!cc.has_grad()) return;
            const auto g = cc.grad();
            std::size_t row = 0;
            for (Tensor& p : pc) {
                if (p.tracked()) {
                    auto gp = p.grad();
                    for (std::size_t i = 0; i < p.numel(); ++i) gp[i] += g[row * n + i];
                }
                row += p.rows();
            }
        });
    }
    return c;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no parts");
    const std::size_t m = parts[0].rows();
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        if (p.rows() != m) {
            throw DimensionError("concat_cols: height mismatch: " + shape_str(p.shape()) +
                                 " vs height " + std::to_string(m));
        }
        total += p.cols();
    }
    Tensor c = Tensor::zeros({m, total});
    std::size_t col = 0;
    for (const Tensor& p : parts) {
        const std::size_t w = p.cols();
        for (std::size_t i = 0; i < m; ++i)
            std::copy_n(p.data().data() + i * w, w, c.data().data() + i * total + col);
        col += w;
    }
    bool any = false;
    for (const Tensor& p : parts) {
        if (detail::taping({&p})) any = true;
    }
    if (any) {
        std::vector<Tensor> pc = parts;
        Tensor cc = c;
        detail::record(c, [pc, cc, m, total]() mutable {
            if (!cc.has_grad()) return;
            const auto g = cc.grad();
            std::size_t col = 0;
            for (Tensor& p : pc) {
                const std::size_t w = p.cols();
                if (p.tracked()) {
                    auto gp = p.grad();
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * total + col + j];
                }
                col += w;
            }
        });
    }
    return c;
}

/// Elementwise product reduced to a scalar: sum_i x[i] * w[i].
inline Tensor dot(const Tensor& x, const Tensor& w) {
    if (x.numel() != w.numel()) {
        throw DimensionError("dot: element counts disagree: " + shape_str(x.shape()) + " vs " +
                             shape_str(w.shape()));
    }
    double total = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) total += x.data()[i] * w.data()[i];
    Tensor c = Tensor::scalar(total);
    if (detail::taping({&x, &w})) {
        Tensor xc = x, wc = w, cc = c;
        detail::record(c, [xc, wc, cc]() mutable {
            if (!cc.has_grad()) return;
            const double g = cc.grad()[0];
            if (xc.tracked()) {
                auto gx = xc.grad();
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * wc.data()[i];
            }
            if (wc.tracked()) {
                auto gw = wc.grad();
                for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += g * xc.data()[i];
            }
        });
    }
    return c;
}

/// Mean of -log softmax(logits)[target] over positions where mask is true.
/// Masked-out rows contribute exactly zero loss and zero gradient.
inline Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets,
                                    std::span<const std::uint8_t> mask) {
    const std::size_t n = logits.rows(), v = logits.cols();
    if (targets.size() != n || mask.size() != n) {
        throw DimensionError("softmax_cross_entropy: logits " + shape_str(logits.shape()) +
                             " need " + std::to_string(n) + " targets and mask entries, got " +
                             std::to_string(targets.size()) + "/" + std::to_string(mask.size()));
    }
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (mask[i]) {
            ++count;
            if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v) {
                throw DimensionError("softmax_cross_entropy: target id " +
                                     std::to_string(targets[i]) + " out of vocab " +
                                     std::to_string(v));
            }
        }
    }
    if (count == 0) {
        throw DataError("softmax_cross_entropy: mask excludes every position (no supervision)");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        const double* row = logits.data().data() + i * v;
        double mx = row[0];
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < v; ++j) denom += std::exp(row[j] - mx);
        total += std::log(denom) + mx - row[static_cast<std::size_t>(targets[i])];
    }
    Tensor c = Tensor::scalar(total / static_cast<double>(count));
    if (detail::taping({&logits})) {
        Tensor lc = logits, cc = c;
        std::vector<std::int32_t> tv(targets.begin(), targets.end());
        std::vector<std::uint8_t> mv(mask.begin(), mask.end());
        detail::record(c, [lc, cc, tv, mv, n, v, count]() mutable {
            if (!cc.has_grad() || !lc.tracked()) return;
            const double gscale = cc.grad()[0] / static_cast<double>(count);
            double* gl = lc.grad().data();
            const double* ld = lc.data().data();
            for (std::size_t i = 0; i < n; ++i) {
                if (!mv[i]) continue;
                const double* row = ld + i * v;
                double mx = row[0];
                for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
                double denom = 0.0;
                for (std::size_t j = 0; j < v; ++j) denom += std::exp(row[j] - mx);
                double* grow = gl + i * v;
                for (std::size_t j = 0; j < v; ++j) {
                    const double p = std::exp(row[j] - mx) / denom;
                    grow[j] += gscale * (p - (j == static_cast<std::size_t>(tv[i]) ? 1.0 : 0.0));
                }
            }
        });
    }
    return c;
}

} // namespace patchrec
