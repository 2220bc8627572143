#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "chaosbench/tensor.hpp"

namespace chaosbench {

using Var = std::int32_t;

// Reverse-mode tape. Ops execute eagerly and append a node; creation order is
// a topological order, so backward() is a single reverse sweep. Leaves can
// point at external tensors (parameters, dataset slices) so rebuilding the
// graph every step copies no parameter data. With grad recording disabled the
// tape still evaluates ops but stores no closures.
class Tape {
public:
    explicit Tape(bool grad_on = true) : grad_enabled(grad_on) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled;

    Var leaf(const Tensor* external, bool requires_grad) {
        Node n;
        n.ext = external;
        n.requires_grad = requires_grad && grad_enabled;
        nodes_.push_back(std::move(n));
        return static_cast<Var>(nodes_.size() - 1);
    }

    Var constant(Tensor v) {
        Node n;
        n.owned = std::move(v);
        nodes_.push_back(std::move(n));
        return static_cast<Var>(nodes_.size() - 1);
    }

    const Tensor& value(Var v) const {
        const Node& n = nodes_[static_cast<std::size_t>(v)];
        return n.ext ? *n.ext : n.owned;
    }

    bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v)].requires_grad; }

    // Gradient from the last backward(); zero tensor if the node never
    // received a contribution (e.g. the loss does not depend on it).
    Tensor grad_of(Var v) const {
        const Node& n = nodes_[static_cast<std::size_t>(v)];
        if (n.grad.numel() > 0) return n.grad;
        return Tensor::zeros(value(v).shape());
    }

    void backward(Var root) {
        if (value(root).numel() != 1)
            throw ContractError("backward: loss root must be scalar, got shape " + value(root).shape_str());
        run_backward(root, Tensor::scalar(1.0));
    }

    // Vector-Jacobian product with a caller-supplied seed. Used for Jacobian
    // extraction: replicate the operating point into D rows and seed I_D.
    void backward(Var root, Tensor seed) {
        if (seed.numel() != value(root).numel())
            throw ShapeError("backward: seed numel " + std::to_string(seed.numel()) +
                             " does not match root numel " + std::to_string(value(root).numel()));
        run_backward(root, std::move(seed));
    }

    void clear() { nodes_.clear(); }
    std::size_t size() const { return nodes_.size(); }

    // --- plumbing used by the op free functions ---

    Var emit(Tensor value, bool requires_grad) {
        Node n;
        n.owned = std::move(value);
        n.requires_grad = requires_grad && grad_enabled;
        nodes_.push_back(std::move(n));
        return static_cast<Var>(nodes_.size() - 1);
    }

    void set_back(Var v, std::function<void(Tape&)> fn) {
        Node& n = nodes_[static_cast<std::size_t>(v)];
        if (n.requires_grad) n.back = std::move(fn);
    }

    Tensor& grad_buf(Var v) {
        Node& n = nodes_[static_cast<std::size_t>(v)];
        if (n.grad.numel() == 0) n.grad = Tensor::zeros(value(v).shape());
        return n.grad;
    }

    const Tensor& grad_ref(Var v) const { return nodes_[static_cast<std::size_t>(v)].grad; }

private:
    struct Node {
        Tensor owned;
        const Tensor* ext = nullptr;
        Tensor grad;
        bool requires_grad = false;
        std::function<void(Tape&)> back;
    };

    void run_backward(Var root, Tensor seed) {
        for (auto& n : nodes_) n.grad = Tensor();
        nodes_[static_cast<std::size_t>(root)].grad = std::move(seed);
        for (std::int64_t i = root; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.back && n.grad.numel() > 0) n.back(*this);
        }
    }

    std::vector<Node> nodes_;
};

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and affine ops
// ---------------------------------------------------------------------------

inline Var op_add(Tape& t, Var a, Var b) {
    const Tensor &va = t.value(a), &vb = t.value(b);
    detail::check_same_shape(va, vb, "add");
    Tensor out = va;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += vb[i];
    Var self = t.emit(std::move(out), t.requires_grad(a) || t.requires_grad(b));
    t.set_back(self, [self, a, b](Tape& tp) {
        const Tensor& g = tp.grad_ref(self);
        if (tp.requires_grad(a)) {
            Tensor& ga = tp.grad_buf(a);
            for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        }
        if (tp.requires_grad(b)) {
            Tensor& gb = tp.grad_buf(b);
            for (std::int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
        }
    });
    return self;
}

inline Var op_sub(Tape& t, Var a, Var b) {
    const Tensor &va = t.value(a), &vb = t.value(b);
    detail::check_same_shape(va, vb, "sub");
    Tensor out = va;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= vb[i];
    Var self = t.emit(std::move(out), t.requires_grad(a) || t.requires_grad(b));
    t.set_back(self, [self, a, b](Tape& tp) {
        const Tensor& g = tp.grad_ref(self);
        if (tp.requires_grad(a)) {
            Tensor& ga = tp.grad_buf(a);
            for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        }
        if (tp.requires_grad(b)) {
            Tensor& gb = tp.grad_buf(b);
            for (std::int64_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
        }
    });
    return self;
}

inline Var op_mul(Tape& t, Var a, Var b) {
    const Tensor &va = t.value(a), &vb = t.value(b);
    detail::check_same_shape(va, vb, "mul");
    Tensor out = va;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= vb[i];
    Var self = t.emit(std::move(out), t.requires_grad(a) || t.requires_grad(b));
    t.set_back(self, [self, a, b](Tape& tp) {
        const Tensor& g = tp.grad_ref(self);
        const Tensor &xa = tp.value(a), &xb = tp.value(b);
        if (tp.requires_grad(a)) {
            Tensor& ga = tp.grad_buf(a);
            for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * xb[i];
        }
        if (tp.requires_grad(b)) {
            Tensor& gb = tp.grad_buf(b);
            for (std::int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * xa[i];
        }
    });
    return self;
}

inline Var op_scale(Tape& t, Var a, double c) {
    Tensor out = t.value(a);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
    Var self = t.emit(std::move(out), t.requires_grad(a));
    t.set_back(self, [self, a, c](Tape& tp) {
        const Tensor& g = tp.grad_ref(self);
        if (!tp.requires_grad(a)) return;
        Tensor& ga = tp.grad_buf(a);
        for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += c * g[i];
    });
    return self;
}

// a + c*b, the workhorse of explicit integrator stages.
inline Var op_add_scaled(Tape& t, Var a, Var b, double c) {
    const Tensor &va = t.value(a), &vb = t.value(b);
    detail::check_same_shape(va, vb, "add_scaled");
    Tensor out = va;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += c * vb[i];
    Var self = t.emit(std::move(out), t.requires_grad(a) || t.requires_grad(b));
    t.set_back(self, [self, a, b, c](Tape& tp) {
        const Tensor& g = tp.grad_ref(self);
        if (tp.requires_grad(a)) {
            Tensor& ga = tp.grad_buf(a);
            for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        }
        if (tp.requires_grad(b)) {
            Tensor& gb = tp.grad_buf(b);
            for (std::int64_t i = 0; i < g.numel(); ++i) gb[i] += c * g[i];
        }
    });
    return self;
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

inline Var op_tanh(Tape& t, Var a) {
    Tensor out = t.value(a);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
    Var self = t.emit(std::move(out), t.requires_grad(a));
    t.set_back(self, [self, a](Tape& tp) {
        const Tensor& g = tp.grad_ref(self);
        const Tensor& y = tp.value(self);
        Tensor& ga = tp.grad_buf(a);
        for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
    });
    return self;
}

inline Var op_sigmoid(Tape& t, Var a) {
    Tensor out = t.value(a);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    Var self = t.emit(std::move(out), t.requires_grad(a));
    t.set_back(self, [self, a](Tape& tp) {
        const Tensor& g = tp.grad_ref(self);
        const Tensor& y = tp.value(self);
        Tensor& ga = tp.grad_buf(a);
        for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
    });
    return self;
}

namespace detail {
inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * 0.7071067811865475244); }
inline double norm_pdf(double x) { return 0.3989422804014326779 * std::exp(-0.5 * x * x); }
}  // namespace detail

// Exact GELU, x * Phi(x) with the Gaussian CDF (no tanh approximation).
inline Var op_gelu(Tape& t, Var a) {
    const Tensor& x = t.value(a);
    Tensor out = x;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = x[i] * detail::norm_cdf(x[i]);
    Var self = t.emit(std::move(out), t.requires_grad(a));
    t.set_back(self, [self, a](Tape& tp) {
        const Tensor& g = tp.grad_ref(self);
        const Tensor& x = tp.value(a);
        Tensor& ga = tp.grad_buf(a);
        for (std::int64_t i = 0; i < g.numel(); ++i)
            ga[i] += g[i] * (detail::norm_cdf(x[i]) + x[i] * detail::norm_pdf(x[i]));
    });
    return self;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

// Plain matrix product a(M,K) * b(K,N).
inline Var op_matmul(Tape& t, Var a, Var b) {
    const Tensor &va = t.value(a), &vb = t.value(b);
    if (va.ndim() != 2 || vb.ndim() != 2 || va.dim(1) != vb.dim(0))
        throw ShapeError("matmul: incompatible " + va.shape_str() + " x " + vb.shape_str());
    const std::int64_t M = va.dim(0), K = va.dim(1), N = vb.dim(1);
    Tensor out({M, N});
    out.mat(M, N).noalias() = va.cmat(M, K) * vb.cmat(K, N);
    Var self = t.emit(std::move(out), t.requires_grad(a) || t.requires_grad(b));
    t.set_back(self, [self, a, b, M, K, N](Tape& tp) {
        const Tensor& g = tp.grad_ref(self);
        if (tp.requires_grad(a))
            tp.grad_buf(a).mat(M, K).noalias() += g.cmat(M, N) * tp.value(b).cmat(K, N).transpose();
        if (tp.requires_grad(b))
            tp.grad_buf(b).mat(K, N).noalias() += tp.value(a).cmat(M, K).transpose() * g.cmat(M, N);
    });
    return self;
}

// Affine layer y = x W^T + bias. x is (..., K) flattened to rows, W is (N, K),
// bias is (N) or pass -1 for none. Output shape is x's with last dim N.
inline Var op_linear(Tape& t, Var x, Var w, Var bias = -1) {
    const Tensor &vx = t.value(x), &vw = t.value(w);
    if (vw.ndim() != 2 || vx.last_dim() != vw.dim(1))
        throw ShapeError("linear: x " + vx.shape_str() + " vs W " + vw.shape_str());
    const std::int64_t K = vw.dim(1), N = vw.dim(0), M = vx.rows_for_last_dim();
    if (bias >= 0 && (t.value(bias).ndim() != 1 || t.value(bias).dim(0) != N))
        throw ShapeError("linear: bias " + t.value(bias).shape_str() + " vs N=" + std::to_string(N));

    std::vector<std::int64_t> oshape = vx.shape();
    oshape.back() = N;
    Tensor out(oshape);
    out.mat(M, N).noalias() = vx.cmat(M, K) * vw.cmat(N, K).transpose();
    if (bias >= 0) out.mat(M, N).rowwise() += t.value(bias).cmat(1, N).row(0);

    bool rg = t.requires_grad(x) || t.requires_grad(w) || (bias >= 0 && t.requires_grad(bias));
    Var self = t.emit(std::move(out), rg);
    t.set_back(self, [self, x, w, bias, M, K, N](Tape& tp) {
        const Tensor& g = tp.grad_ref(self);
        if (tp.requires_grad(x))
            tp.grad_buf(x).mat(M, K).noalias() += g.cmat(M, N) * tp.value(w).cmat(N, K);
        if (tp.requires_grad(w))
            tp.grad_buf(w).mat(N, K).noalias() += g.cmat(M, N).transpose() * tp.value(x).cmat(M, K);
        if (bias >= 0 && tp.requires_grad(bias))
            tp.grad_buf(bias).mat(1, N).row(0) += g.cmat(M, N).colwise().sum();
    });
    return self;
}

// ---------------------------------------------------------------------------
// Shape ops (last-dim concat/slice; features live on the last axis)
// ---------------------------------------------------------------------------

inline Var op_concat_last(Tape& t, Var a, Var b) {
    const Tensor &va = t.value(a), &vb = t.value(b);
    if (va.ndim() != vb.ndim()) throw ShapeError("concat_last: rank mismatch");
    for (int i = 0; i + 1 < va.ndim(); ++i)
        if (va.dim(i) != vb.dim(i)) throw ShapeError("concat_last: leading dims differ");
    const std::int64_t M = va.rows_for_last_dim(), Na = va.last_dim(), Nb = vb.last_dim();
    std::vector<std::int64_t> oshape = va.shape();
    oshape.back() = Na + Nb;
    Tensor out(oshape);
    for (std::int64_t r = 0; r < M; ++r) {
        double* dst = out.data() + r * (Na + Nb);
        const double* pa = va.data() + r * Na;
        const double* pb = vb.data() + r * Nb;
        for (std::int64_t i = 0; i < Na; ++i) dst[i] = pa[i];
        for (std::int64_t i = 0; i < Nb; ++i) dst[Na + i] = pb[i];
    }
    Var self = t.emit(std::move(out), t.requires_grad(a) || t.requires_grad(b));
    t.set_back(self, [self, a, b, M, Na, Nb](Tape& tp) {
        const Tensor& g = tp.grad_ref(self);
        if (tp.requires_grad(a)) {
            Tensor& ga = tp.grad_buf(a);
            for (std::int64_t r = 0; r < M; ++r)
                for (std::int64_t i = 0; i < Na; ++i) ga[r * Na + i] += g[r * (Na + Nb) + i];
        }
        if (tp.requires_grad(b)) {
            Tensor& gb = tp.grad_buf(b);
            for (std::int64_t r = 0; r < M; ++r)
                for (std::int64_t i = 0; i < Nb; ++i) gb[r * Nb + i] += g[r * (Na + Nb) + Na + i];
        }
    });
    return self;
}

inline Var op_slice_last(Tape& t, Var a, std::int64_t off, std::int64_t len) {
    const Tensor& va = t.value(a);
    const std::int64_t N = va.last_dim(), M = va.rows_for_last_dim();
    if (off < 0 || len <= 0 || off + len > N)
        throw ShapeError("slice_last: [" + std::to_string(off) + "," + std::to_string(off + len) +
                         ") out of last dim " + std::to_string(N));
    std::vector<std::int64_t> oshape = va.shape();
    oshape.back() = len;
    Tensor out(oshape);
    for (std::int64_t r = 0; r < M; ++r)
        for (std::int64_t i = 0; i < len; ++i) out[r * len + i] = va[r * N + off + i];
    Var self = t.emit(std::move(out), t.requires_grad(a));
    t.set_back(self, [self, a, off, len, M, N](Tape& tp) {
        const Tensor& g = tp.grad_ref(self);
        if (!tp.requires_grad(a)) return;
        Tensor& ga = tp.grad_buf(a);
        for (std::int64_t r = 0; r < M; ++r)
            for (std::int64_t i = 0; i < len; ++i) ga[r * N + off + i] += g[r * len + i];
    });
    return self;
}

// Same storage under a new shape (row-major numel must match).
inline Var op_reshape(Tape& t, Var a, std::vector<std::int64_t> shape) {
    const Tensor& va = t.value(a);
    Tensor out = va.reshaped(shape);
    Var self = t.emit(std::move(out), t.requires_grad(a));
    t.set_back(self, [self, a](Tape& tp) {
        if (!tp.requires_grad(a)) return;
        const Tensor& g = tp.grad_ref(self);
        Tensor& ga = tp.grad_buf(a);
        for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    });
    return self;
}

// Stack R same-shape tensors along a new leading axis; inverse used when a
// recurrent readout must become a (T, ...) sequence tensor.
inline Var op_stack_rows(Tape& t, const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("stack_rows: empty");
    const Tensor& first = t.value(parts[0]);
    const std::int64_t per = first.numel();
    bool rg = false;
    for (Var p : parts) {
        detail::check_same_shape(t.value(p), first, "stack_rows");
        rg = rg || t.requires_grad(p);
    }
    std::vector<std::int64_t> oshape;
    oshape.push_back(static_cast<std::int64_t>(parts.size()));
    for (auto d : first.shape()) oshape.push_back(d);
    Tensor out(oshape);
    for (std::size_t r = 0; r < parts.size(); ++r) {
        const Tensor& v = t.value(parts[r]);
        for (std::int64_t i = 0; i < per; ++i) out[static_cast<std::int64_t>(r) * per + i] = v[i];
    }
    Var self = t.emit(std::move(out), rg);
    t.set_back(self, [self, parts, per](Tape& tp) {
        const Tensor& g = tp.grad_ref(self);
        for (std::size_t r = 0; r < parts.size(); ++r) {
            if (!tp.requires_grad(parts[r])) continue;
            Tensor& gp = tp.grad_buf(parts[r]);
            for (std::int64_t i = 0; i < per; ++i) gp[i] += g[static_cast<std::int64_t>(r) * per + i];
        }
    });
    return self;
}

// Extract the time-tidx slice of a (B, T, C) sequence as (B, C).
inline Var op_time_slice(Tape& t, Var x, std::int64_t tidx) {
    const Tensor& vx = t.value(x);
    if (vx.ndim() != 3) throw ShapeError("time_slice: need (B,T,C), got " + vx.shape_str());
    const std::int64_t B = vx.dim(0), T = vx.dim(1), C = vx.dim(2);
    if (tidx < 0 || tidx >= T) throw ShapeError("time_slice: index out of range");
    Tensor out({B, C});
    for (std::int64_t b = 0; b < B; ++b) {
        const double* src = vx.data() + (b * T + tidx) * C;
        double* dst = out.data() + b * C;
        for (std::int64_t i = 0; i < C; ++i) dst[i] = src[i];
    }
    Var self = t.emit(std::move(out), t.requires_grad(x));
    t.set_back(self, [self, x, tidx, B, T, C](Tape& tp) {
        if (!tp.requires_grad(x)) return;
        const Tensor& g = tp.grad_ref(self);
        Tensor& gx = tp.grad_buf(x);
        for (std::int64_t b = 0; b < B; ++b) {
            double* dst = gx.data() + (b * T + tidx) * C;
            const double* src = g.data() + b * C;
            for (std::int64_t i = 0; i < C; ++i) dst[i] += src[i];
        }
    });
    return self;
}

// Stack T tensors of shape (B, C) into a (B, T, C) sequence.
inline Var op_stack_time(Tape& t, const std::vector<Var>& steps) {
    if (steps.empty()) throw ShapeError("stack_time: empty");
    const Tensor& first = t.value(steps[0]);
    if (first.ndim() != 2) throw ShapeError("stack_time: steps must be (B,C)");
    const std::int64_t B = first.dim(0), C = first.dim(1);
    const std::int64_t T = static_cast<std::int64_t>(steps.size());
    bool rg = false;
    for (Var s : steps) {
        detail::check_same_shape(t.value(s), first, "stack_time");
        rg = rg || t.requires_grad(s);
    }
    Tensor out({B, T, C});
    for (std::int64_t k = 0; k < T; ++k) {
        const Tensor& v = t.value(steps[static_cast<std::size_t>(k)]);
        for (std::int64_t b = 0; b < B; ++b) {
            double* dst = out.data() + (b * T + k) * C;
            const double* src = v.data() + b * C;
            for (std::int64_t i = 0; i < C; ++i) dst[i] = src[i];
        }
    }
    Var self = t.emit(std::move(out), rg);
    t.set_back(self, [self, steps, B, T, C](Tape& tp) {
        const Tensor& g = tp.grad_ref(self);
        for (std::int64_t k = 0; k < T; ++k) {
            Var s = steps[static_cast<std::size_t>(k)];
            if (!tp.requires_grad(s)) continue;
            Tensor& gs = tp.grad_buf(s);
            for (std::int64_t b = 0; b < B; ++b) {
                double* dst = gs.data() + b * C;
                const double* src = g.data() + (b * T + k) * C;
                for (std::int64_t i = 0; i < C; ++i) dst[i] += src[i];
            }
        }
    });
    return self;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Var op_sum_all(Tape& t, Var a) {
    const Tensor& va = t.value(a);
    double s = 0.0;
    for (std::int64_t i = 0; i < va.numel(); ++i) s += va[i];
    Var self = t.emit(Tensor::scalar(s), t.requires_grad(a));
    t.set_back(self, [self, a](Tape& tp) {
        const double g = tp.grad_ref(self)[0];
        if (!tp.requires_grad(a)) return;
        Tensor& ga = tp.grad_buf(a);
        for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] += g;
    });
    return self;
}

inline Var op_mean_all(Tape& t, Var a) {
    const std::int64_t n = t.value(a).numel();
    return op_scale(t, op_sum_all(t, a), 1.0 / static_cast<double>(n));
}

// Sum of squares of every element.
inline Var op_sqnorm(Tape& t, Var a) {
    const Tensor& va = t.value(a);
    double s = 0.0;
    for (std::int64_t i = 0; i < va.numel(); ++i) s += va[i] * va[i];
    Var self = t.emit(Tensor::scalar(s), t.requires_grad(a));
    t.set_back(self, [self, a](Tape& tp) {
        const double g = tp.grad_ref(self)[0];
        if (!tp.requires_grad(a)) return;
        const Tensor& x = tp.value(a);
        Tensor& ga = tp.grad_buf(a);
        for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] += 2.0 * g * x[i];
    });
    return self;
}

// Per-row sum of squares: view a as (rows, numel/rows), return (rows).
// Gives losses a reduction whose order within a row is fixed no matter how
// rows are later combined.
inline Var op_sqnorm_rows(Tape& t, Var a, std::int64_t rows) {
    const Tensor& va = t.value(a);
    if (rows <= 0 || va.numel() % rows != 0)
        throw ShapeError("sqnorm_rows: rows=" + std::to_string(rows) + " does not divide " + va.shape_str());
    const std::int64_t per = va.numel() / rows;
    Tensor out({rows});
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* p = va.data() + r * per;
        double s = 0.0;
        for (std::int64_t i = 0; i < per; ++i) s += p[i] * p[i];
        out[r] = s;
    }
    Var self = t.emit(std::move(out), t.requires_grad(a));
    t.set_back(self, [self, a, rows, per](Tape& tp) {
        if (!tp.requires_grad(a)) return;
        const Tensor& g = tp.grad_ref(self);
        const Tensor& x = tp.value(a);
        Tensor& ga = tp.grad_buf(a);
        for (std::int64_t r = 0; r < rows; ++r) {
            const double gr = 2.0 * g[r];
            const double* px = x.data() + r * per;
            double* pg = ga.data() + r * per;
            for (std::int64_t i = 0; i < per; ++i) pg[i] += gr * px[i];
        }
    });
    return self;
}

// ---------------------------------------------------------------------------
// Convolutions (channels-last layout throughout)
// ---------------------------------------------------------------------------

// Dilated causal 1-D convolution. x is (B, T, Cin), weight is (Cout, k*Cin)
// with tap index j running over past-to-present offsets (j = k-1 is "now",
// tap j reads time t - (k-1-j)*dilation), bias is (Cout) or -1. Output
// (B, T, Cout); positions before the start read implicit zeros, so out[t]
// depends only on inputs at times <= t.
inline Var op_conv1d_causal(Tape& t, Var x, Var w, Var bias, int kernel, int dilation) {
    const Tensor &vx = t.value(x), &vw = t.value(w);
    if (vx.ndim() != 3) throw ShapeError("conv1d_causal: x must be (B,T,Cin), got " + vx.shape_str());
    const std::int64_t B = vx.dim(0), T = vx.dim(1), Cin = vx.dim(2);
    if (vw.ndim() != 2 || vw.dim(1) != static_cast<std::int64_t>(kernel) * Cin)
        throw ShapeError("conv1d_causal: weight " + vw.shape_str() + " vs k*Cin=" +
                         std::to_string(kernel * Cin));
    const std::int64_t Cout = vw.dim(0);
    if (bias >= 0 && t.value(bias).numel() != Cout) throw ShapeError("conv1d_causal: bias size");
    if (dilation < 1 || kernel < 1) throw ConfigError("conv1d_causal: kernel/dilation must be >= 1");

    const std::int64_t M = B * T, CK = static_cast<std::int64_t>(kernel) * Cin;
    Tensor col({M, CK});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t ti = 0; ti < T; ++ti) {
            double* dst = col.data() + (b * T + ti) * CK;
            for (int j = 0; j < kernel; ++j) {
                const std::int64_t src_t = ti - static_cast<std::int64_t>(kernel - 1 - j) * dilation;
                if (src_t < 0) {
                    for (std::int64_t c = 0; c < Cin; ++c) dst[j * Cin + c] = 0.0;
                } else {
                    const double* src = vx.data() + (b * T + src_t) * Cin;
                    for (std::int64_t c = 0; c < Cin; ++c) dst[j * Cin + c] = src[c];
                }
            }
        }

    Tensor out({B, T, Cout});
    out.mat(M, Cout).noalias() = col.cmat(M, CK) * vw.cmat(Cout, CK).transpose();
    if (bias >= 0) out.mat(M, Cout).rowwise() += t.value(bias).cmat(1, Cout).row(0);

    bool rg = t.requires_grad(x) || t.requires_grad(w) || (bias >= 0 && t.requires_grad(bias));
    Var self = t.emit(std::move(out), rg);
    // col is recomputed in backward for weight grads only when needed; for x
    // grads the scatter is cheap. Keeping col alive for every layer of a deep
    // TCN over a long sequence would dominate memory, so trade FLOPs for RAM.
    t.set_back(self, [self, x, w, bias, kernel, dilation, B, T, Cin, Cout, M, CK](Tape& tp) {
        const Tensor& g = tp.grad_ref(self);
        if (tp.requires_grad(w)) {
            const Tensor& vx2 = tp.value(x);
            Tensor col2({M, CK});
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t ti = 0; ti < T; ++ti) {
                    double* dst = col2.data() + (b * T + ti) * CK;
                    for (int j = 0; j < kernel; ++j) {
                        const std::int64_t src_t = ti - static_cast<std::int64_t>(kernel - 1 - j) * dilation;
                        if (src_t < 0) {
                            for (std::int64_t c = 0; c < Cin; ++c) dst[j * Cin + c] = 0.0;
                        } else {
                            const double* src = vx2.data() + (b * T + src_t) * Cin;
                            for (std::int64_t c = 0; c < Cin; ++c) dst[j * Cin + c] = src[c];
                        }
                    }
                }
            tp.grad_buf(w).mat(Cout, CK).noalias() += g.cmat(M, Cout).transpose() * col2.cmat(M, CK);
        }
        if (tp.requires_grad(x)) {
            Tensor dcol({M, CK});
            dcol.mat(M, CK).noalias() = g.cmat(M, Cout) * tp.value(w).cmat(Cout, CK);
            Tensor& gx = tp.grad_buf(x);
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t ti = 0; ti < T; ++ti) {
                    const double* src = dcol.data() + (b * T + ti) * CK;
                    for (int j = 0; j < kernel; ++j) {
                        const std::int64_t src_t = ti - static_cast<std::int64_t>(kernel - 1 - j) * dilation;
                        if (src_t < 0) continue;
                        double* dst = gx.data() + (b * T + src_t) * Cin;
                        for (std::int64_t c = 0; c < Cin; ++c) dst[c] += src[j * Cin + c];
                    }
                }
        }
        if (bias >= 0 && tp.requires_grad(bias))
            tp.grad_buf(bias).mat(1, Cout).row(0) += g.cmat(M, Cout).colwise().sum();
    });
    return self;
}

// Strided 2-D convolution. x is (B, H, W, Cin); weight is (Cout, kh*kw*Cin)
// flattened as (ky*kw + kx)*Cin + ci; zero padding `pad` on all sides.
inline Var op_conv2d(Tape& t, Var x, Var w, Var bias, int kh, int kw, int stride, int pad) {
    const Tensor &vx = t.value(x), &vw = t.value(w);
    if (vx.ndim() != 4) throw ShapeError("conv2d: x must be (B,H,W,Cin), got " + vx.shape_str());
    const std::int64_t B = vx.dim(0), H = vx.dim(1), W = vx.dim(2), Cin = vx.dim(3);
    const std::int64_t CK = static_cast<std::int64_t>(kh) * kw * Cin;
    if (vw.ndim() != 2 || vw.dim(1) != CK)
        throw ShapeError("conv2d: weight " + vw.shape_str() + " vs kh*kw*Cin=" + std::to_string(CK));
    const std::int64_t Cout = vw.dim(0);
    const std::int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    const std::int64_t Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw ShapeError("conv2d: empty output");
    if (bias >= 0 && t.value(bias).numel() != Cout) throw ShapeError("conv2d: bias size");

    const std::int64_t M = B * Ho * Wo;
    Tensor col({M, CK});
    {
        double* cp = col.data();
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t oy = 0; oy < Ho; ++oy)
                for (std::int64_t ox = 0; ox < Wo; ++ox) {
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            const std::int64_t iy = oy * stride - pad + ky;
                            const std::int64_t ix = ox * stride - pad + kx;
                            double* dst = cp + (static_cast<std::int64_t>(ky) * kw + kx) * Cin;
                            if (iy < 0 || iy >= H || ix < 0 || ix >= W) {
                                for (std::int64_t c = 0; c < Cin; ++c) dst[c] = 0.0;
                            } else {
                                const double* src = vx.data() + ((b * H + iy) * W + ix) * Cin;
                                for (std::int64_t c = 0; c < Cin; ++c) dst[c] = src[c];
                            }
                        }
                    cp += CK;
                }
    }

    Tensor out({B, Ho, Wo, Cout});
    out.mat(M, Cout).noalias() = col.cmat(M, CK) * vw.cmat(Cout, CK).transpose();
    if (bias >= 0) out.mat(M, Cout).rowwise() += t.value(bias).cmat(1, Cout).row(0);

    bool rg = t.requires_grad(x) || t.requires_grad(w) || (bias >= 0 && t.requires_grad(bias));
    Var self = t.emit(std::move(out), rg);
    t.set_back(self, [self, x, w, bias, kh, kw, stride, pad, B, H, W, Cin, Cout, Ho, Wo, M, CK](Tape& tp) {
        const Tensor& g = tp.grad_ref(self);
        if (tp.requires_grad(w)) {
            const Tensor& vx2 = tp.value(x);
            Tensor col2({M, CK});
            double* cp = col2.data();
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t oy = 0; oy < Ho; ++oy)
                    for (std::int64_t ox = 0; ox < Wo; ++ox) {
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                const std::int64_t iy = oy * stride - pad + ky;
                                const std::int64_t ix = ox * stride - pad + kx;
                                double* dst = cp + (static_cast<std::int64_t>(ky) * kw + kx) * Cin;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) {
                                    for (std::int64_t c = 0; c < Cin; ++c) dst[c] = 0.0;
                                } else {
                                    const double* src = vx2.data() + ((b * H + iy) * W + ix) * Cin;
                                    for (std::int64_t c = 0; c < Cin; ++c) dst[c] = src[c];
                                }
                            }
                        cp += CK;
                    }
            tp.grad_buf(w).mat(Cout, CK).noalias() += g.cmat(M, Cout).transpose() * col2.cmat(M, CK);
        }
        if (tp.requires_grad(x)) {
            Tensor dcol({M, CK});
            dcol.mat(M, CK).noalias() = g.cmat(M, Cout) * tp.value(w).cmat(Cout, CK);
            Tensor& gx = tp.grad_buf(x);
            const double* cp = dcol.data();
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t oy = 0; oy < Ho; ++oy)
                    for (std::int64_t ox = 0; ox < Wo; ++ox) {
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                const std::int64_t iy = oy * stride - pad + ky;
                                const std::int64_t ix = ox * stride - pad + kx;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                const double* src = cp + (static_cast<std::int64_t>(ky) * kw + kx) * Cin;
                                double* dst = gx.data() + ((b * H + iy) * W + ix) * Cin;
                                for (std::int64_t c = 0; c < Cin; ++c) dst[c] += src[c];
                            }
                        cp += CK;
                    }
        }
        if (bias >= 0 && tp.requires_grad(bias))
            tp.grad_buf(bias).mat(1, Cout).row(0) += g.cmat(M, Cout).colwise().sum();
    });
    return self;
}

// Transposed 2-D convolution (the gradient of conv2d w.r.t. its input, used
// as a learnable upsampler). x is (B, H, W, Cin); weight is
// (Cin, kh*kw*Cout) flattened as (ky*kw + kx)*Cout + co. Output spatial size
// is (H-1)*stride - 2*pad + kh + out_pad.
inline Var op_conv2d_transpose(Tape& t, Var x, Var w, Var bias, int kh, int kw, int stride,
                               int pad, int out_pad) {
    const Tensor &vx = t.value(x), &vw = t.value(w);
    if (vx.ndim() != 4) throw ShapeError("conv2d_transpose: x must be (B,H,W,Cin)");
    const std::int64_t B = vx.dim(0), H = vx.dim(1), W = vx.dim(2), Cin = vx.dim(3);
    if (vw.ndim() != 2 || vw.dim(0) != Cin)
        throw ShapeError("conv2d_transpose: weight " + vw.shape_str() + " vs Cin=" + std::to_string(Cin));
    const std::int64_t CK = vw.dim(1);
    if (CK % (static_cast<std::int64_t>(kh) * kw) != 0)
        throw ShapeError("conv2d_transpose: weight cols not divisible by kh*kw");
    const std::int64_t Cout = CK / (static_cast<std::int64_t>(kh) * kw);
    const std::int64_t Ho = (H - 1) * stride - 2 * pad + kh + out_pad;
    const std::int64_t Wo = (W - 1) * stride - 2 * pad + kw + out_pad;
    if (Ho <= 0 || Wo <= 0) throw ShapeError("conv2d_transpose: empty output");
    if (bias >= 0 && t.value(bias).numel() != Cout) throw ShapeError("conv2d_transpose: bias size");

    const std::int64_t M = B * H * W;
    Tensor cols({M, CK});
    cols.mat(M, CK).noalias() = vx.cmat(M, Cin) * vw.cmat(Cin, CK);

    Tensor out({B, Ho, Wo, Cout});
    {
        const double* cp = cols.data();
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t iy = 0; iy < H; ++iy)
                for (std::int64_t ix = 0; ix < W; ++ix) {
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            const std::int64_t oy = iy * stride - pad + ky;
                            const std::int64_t ox = ix * stride - pad + kx;
                            if (oy < 0 || oy >= Ho || ox < 0 || ox >= Wo) continue;
                            const double* src = cp + (static_cast<std::int64_t>(ky) * kw + kx) * Cout;
                            double* dst = out.data() + ((b * Ho + oy) * Wo + ox) * Cout;
                            for (std::int64_t c = 0; c < Cout; ++c) dst[c] += src[c];
                        }
                    cp += CK;
                }
    }
    if (bias >= 0) out.mat(B * Ho * Wo, Cout).rowwise() += t.value(bias).cmat(1, Cout).row(0);

    bool rg = t.requires_grad(x) || t.requires_grad(w) || (bias >= 0 && t.requires_grad(bias));
    Var self = t.emit(std::move(out), rg);
    t.set_back(self, [self, x, w, bias, kh, kw, stride, pad, B, H, W, Cin, Cout, Ho, Wo, M, CK](Tape& tp) {
        const Tensor& g = tp.grad_ref(self);
        // Gather the output grad back into column form; this is the exact
        // adjoint of the scatter above.
        Tensor dcols({M, CK});
        double* cp = dcols.data();
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t iy = 0; iy < H; ++iy)
                for (std::int64_t ix = 0; ix < W; ++ix) {
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            const std::int64_t oy = iy * stride - pad + ky;
                            const std::int64_t ox = ix * stride - pad + kx;
                            double* dst = cp + (static_cast<std::int64_t>(ky) * kw + kx) * Cout;
                            if (oy < 0 || oy >= Ho || ox < 0 || ox >= Wo) {
                                for (std::int64_t c = 0; c < Cout; ++c) dst[c] = 0.0;
                            } else {
                                const double* src = g.data() + ((b * Ho + oy) * Wo + ox) * Cout;
                                for (std::int64_t c = 0; c < Cout; ++c) dst[c] = src[c];
                            }
                        }
                    cp += CK;
                }
        if (tp.requires_grad(x))
            tp.grad_buf(x).mat(M, Cin).noalias() += dcols.cmat(M, CK) * tp.value(w).cmat(Cin, CK).transpose();
        if (tp.requires_grad(w))
            tp.grad_buf(w).mat(Cin, CK).noalias() += tp.value(x).cmat(M, Cin).transpose() * dcols.cmat(M, CK);
        if (bias >= 0 && tp.requires_grad(bias))
            tp.grad_buf(bias).mat(1, Cout).row(0) += g.cmat(B * Ho * Wo, Cout).colwise().sum();
    });
    return self;
}

}  // namespace chaosbench
