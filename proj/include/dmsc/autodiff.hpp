// Copyright 2026 the dmsc authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dmsc/errors.hpp"
#include "dmsc/tensor.hpp"

namespace dmsc {

/// Epsilon guarding denominators and roots throughout the library.
inline constexpr double kEps = 1e-8;

struct Var;
using VarPtr = std::shared_ptr<Var>;

/// Node of the dynamic computation graph. Holds the forward value, the
/// accumulated gradient, and a closure that scatters this node's gradient
/// into its parents. Graphs are rebuilt every forward pass; backward walks
/// the node's ancestors in reverse topological order.
struct Var {
    Tensor value;
    std::vector<double> grad;  // sized lazily on first accumulation
    bool requires_grad = false;
    bool backward_done = false;  // set on the node backward() was called on
    std::vector<VarPtr> parents;
    std::function<void(const Var&)> backprop;
    std::string name;  // non-empty for named parameters

    void ensure_grad() {
        if (grad.size() != value.numel()) grad.assign(value.numel(), 0.0);
    }
    void zero_grad() {
        grad.assign(value.numel(), 0.0);
        backward_done = false;
    }
};

/// Leaf that does not participate in differentiation.
inline VarPtr constant(Tensor v) {
    auto n = std::make_shared<Var>();
    n->value = std::move(v);
    return n;
}

/// Trainable leaf.
inline VarPtr parameter(Tensor v, std::string name) {
    auto n = std::make_shared<Var>();
    n->value = std::move(v);
    n->requires_grad = true;
    n->name = std::move(name);
    return n;
}

namespace detail {

inline VarPtr make_op(const char* op, Tensor out, std::vector<VarPtr> parents,
                      std::function<void(const Var&)> backprop) {
    check_finite(out, op);
    auto n = std::make_shared<Var>();
    n->value = std::move(out);
    for (const auto& p : parents) {
        if (p->requires_grad) {
            n->requires_grad = true;
            break;
        }
    }
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
    }
    return n;
}

inline double guarded(double denom) {
    if (std::fabs(denom) < kEps) return denom < 0.0 ? -kEps : kEps;
    return denom;
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw DimError(std::string(op) + ": shapes " + a.shape_str() + " and " + b.shape_str() +
                       " are incompatible");
    }
}

inline void require_rowvec(const char* op, const Tensor& m, const Tensor& v) {
    if (m.rank() != 2 || v.rank() != 1 || v.numel() != m.rows()) {
        throw DimError(std::string(op) + ": expected matrix " + m.shape_str() +
                       " with per-row vector of length " + std::to_string(m.rows()) + ", got " +
                       v.shape_str());
    }
}

inline void require_colvec(const char* op, const Tensor& m, const Tensor& v) {
    if (m.rank() != 2 || v.rank() != 1 || v.numel() != m.cols()) {
        throw DimError(std::string(op) + ": expected matrix " + m.shape_str() +
                       " with per-column vector of length " + std::to_string(m.cols()) +
                       ", got " + v.shape_str());
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops (equal shapes)
// ---------------------------------------------------------------------------

inline VarPtr add(const VarPtr& a, const VarPtr& b) {
    detail::require_same_shape("add", a->value, b->value);
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) += b->value.at(i);
    return detail::make_op("add", std::move(out), {a, b}, [a, b](const Var& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) b->grad[i] += self.grad[i];
        }
    });
}

inline VarPtr sub(const VarPtr& a, const VarPtr& b) {
    detail::require_same_shape("sub", a->value, b->value);
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) -= b->value.at(i);
    return detail::make_op("sub", std::move(out), {a, b}, [a, b](const Var& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) b->grad[i] -= self.grad[i];
        }
    });
}

inline VarPtr mul(const VarPtr& a, const VarPtr& b) {
    detail::require_same_shape("mul", a->value, b->value);
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) *= b->value.at(i);
    return detail::make_op("mul", std::move(out), {a, b}, [a, b](const Var& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                a->grad[i] += self.grad[i] * b->value.at(i);
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                b->grad[i] += self.grad[i] * a->value.at(i);
        }
    });
}

/// Elementwise division; denominators below kEps in magnitude are clamped to
/// +/-kEps in both the forward value and the backward rule.
inline VarPtr div(const VarPtr& a, const VarPtr& b) {
    detail::require_same_shape("div", a->value, b->value);
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) /= detail::guarded(b->value.at(i));
    return detail::make_op("div", std::move(out), {a, b}, [a, b](const Var& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                a->grad[i] += self.grad[i] / detail::guarded(b->value.at(i));
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double d = detail::guarded(b->value.at(i));
                b->grad[i] -= self.grad[i] * a->value.at(i) / (d * d);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Broadcast ops: matrix [R x C] combined with a per-row vector [R] (the value
// applies to a whole row, i.e. per channel across frames) or a per-column
// vector [C].
// ---------------------------------------------------------------------------

namespace detail {

template <typename Fwd, typename BackM, typename BackV>
VarPtr rowvec_op(const char* op, const VarPtr& m, const VarPtr& v, Fwd fwd, BackM back_m,
                 BackV back_v) {
    require_rowvec(op, m->value, v->value);
    const std::size_t rows = m->value.rows(), cols = m->value.cols();
    Tensor out({rows, cols});
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j)
            out.at(i, j) = fwd(m->value.at(i, j), v->value.at(i));
    return make_op(op, std::move(out), {m, v}, [m, v, rows, cols, back_m, back_v](const Var& self) {
        if (m->requires_grad) {
            m->ensure_grad();
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j)
                    m->grad[i * cols + j] += back_m(self.grad[i * cols + j], m->value.at(i, j),
                                                    v->value.at(i));
        }
        if (v->requires_grad) {
            v->ensure_grad();
            for (std::size_t i = 0; i < rows; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < cols; ++j)
                    acc += back_v(self.grad[i * cols + j], m->value.at(i, j), v->value.at(i));
                v->grad[i] += acc;
            }
        }
    });
}

template <typename Fwd, typename BackM, typename BackV>
VarPtr colvec_op(const char* op, const VarPtr& m, const VarPtr& v, Fwd fwd, BackM back_m,
                 BackV back_v) {
    require_colvec(op, m->value, v->value);
    const std::size_t rows = m->value.rows(), cols = m->value.cols();
    Tensor out({rows, cols});
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j)
            out.at(i, j) = fwd(m->value.at(i, j), v->value.at(j));
    return make_op(op, std::move(out), {m, v}, [m, v, rows, cols, back_m, back_v](const Var& self) {
        if (m->requires_grad) {
            m->ensure_grad();
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j)
                    m->grad[i * cols + j] += back_m(self.grad[i * cols + j], m->value.at(i, j),
                                                    v->value.at(j));
        }
        if (v->requires_grad) {
            v->ensure_grad();
            for (std::size_t j = 0; j < cols; ++j) {
                double acc = 0.0;
                for (std::size_t i = 0; i < rows; ++i)
                    acc += back_v(self.grad[i * cols + j], m->value.at(i, j), v->value.at(j));
                v->grad[j] += acc;
            }
        }
    });
}

}  // namespace detail

inline VarPtr add_rowvec(const VarPtr& m, const VarPtr& v) {
    return detail::rowvec_op(
        "add_rowvec", m, v, [](double x, double y) { return x + y; },
        [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

inline VarPtr sub_rowvec(const VarPtr& m, const VarPtr& v) {
    return detail::rowvec_op(
        "sub_rowvec", m, v, [](double x, double y) { return x - y; },
        [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

inline VarPtr mul_rowvec(const VarPtr& m, const VarPtr& v) {
    return detail::rowvec_op(
        "mul_rowvec", m, v, [](double x, double y) { return x * y; },
        [](double g, double, double y) { return g * y; },
        [](double g, double x, double) { return g * x; });
}

inline VarPtr div_rowvec(const VarPtr& m, const VarPtr& v) {
    return detail::rowvec_op(
        "div_rowvec", m, v, [](double x, double y) { return x / detail::guarded(y); },
        [](double g, double, double y) { return g / detail::guarded(y); },
        [](double g, double x, double y) {
            const double d = detail::guarded(y);
            return -g * x / (d * d);
        });
}

inline VarPtr sub_colvec(const VarPtr& m, const VarPtr& v) {
    return detail::colvec_op(
        "sub_colvec", m, v, [](double x, double y) { return x - y; },
        [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

inline VarPtr div_colvec(const VarPtr& m, const VarPtr& v) {
    return detail::colvec_op(
        "div_colvec", m, v, [](double x, double y) { return x / detail::guarded(y); },
        [](double g, double, double y) { return g / detail::guarded(y); },
        [](double g, double x, double y) {
            const double d = detail::guarded(y);
            return -g * x / (d * d);
        });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

inline VarPtr relu(const VarPtr& a) {
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = std::max(0.0, out.at(i));
    return detail::make_op("relu", std::move(out), {a}, [a](const Var& self) {
        a->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (a->value.at(i) > 0.0) a->grad[i] += self.grad[i];
    });
}

/// Square root; the derivative's denominator is guarded with kEps.
inline VarPtr sqrt(const VarPtr& a) {
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = std::sqrt(out.at(i));
    return detail::make_op("sqrt", std::move(out), {a}, [a](const Var& self) {
        a->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            a->grad[i] += self.grad[i] * 0.5 / std::sqrt(a->value.at(i) + kEps);
    });
}

inline VarPtr log(const VarPtr& a) {
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = std::log(out.at(i));
    return detail::make_op("log", std::move(out), {a}, [a](const Var& self) {
        a->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            a->grad[i] += self.grad[i] / detail::guarded(a->value.at(i));
    });
}

inline VarPtr exp(const VarPtr& a) {
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = std::exp(out.at(i));
    return detail::make_op("exp", std::move(out), {a}, [a](const Var& self) {
        a->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            a->grad[i] += self.grad[i] * std::exp(a->value.at(i));
    });
}

inline VarPtr pow_const(const VarPtr& a, double p) {
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = std::pow(out.at(i), p);
    return detail::make_op("pow", std::move(out), {a}, [a, p](const Var& self) {
        a->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            a->grad[i] += self.grad[i] * p * std::pow(a->value.at(i), p - 1.0);
    });
}

inline VarPtr scale(const VarPtr& a, double c) {
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) *= c;
    return detail::make_op("scale", std::move(out), {a}, [a, c](const Var& self) {
        a->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i] * c;
    });
}

inline VarPtr add_scalar(const VarPtr& a, double c) {
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) += c;
    return detail::make_op("add_scalar", std::move(out), {a}, [a](const Var& self) {
        a->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
    });
}

/// Clamp to [lo, hi]; gradient passes through only where the input was
/// strictly inside the interval boundaries it got clipped against.
inline VarPtr clamp(const VarPtr& a, double lo, double hi) {
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = std::clamp(out.at(i), lo, hi);
    return detail::make_op("clamp", std::move(out), {a}, [a, lo, hi](const Var& self) {
        a->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double x = a->value.at(i);
            if (x >= lo && x <= hi) a->grad[i] += self.grad[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline VarPtr matmul(const VarPtr& a, const VarPtr& b) {
    const Tensor& A = a->value;
    const Tensor& B = b->value;
    if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) {
        throw DimError("matmul: shapes " + A.shape_str() + " and " + B.shape_str() +
                       " are incompatible");
    }
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = A.at(i, p);
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out.at(i, j) += av * B.at(p, j);
        }
    return detail::make_op("matmul", std::move(out), {a, b}, [a, b, m, k, n](const Var& self) {
        // grad_a = g . b^T ; grad_b = a^T . g
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j)
                        acc += self.grad[i * n + j] * b->value.at(p, j);
                    a->grad[i * k + p] += acc;
                }
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t p = 0; p < k; ++p)
                for (std::size_t i = 0; i < m; ++i) {
                    const double av = a->value.at(i, p);
                    if (av == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j)
                        b->grad[p * n + j] += av * self.grad[i * n + j];
                }
        }
    });
}

/// Temporal cross-correlation with symmetric zero padding so the output has
/// the same number of frames as the input. x is [C_in x T], w is
/// [C_out x C_in x K] with K odd; the tap offsets are (k - (K-1)/2)*dilation.
inline VarPtr conv1d(const VarPtr& x, const VarPtr& w, std::size_t dilation) {
    const Tensor& X = x->value;
    const Tensor& W = w->value;
    if (X.rank() != 2 || W.rank() != 3) {
        throw DimError("conv1d: expected input [C_in x T] and weights [C_out x C_in x K], got " +
                       X.shape_str() + " and " + W.shape_str());
    }
    if (W.size(1) != X.rows()) {
        throw DimError("conv1d: input channels " + std::to_string(X.rows()) +
                       " do not match weight channels " + std::to_string(W.size(1)));
    }
    const std::size_t kernel = W.size(2);
    if (kernel % 2 == 0) throw ConfigError("conv1d: kernel size must be odd, got " +
                                           std::to_string(kernel));
    if (dilation < 1) throw ConfigError("conv1d: dilation must be >= 1");
    const std::size_t c_out = W.size(0), c_in = X.rows(), frames = X.cols();
    const std::size_t reach = (kernel - 1) * dilation;
    if (frames <= reach) {
        throw SequenceError("conv1d: input of " + std::to_string(frames) +
                            " frames is too short for kernel " + std::to_string(kernel) +
                            " with dilation " + std::to_string(dilation));
    }
    const std::ptrdiff_t mid = static_cast<std::ptrdiff_t>(kernel - 1) / 2;
    const auto offset = [mid, dilation](std::size_t k) {
        return (static_cast<std::ptrdiff_t>(k) - mid) * static_cast<std::ptrdiff_t>(dilation);
    };
    Tensor out({c_out, frames});
    for (std::size_t co = 0; co < c_out; ++co)
        for (std::size_t ci = 0; ci < c_in; ++ci)
            for (std::size_t k = 0; k < kernel; ++k) {
                const double wv = W.at(co, ci, k);
                if (wv == 0.0) continue;
                const std::ptrdiff_t off = offset(k);
                const std::size_t t_lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -off));
                const std::size_t t_hi = static_cast<std::size_t>(std::min<std::ptrdiff_t>(
                    static_cast<std::ptrdiff_t>(frames), static_cast<std::ptrdiff_t>(frames) - off));
                for (std::size_t t = t_lo; t < t_hi; ++t)
                    out.at(co, t) += wv * X.at(ci, static_cast<std::size_t>(
                                                       static_cast<std::ptrdiff_t>(t) + off));
            }
    return detail::make_op(
        "conv1d", std::move(out), {x, w},
        [x, w, c_out, c_in, frames, kernel, offset](const Var& self) {
            if (x->requires_grad) {
                x->ensure_grad();
                for (std::size_t co = 0; co < c_out; ++co)
                    for (std::size_t ci = 0; ci < c_in; ++ci)
                        for (std::size_t k = 0; k < kernel; ++k) {
                            const double wv = w->value.at(co, ci, k);
                            if (wv == 0.0) continue;
                            const std::ptrdiff_t off = offset(k);
                            const std::size_t t_lo =
                                static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -off));
                            const std::size_t t_hi = static_cast<std::size_t>(
                                std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(frames),
                                                         static_cast<std::ptrdiff_t>(frames) - off));
                            for (std::size_t t = t_lo; t < t_hi; ++t)
                                x->grad[ci * frames +
                                        static_cast<std::size_t>(static_cast<std::ptrdiff_t>(t) +
                                                                 off)] +=
                                    wv * self.grad[co * frames + t];
                        }
            }
            if (w->requires_grad) {
                w->ensure_grad();
                for (std::size_t co = 0; co < c_out; ++co)
                    for (std::size_t ci = 0; ci < c_in; ++ci)
                        for (std::size_t k = 0; k < kernel; ++k) {
                            const std::ptrdiff_t off = offset(k);
                            const std::size_t t_lo =
                                static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -off));
                            const std::size_t t_hi = static_cast<std::size_t>(
                                std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(frames),
                                                         static_cast<std::ptrdiff_t>(frames) - off));
                            double acc = 0.0;
                            for (std::size_t t = t_lo; t < t_hi; ++t)
                                acc += self.grad[co * frames + t] *
                                       x->value.at(ci, static_cast<std::size_t>(
                                                           static_cast<std::ptrdiff_t>(t) + off));
                            w->grad[(co * c_in + ci) * kernel + k] += acc;
                        }
            }
        });
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

namespace detail {

// In-place stable softmax over a strided slice.
inline void softmax_slice(const double* in, double* out, std::size_t n, std::size_t stride) {
    double mx = in[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, in[i * stride]);
    double denom = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = std::exp(in[i * stride] - mx);
        out[i * stride] = e;
        denom += e;
    }
    for (std::size_t i = 0; i < n; ++i) out[i * stride] /= denom;
}

inline void softmax_slice_back(const double* s, const double* g, double* acc, std::size_t n,
                               std::size_t stride) {
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += s[i * stride] * g[i * stride];
    for (std::size_t i = 0; i < n; ++i)
        acc[i * stride] += s[i * stride] * (g[i * stride] - dot);
}

}  // namespace detail

/// Max-subtracted softmax along `axis` (for rank-1 tensors the axis must be 0;
/// for rank-2, axis 0 normalizes each column and axis 1 each row).
inline VarPtr softmax(const VarPtr& a, std::size_t axis = 0) {
    const Tensor& A = a->value;
    if (axis >= A.rank()) {
        throw DimError("softmax: axis " + std::to_string(axis) + " out of range for " +
                       A.shape_str());
    }
    Tensor out(A.shape());
    std::size_t n, stride, slices, slice_step;
    if (A.rank() == 1) {
        n = A.numel();
        stride = 1;
        slices = 1;
        slice_step = 0;
    } else if (A.rank() == 2 && axis == 0) {
        n = A.rows();
        stride = A.cols();
        slices = A.cols();
        slice_step = 1;
    } else if (A.rank() == 2 && axis == 1) {
        n = A.cols();
        stride = 1;
        slices = A.rows();
        slice_step = A.cols();
    } else {
        throw DimError("softmax: unsupported rank " + std::to_string(A.rank()));
    }
    for (std::size_t s = 0; s < slices; ++s)
        detail::softmax_slice(A.data().data() + s * slice_step, out.data().data() + s * slice_step,
                              n, stride);
    return detail::make_op("softmax", std::move(out), {a},
                           [a, n, stride, slices, slice_step](const Var& self) {
                               a->ensure_grad();
                               for (std::size_t s = 0; s < slices; ++s)
                                   detail::softmax_slice_back(
                                       self.value.data().data() + s * slice_step,
                                       self.grad.data() + s * slice_step,
                                       a->grad.data() + s * slice_step, n, stride);
                           });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline VarPtr sum(const VarPtr& a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a->value.numel(); ++i) acc += a->value.at(i);
    return detail::make_op("sum", Tensor::scalar(acc), {a}, [a](const Var& self) {
        a->ensure_grad();
        for (double& g : a->grad) g += self.grad[0];
    });
}

/// Sum of a rank-2 tensor along `axis`: axis 0 collapses rows (output [cols]),
/// axis 1 collapses columns (output [rows]).
inline VarPtr sum_axis(const VarPtr& a, std::size_t axis) {
    const Tensor& A = a->value;
    if (A.rank() != 2 || axis > 1) {
        throw DimError("sum_axis: expected rank-2 tensor, got " + A.shape_str());
    }
    const std::size_t rows = A.rows(), cols = A.cols();
    if (axis == 0) {
        Tensor out({cols});
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) out.at(j) += A.at(i, j);
        return detail::make_op("sum_axis", std::move(out), {a}, [a, rows, cols](const Var& self) {
            a->ensure_grad();
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) a->grad[i * cols + j] += self.grad[j];
        });
    }
    Tensor out({rows});
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out.at(i) += A.at(i, j);
    return detail::make_op("sum_axis", std::move(out), {a}, [a, rows, cols](const Var& self) {
        a->ensure_grad();
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) a->grad[i * cols + j] += self.grad[i];
    });
}

inline VarPtr mean_axis(const VarPtr& a, std::size_t axis) {
    const double n = static_cast<double>(axis == 0 ? a->value.rows() : a->value.cols());
    return scale(sum_axis(a, axis), 1.0 / n);
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

inline VarPtr reshape(const VarPtr& a, std::vector<std::size_t> shape) {
    Tensor out(std::move(shape), a->value.data());
    if (out.numel() != a->value.numel()) {
        throw DimError("reshape: cannot reshape " + a->value.shape_str() + " to " +
                       out.shape_str());
    }
    return detail::make_op("reshape", std::move(out), {a}, [a](const Var& self) {
        a->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
    });
}

/// Concatenation along axis 0: rank-1 inputs concatenate into one vector,
/// rank-2 inputs (equal column counts) stack their rows.
inline VarPtr concat_rows(const std::vector<VarPtr>& parts) {
    if (parts.empty()) throw DimError("concat_rows: no inputs");
    const std::size_t rank = parts[0]->value.rank();
    std::size_t cols = rank == 2 ? parts[0]->value.cols() : 1;
    std::size_t total_rows = 0;
    for (const auto& p : parts) {
        if (p->value.rank() != rank || (rank == 2 && p->value.cols() != cols)) {
            throw DimError("concat_rows: mismatched part shape " + p->value.shape_str());
        }
        total_rows += p->value.rows();
    }
    Tensor out(rank == 2 ? std::vector<std::size_t>{total_rows, cols}
                         : std::vector<std::size_t>{total_rows});
    std::size_t at = 0;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        offsets.push_back(at);
        std::copy(p->value.data().begin(), p->value.data().end(), out.data().begin() + at);
        at += p->value.numel();
    }
    return detail::make_op("concat_rows", std::move(out), parts,
                           [parts, offsets](const Var& self) {
                               for (std::size_t i = 0; i < parts.size(); ++i) {
                                   if (!parts[i]->requires_grad) continue;
                                   parts[i]->ensure_grad();
                                   const std::size_t n = parts[i]->value.numel();
                                   for (std::size_t j = 0; j < n; ++j)
                                       parts[i]->grad[j] += self.grad[offsets[i] + j];
                               }
                           });
}

/// Rows [begin, end) of a rank-2 tensor (or the subvector of a rank-1 one).
inline VarPtr slice_rows(const VarPtr& a, std::size_t begin, std::size_t end) {
    const Tensor& A = a->value;
    if (begin >= end || end > A.rows()) {
        throw DimError("slice_rows: range [" + std::to_string(begin) + ", " +
                       std::to_string(end) + ") invalid for " + A.shape_str());
    }
    const std::size_t cols = A.rank() == 2 ? A.cols() : 1;
    Tensor out(A.rank() == 2 ? std::vector<std::size_t>{end - begin, cols}
                             : std::vector<std::size_t>{end - begin});
    std::copy(A.data().begin() + begin * cols, A.data().begin() + end * cols, out.data().begin());
    return detail::make_op("slice_rows", std::move(out), {a}, [a, begin, cols](const Var& self) {
        a->ensure_grad();
        for (std::size_t j = 0; j < self.grad.size(); ++j)
            a->grad[begin * cols + j] += self.grad[j];
    });
}

/// Stacks B vectors of length D into a [D x B] matrix (examples as columns).
inline VarPtr stack_cols(const std::vector<VarPtr>& columns) {
    if (columns.empty()) throw DimError("stack_cols: no inputs");
    const std::size_t dim = columns[0]->value.numel();
    for (const auto& c : columns) {
        if (c->value.rank() != 1 || c->value.numel() != dim) {
            throw DimError("stack_cols: expected vectors of length " + std::to_string(dim) +
                           ", got " + c->value.shape_str());
        }
    }
    const std::size_t batch = columns.size();
    Tensor out({dim, batch});
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < dim; ++i) out.at(i, b) = columns[b]->value.at(i);
    return detail::make_op("stack_cols", std::move(out), columns,
                           [columns, dim, batch](const Var& self) {
                               for (std::size_t b = 0; b < batch; ++b) {
                                   if (!columns[b]->requires_grad) continue;
                                   columns[b]->ensure_grad();
                                   for (std::size_t i = 0; i < dim; ++i)
                                       columns[b]->grad[i] += self.grad[i * batch + b];
                               }
                           });
}

/// out[b] = m[labels[b], b] for a [L x B] matrix; used to pick per-example
/// target logits.
inline VarPtr gather_per_col(const VarPtr& m, const std::vector<std::size_t>& labels) {
    const Tensor& M = m->value;
    if (M.rank() != 2 || labels.size() != M.cols()) {
        throw DimError("gather_per_col: need one label per column of " + M.shape_str());
    }
    for (std::size_t lab : labels) {
        if (lab >= M.rows()) {
            throw ConfigError("gather_per_col: label " + std::to_string(lab) +
                              " out of range [0, " + std::to_string(M.rows()) + ")");
        }
    }
    const std::size_t batch = M.cols();
    Tensor out({batch});
    for (std::size_t b = 0; b < batch; ++b) out.at(b) = M.at(labels[b], b);
    return detail::make_op("gather_per_col", std::move(out), {m},
                           [m, labels, batch](const Var& self) {
                               m->ensure_grad();
                               const std::size_t cols = m->value.cols();
                               for (std::size_t b = 0; b < batch; ++b)
                                   m->grad[labels[b] * cols + b] += self.grad[b];
                           });
}

/// Inverse of gather_per_col: scatters v[b] into row labels[b] of a zero
/// [L x B] matrix.
inline VarPtr scatter_per_col(const VarPtr& v, const std::vector<std::size_t>& labels,
                              std::size_t num_rows) {
    const Tensor& V = v->value;
    if (V.rank() != 1 || labels.size() != V.numel()) {
        throw DimError("scatter_per_col: need one label per element of " + V.shape_str());
    }
    const std::size_t batch = V.numel();
    Tensor out({num_rows, batch});
    for (std::size_t b = 0; b < batch; ++b) {
        if (labels[b] >= num_rows) {
            throw ConfigError("scatter_per_col: label " + std::to_string(labels[b]) +
                              " out of range [0, " + std::to_string(num_rows) + ")");
        }
        out.at(labels[b], b) = V.at(b);
    }
    return detail::make_op("scatter_per_col", std::move(out), {v},
                           [v, labels, batch](const Var& self) {
                               v->ensure_grad();
                               const std::size_t cols = batch;
                               for (std::size_t b = 0; b < batch; ++b)
                                   v->grad[b] += self.grad[labels[b] * cols + b];
                           });
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

/// Reverse-mode accumulation from a scalar loss node. Visits the ancestor
/// graph in exact reverse topological order; every reachable parameter ends
/// up with a populated grad. Calling backward twice on the same node without
/// rebuilding the graph is an error.
inline void backward(const VarPtr& loss) {
    if (loss->value.numel() != 1) {
        throw DimError("backward: loss must be scalar, got " + loss->value.shape_str());
    }
    if (loss->backward_done) {
        throw NumericError("backward: already called on this node; rebuild the graph or reset");
    }
    if (!loss->requires_grad) {
        throw NumericError(
            "backward: loss is detached from every trainable parameter (nothing to differentiate)");
    }

    // Iterative post-order DFS over the ancestor DAG.
    std::vector<Var*> order;
    std::unordered_set<Var*> visited;
    std::vector<std::pair<Var*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (next_child < node->parents.size()) {
            Var* child = node->parents[next_child++].get();
            if (child->requires_grad && !visited.count(child)) {
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss->ensure_grad();
    loss->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Var* node = *it;
        if (node->backprop) {
            node->ensure_grad();
            node->backprop(*node);
        }
    }
    loss->backward_done = true;
}

inline void zero_grad(const std::vector<VarPtr>& params) {
    for (const auto& p : params) p->zero_grad();
}

}  // namespace dmsc
