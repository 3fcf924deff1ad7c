#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "cct/tensor.hpp"

// Differentiable primitives. Every reduction runs sequentially in row-major order so that
// forward values and gradients are bitwise reproducible.
namespace cct {

namespace detail {

enum class Broadcast { same, suffix, column, scalar };

inline Broadcast classify_broadcast(const Shape& a, const Shape& b, const char* op) {
    if (a == b) return Broadcast::same;
    if (numel_of(b) == 1) return Broadcast::scalar;
    if (b.size() <= a.size() && std::equal(b.rbegin(), b.rend(), a.rbegin())) return Broadcast::suffix;
    if (a.size() == b.size() && !a.empty() && b.back() == 1 && std::equal(a.begin(), a.end() - 1, b.begin())) {
        return Broadcast::column;
    }
    throw ContractError(fmt::format("{}: cannot broadcast {} onto {}", op, shape_str(b), shape_str(a)));
}

struct BroadcastIndex {
    Broadcast kind;
    std::size_t inner;  // suffix: numel(b); column: last dim of a
    std::size_t operator()(std::size_t i) const {
        switch (kind) {
            case Broadcast::same: return i;
            case Broadcast::suffix: return i % inner;
            case Broadcast::column: return i / inner;
            case Broadcast::scalar: return 0;
        }
        return 0;
    }
};

inline BroadcastIndex make_broadcast_index(const Shape& a, const Shape& b, const char* op) {
    const auto kind = classify_broadcast(a, b, op);
    std::size_t inner = 1;
    if (kind == Broadcast::suffix) inner = numel_of(b);
    if (kind == Broadcast::column) inner = a.back();
    return {kind, inner};
}

// b may broadcast onto a; never the other way round.
template <class T, class F, class DA, class DB>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* op, F f, DA dfa, DB dfb) {
    const auto idx = make_broadcast_index(a.shape(), b.shape(), op);
    const auto ad = a.data();
    const auto bd = b.data();
    std::vector<T> out(ad.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(ad[i], bd[idx(i)]);
    return make_result<T>(a.shape(), std::move(out), op, {a, b}, [idx, dfa, dfb](Node<T>& self) {
        Node<T>& pa = *self.parents[0];
        Node<T>& pb = *self.parents[1];
        const auto& g = self.grad;
        if (pa.requires_grad) {
            auto ga = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += dfa(g[i], pa.data[i], pb.data[idx(i)]);
        }
        if (pb.requires_grad) {
            auto gb = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gb[idx(i)] += dfb(g[i], pa.data[i], pb.data[idx(i)]);
        }
    });
}

// f(x) -> y; df(x, y) -> dy/dx.
template <class T, class F, class DF>
Tensor<T> unary(const Tensor<T>& x, const char* op, F f, DF df) {
    const auto xd = x.data();
    std::vector<T> out(xd.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xd[i]);
    return make_result<T>(x.shape(), std::move(out), op, {x}, [df](Node<T>& self) {
        Node<T>& px = *self.parents[0];
        if (!px.requires_grad) return;
        auto gx = px.grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * df(px.data[i], self.data[i]);
    });
}

// C[M,N] (+)= A[M,K] * B[K,N]
template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    // Four rows at a time so each row of B is loaded once per block. Every C element still
    // accumulates over p in increasing order.
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        T* c0 = c + i * n;
        T* c1 = c0 + n;
        T* c2 = c1 + n;
        T* c3 = c2 + n;
        for (std::size_t p = 0; p < k; ++p) {
            const T a0 = a[i * k + p], a1 = a[(i + 1) * k + p], a2 = a[(i + 2) * k + p], a3 = a[(i + 3) * k + p];
            const T* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                const T bv = bp[j];
                c0[j] += a0 * bv;
                c1[j] += a1 * bv;
                c2[j] += a2 * bv;
                c3[j] += a3 * bv;
            }
        }
    }
    for (; i < m; ++i) {
        T* ci = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            const T* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C[M,N] += A[M,K] * B[N,K]^T
template <class T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* ai = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const T* bj = b + j * k;
            // fixed 8-lane partial sums: vectorizable, and the summation order never varies
            T lane[8] = {};
            std::size_t p = 0;
            for (; p + 8 <= k; p += 8)
                for (std::size_t l = 0; l < 8; ++l) lane[l] += ai[p + l] * bj[p + l];
            T acc = ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
            for (; p < k; ++p) acc += ai[p] * bj[p];
            c[i * n + j] += acc;
        }
    }
}

// C[K,N] += A[M,K]^T * B[M,N]
template <class T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            T* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

struct MatmulLayout {
    std::size_t batch;  // 1 when b is shared
    std::size_t m, k, n;
    bool shared_b;
};

inline MatmulLayout matmul_layout(const Shape& a, const Shape& b, bool transpose_b, const char* op) {
    if (a.size() < 2 || b.size() < 2) throw ContractError(fmt::format("{}: operands must be at least 2-D", op));
    const std::size_t k = a.back();
    const std::size_t bk = transpose_b ? b[b.size() - 1] : b[b.size() - 2];
    const std::size_t n = transpose_b ? b[b.size() - 2] : b[b.size() - 1];
    if (k != bk) throw ContractError(fmt::format("{}: inner dims differ {} vs {}", op, shape_str(a), shape_str(b)));
    if (b.size() == 2) return {1, numel_of(a) / k, k, n, true};
    if (a.size() != b.size() || !std::equal(a.begin(), a.end() - 2, b.begin())) {
        throw ContractError(fmt::format("{}: batch dims differ {} vs {}", op, shape_str(a), shape_str(b)));
    }
    const std::size_t m = a[a.size() - 2];
    return {numel_of(a) / (m * k), m, k, n, false};
}

template <class T>
Tensor<T> matmul_impl(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b, const char* op) {
    const auto L = matmul_layout(a.shape(), b.shape(), transpose_b, op);
    Shape out_shape = a.shape();
    out_shape.back() = L.n;
    std::vector<T> out(numel_of(out_shape), T(0));
    const std::size_t a_stride = L.m * L.k, b_stride = L.shared_b ? 0 : L.k * L.n, c_stride = L.m * L.n;
    for (std::size_t p = 0; p < L.batch; ++p) {
        const T* ap = a.data().data() + p * a_stride;
        const T* bp = b.data().data() + p * b_stride;
        T* cp = out.data() + p * c_stride;
        if (transpose_b) {
            gemm_nt(ap, bp, cp, L.m, L.k, L.n);
        } else {
            gemm_nn(ap, bp, cp, L.m, L.k, L.n);
        }
    }
    return make_result<T>(std::move(out_shape), std::move(out), op, {a, b}, [L, a_stride, b_stride, c_stride,
                                                                            transpose_b](Node<T>& self) {
        Node<T>& pa = *self.parents[0];
        Node<T>& pb = *self.parents[1];
        for (std::size_t p = 0; p < L.batch; ++p) {
            const T* g = self.grad.data() + p * c_stride;
            const T* ap = pa.data.data() + p * a_stride;
            const T* bp = pb.data.data() + p * b_stride;
            if (pa.requires_grad) {
                T* ga = pa.grad_buffer().data() + p * a_stride;
                if (transpose_b) {
                    gemm_nn(g, bp, ga, L.m, L.n, L.k);  // dA = dC * B, B is [N,K]
                } else {
                    gemm_nt(g, bp, ga, L.m, L.n, L.k);  // dA = dC * B^T, B is [K,N]
                }
            }
            if (pb.requires_grad) {
                T* gb = pb.grad_buffer().data() + p * b_stride;
                if (transpose_b) {
                    gemm_tn(g, ap, gb, L.m, L.n, L.k);  // dB[N,K] = dC^T * A
                } else {
                    gemm_tn(ap, g, gb, L.m, L.k, L.n);  // dB[K,N] = A^T * dC
                }
            }
        }
    });
}

}  // namespace detail

// ---- elementwise binary (b broadcasts onto a) ----

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary(
        a, b, "add", [](T x, T y) { return x + y; }, [](T g, T, T) { return g; }, [](T g, T, T) { return g; });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary(
        a, b, "sub", [](T x, T y) { return x - y; }, [](T g, T, T) { return g; }, [](T g, T, T) { return -g; });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary(
        a, b, "mul", [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; },
        [](T g, T x, T) { return g * x; });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary(
        a, b, "div", [](T x, T y) { return x / y; }, [](T g, T, T y) { return g / y; },
        [](T g, T x, T y) { return -g * x / (y * y); });
}

// ---- elementwise unary ----

template <class T>
Tensor<T> scale(const Tensor<T>& x, T c) {
    return detail::unary(x, "scale", [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
    return detail::unary(x, "add_scalar", [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> neg(const Tensor<T>& x) {
    return detail::unary(x, "neg", [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
    return detail::unary(x, "square", [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

// Gradient is 1 on [lo, hi] and 0 where the input was clamped.
template <class T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
    return detail::unary(
        x, "clamp", [lo, hi](T v) { return std::min(std::max(v, lo), hi); },
        [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    return detail::unary(x, "relu", [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
T sigmoid_scalar(T v) {
    if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
    const T e = std::exp(v);
    return e / (T(1) + e);
}

template <class T>
T softplus_scalar(T v) {
    return v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return detail::unary(x, "sigmoid", [](T v) { return sigmoid_scalar(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> softplus(const Tensor<T>& x) {
    return detail::unary(x, "softplus", [](T v) { return softplus_scalar(v); }, [](T v, T) { return sigmoid_scalar(v); });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
    return detail::unary(x, "tanh", [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
    return detail::unary(x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
    return detail::unary(x, "log", [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <class T>
Tensor<T> sqrt(const Tensor<T>& x) {
    return detail::unary(x, "sqrt", [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}

// GPT-2 tanh approximation.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
    constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
    constexpr T a = T(0.044715);
    return detail::unary(
        x, "gelu",
        [](T v) { return T(0.5) * v * (T(1) + std::tanh(c * (v + a * v * v * v))); },
        [](T v, T) {
            const T t = std::tanh(c * (v + a * v * v * v));
            return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * c * (T(1) + T(3) * a * v * v);
        });
}

// ---- matmul ----

// a: [..., M, K]; b: [K, N] (shared across rows) or [..., K, N] (matching batch dims).
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::matmul_impl(a, b, false, "matmul");
}

// a: [..., M, K]; b: [N, K] or [..., N, K]; computes a * b^T.
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::matmul_impl(a, b, true, "matmul_nt");
}

// x @ weight + bias with weight [in, out] and bias [out].
template <class T>
Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    return add(matmul(x, weight), bias);
}

// ---- softmax family ----

template <class T>
Tensor<T> softmax(const Tensor<T>& x) {
    const std::size_t d = x.shape().back();
    const std::size_t rows = x.numel() / d;
    const auto xd = x.data();
    std::vector<T> out(xd.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = xd.data() + r * d;
        T* yr = out.data() + r * d;
        T m = xr[0];
        for (std::size_t j = 1; j < d; ++j) m = std::max(m, xr[j]);
        T s = T(0);
        for (std::size_t j = 0; j < d; ++j) {
            yr[j] = std::exp(xr[j] - m);
            s += yr[j];
        }
        for (std::size_t j = 0; j < d; ++j) yr[j] /= s;
    }
    return detail::make_result<T>(x.shape(), std::move(out), "softmax", {x}, [d, rows](Node<T>& self) {
        Node<T>& px = *self.parents[0];
        if (!px.requires_grad) return;
        auto gx = px.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            const T* y = self.data.data() + r * d;
            const T* g = self.grad.data() + r * d;
            T dot = T(0);
            for (std::size_t j = 0; j < d; ++j) dot += g[j] * y[j];
            for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += y[j] * (g[j] - dot);
        }
    });
}

// Softmax over [..., T, T] where query row t only sees keys j <= t; masked entries are exactly 0.
template <class T>
Tensor<T> causal_softmax(const Tensor<T>& x) {
    if (x.rank() < 2 || x.shape().back() != x.shape()[x.rank() - 2]) {
        throw ContractError("causal_softmax expects [..., T, T], got " + shape_str(x.shape()));
    }
    const std::size_t n = x.shape().back();
    const std::size_t mats = x.numel() / (n * n);
    const auto xd = x.data();
    std::vector<T> out(xd.size(), T(0));
    for (std::size_t b = 0; b < mats; ++b) {
        for (std::size_t t = 0; t < n; ++t) {
            const T* xr = xd.data() + (b * n + t) * n;
            T* yr = out.data() + (b * n + t) * n;
            T m = xr[0];
            for (std::size_t j = 1; j <= t; ++j) m = std::max(m, xr[j]);
            T s = T(0);
            for (std::size_t j = 0; j <= t; ++j) {
                yr[j] = std::exp(xr[j] - m);
                s += yr[j];
            }
            for (std::size_t j = 0; j <= t; ++j) yr[j] /= s;
        }
    }
    return detail::make_result<T>(x.shape(), std::move(out), "causal_softmax", {x}, [n, mats](Node<T>& self) {
        Node<T>& px = *self.parents[0];
        if (!px.requires_grad) return;
        auto gx = px.grad_buffer();
        for (std::size_t b = 0; b < mats; ++b) {
            for (std::size_t t = 0; t < n; ++t) {
                const std::size_t off = (b * n + t) * n;
                const T* y = self.data.data() + off;
                const T* g = self.grad.data() + off;
                T dot = T(0);
                for (std::size_t j = 0; j <= t; ++j) dot += g[j] * y[j];
                for (std::size_t j = 0; j <= t; ++j) gx[off + j] += y[j] * (g[j] - dot);
            }
        }
    });
}

// Mean over rows of -log softmax(logits)[target]. logits: [..., V]; one target per row.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets) {
    const std::size_t v = logits.shape().back();
    const std::size_t rows = logits.numel() / v;
    if (targets.size() != rows) {
        throw ContractError(fmt::format("cross_entropy: {} targets for {} rows", targets.size(), rows));
    }
    std::vector<std::int32_t> tg(targets.begin(), targets.end());
    std::vector<T> probs(logits.numel());
    const auto ld = logits.data();
    T total = T(0);
    for (std::size_t r = 0; r < rows; ++r) {
        if (tg[r] < 0 || static_cast<std::size_t>(tg[r]) >= v) throw ContractError("cross_entropy: target out of range");
        const T* z = ld.data() + r * v;
        T* p = probs.data() + r * v;
        T m = z[0];
        for (std::size_t j = 1; j < v; ++j) m = std::max(m, z[j]);
        T s = T(0);
        for (std::size_t j = 0; j < v; ++j) {
            p[j] = std::exp(z[j] - m);
            s += p[j];
        }
        for (std::size_t j = 0; j < v; ++j) p[j] /= s;
        total += (m + std::log(s)) - z[tg[r]];
    }
    return detail::make_result<T>({1}, {total / static_cast<T>(rows)}, "cross_entropy", {logits},
                                  [probs = std::move(probs), tg = std::move(tg), v, rows](Node<T>& self) {
                                      Node<T>& pl = *self.parents[0];
                                      if (!pl.requires_grad) return;
                                      auto gl = pl.grad_buffer();
                                      const T g = self.grad[0] / static_cast<T>(rows);
                                      for (std::size_t r = 0; r < rows; ++r) {
                                          for (std::size_t j = 0; j < v; ++j) gl[r * v + j] += g * probs[r * v + j];
                                          gl[r * v + static_cast<std::size_t>(tg[r])] -= g;
                                      }
                                  });
}

// Mean over rows of -sum_j p_j log softmax(z)_j with constant target distributions p.
template <class T>
Tensor<T> soft_cross_entropy(const Tensor<T>& logits, const Tensor<T>& target_probs) {
    if (logits.shape() != target_probs.shape()) throw ContractError("soft_cross_entropy: shape mismatch");
    const std::size_t k = logits.shape().back();
    const std::size_t rows = logits.numel() / k;
    std::vector<T> probs(logits.numel());
    std::vector<T> tp(target_probs.data().begin(), target_probs.data().end());
    const auto ld = logits.data();
    T total = T(0);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* z = ld.data() + r * k;
        T* p = probs.data() + r * k;
        T m = z[0];
        for (std::size_t j = 1; j < k; ++j) m = std::max(m, z[j]);
        T s = T(0);
        for (std::size_t j = 0; j < k; ++j) {
            p[j] = std::exp(z[j] - m);
            s += p[j];
        }
        const T lse = m + std::log(s);
        for (std::size_t j = 0; j < k; ++j) {
            p[j] /= s;
            total -= tp[r * k + j] * (z[j] - lse);
        }
    }
    return detail::make_result<T>({1}, {total / static_cast<T>(rows)}, "soft_cross_entropy", {logits},
                                  [probs = std::move(probs), tp = std::move(tp), k, rows](Node<T>& self) {
                                      Node<T>& pl = *self.parents[0];
                                      if (!pl.requires_grad) return;
                                      auto gl = pl.grad_buffer();
                                      const T g = self.grad[0] / static_cast<T>(rows);
                                      for (std::size_t r = 0; r < rows; ++r) {
                                          T mass = T(0);
                                          for (std::size_t j = 0; j < k; ++j) mass += tp[r * k + j];
                                          for (std::size_t j = 0; j < k; ++j) {
                                              gl[r * k + j] += g * (mass * probs[r * k + j] - tp[r * k + j]);
                                          }
                                      }
                                  });
}

// ---- normalisation ----

template <class T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
    const std::size_t d = x.shape().back();
    if (gamma.numel() != d || beta.numel() != d) throw ContractError("layernorm: gamma/beta size mismatch");
    const std::size_t rows = x.numel() / d;
    const auto xd = x.data();
    std::vector<T> out(xd.size());
    std::vector<T> xhat(xd.size());
    std::vector<T> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = xd.data() + r * d;
        T mean = T(0);
        for (std::size_t j = 0; j < d; ++j) mean += xr[j];
        mean /= static_cast<T>(d);
        T var = T(0);
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= static_cast<T>(d);
        const T is = T(1) / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            xhat[r * d + j] = (xr[j] - mean) * is;
            out[r * d + j] = xhat[r * d + j] * gamma[j] + beta[j];
        }
    }
    return detail::make_result<T>(
        x.shape(), std::move(out), "layernorm", {x, gamma, beta},
        [xhat = std::move(xhat), inv_std = std::move(inv_std), d, rows](Node<T>& self) {
            Node<T>& px = *self.parents[0];
            Node<T>& pg = *self.parents[1];
            Node<T>& pb = *self.parents[2];
            const auto& g = self.grad;
            if (pg.requires_grad) {
                auto gg = pg.grad_buffer();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
            }
            if (pb.requires_grad) {
                auto gb = pb.grad_buffer();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
            }
            if (px.requires_grad) {
                auto gx = px.grad_buffer();
                std::vector<T> dxhat(d);
                for (std::size_t r = 0; r < rows; ++r) {
                    T mean_d = T(0), mean_dx = T(0);
                    for (std::size_t j = 0; j < d; ++j) {
                        dxhat[j] = g[r * d + j] * pg.data[j];
                        mean_d += dxhat[j];
                        mean_dx += dxhat[j] * xhat[r * d + j];
                    }
                    mean_d /= static_cast<T>(d);
                    mean_dx /= static_cast<T>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        gx[r * d + j] += inv_std[r] * (dxhat[j] - mean_d - xhat[r * d + j] * mean_dx);
                    }
                }
            }
        });
}

// ---- reductions ----

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
    T s = T(0);
    for (T v : x.data()) s += v;
    return detail::make_result<T>({1}, {s}, "sum", {x}, [](Node<T>& self) {
        Node<T>& px = *self.parents[0];
        if (!px.requires_grad) return;
        auto gx = px.grad_buffer();
        for (auto& g : gx) g += self.grad[0];
    });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
    T s = T(0);
    for (T v : x.data()) s += v;
    const T n = static_cast<T>(x.numel());
    return detail::make_result<T>({1}, {s / n}, "mean", {x}, [n](Node<T>& self) {
        Node<T>& px = *self.parents[0];
        if (!px.requires_grad) return;
        auto gx = px.grad_buffer();
        for (auto& g : gx) g += self.grad[0] / n;
    });
}

// Reduces the last dim to size 1.
template <class T>
Tensor<T> sum_last(const Tensor<T>& x) {
    const std::size_t d = x.shape().back();
    const std::size_t rows = x.numel() / d;
    std::vector<T> out(rows, T(0));
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) out[r] += x.data()[r * d + j];
    Shape s = x.shape();
    s.back() = 1;
    return detail::make_result<T>(std::move(s), std::move(out), "sum_last", {x}, [d, rows](Node<T>& self) {
        Node<T>& px = *self.parents[0];
        if (!px.requires_grad) return;
        auto gx = px.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += self.grad[r];
    });
}

template <class T>
Tensor<T> mean_last(const Tensor<T>& x) {
    return scale(sum_last(x), T(1) / static_cast<T>(x.shape().back()));
}

// ---- shape manipulation ----

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel_of(shape) != x.numel()) throw ContractError("reshape: element count mismatch");
    std::vector<T> out(x.data().begin(), x.data().end());
    return detail::make_result<T>(std::move(shape), std::move(out), "reshape", {x}, [](Node<T>& self) {
        Node<T>& px = *self.parents[0];
        if (!px.requires_grad) return;
        auto gx = px.grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    });
}

template <class T>
Tensor<T> concat_last(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ContractError("concat_last: no inputs");
    const Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (!std::equal(lead.begin(), lead.end(), p.shape().begin()) || p.rank() != lead.size() + 1) {
            throw ContractError("concat_last: leading dims differ");
        }
        widths.push_back(p.shape().back());
        total += p.shape().back();
    }
    const std::size_t rows = numel_of(lead);
    std::vector<T> out(rows * total);
    std::size_t off = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const auto pd = parts[i].data();
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(pd.data() + r * widths[i], widths[i], out.data() + r * total + off);
        off += widths[i];
    }
    Shape s = lead;
    s.push_back(total);
    return detail::make_result_n<T>(std::move(s), std::move(out), "concat", parts, [widths, rows, total](Node<T>& self) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < widths.size(); ++i) {
            Node<T>& p = *self.parents[i];
            if (p.requires_grad) {
                auto gp = p.grad_buffer();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < widths[i]; ++j) gp[r * widths[i] + j] += self.grad[r * total + off + j];
            }
            off += widths[i];
        }
    });
}

// Columns [begin, end) of the last dim.
template <class T>
Tensor<T> slice_last(const Tensor<T>& x, std::size_t begin, std::size_t end) {
    const std::size_t d = x.shape().back();
    if (begin >= end || end > d) throw ContractError("slice_last: bad range");
    const std::size_t w = end - begin;
    const std::size_t rows = x.numel() / d;
    std::vector<T> out(rows * w);
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(x.data().data() + r * d + begin, w, out.data() + r * w);
    Shape s = x.shape();
    s.back() = w;
    return detail::make_result<T>(std::move(s), std::move(out), "slice", {x}, [d, w, rows, begin](Node<T>& self) {
        Node<T>& px = *self.parents[0];
        if (!px.requires_grad) return;
        auto gx = px.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < w; ++j) gx[r * d + begin + j] += self.grad[r * w + j];
    });
}

// x: [B, T, D] -> [B, D] at time t.
template <class T>
Tensor<T> time_slice(const Tensor<T>& x, std::size_t t) {
    if (x.rank() != 3 || t >= x.size(1)) throw ContractError("time_slice: expects [B,T,D] and t < T");
    const std::size_t B = x.size(0), S = x.size(1), D = x.size(2);
    std::vector<T> out(B * D);
    for (std::size_t b = 0; b < B; ++b) std::copy_n(x.data().data() + (b * S + t) * D, D, out.data() + b * D);
    return detail::make_result<T>({B, D}, std::move(out), "time_slice", {x}, [B, S, D, t](Node<T>& self) {
        Node<T>& px = *self.parents[0];
        if (!px.requires_grad) return;
        auto gx = px.grad_buffer();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t j = 0; j < D; ++j) gx[(b * S + t) * D + j] += self.grad[b * D + j];
    });
}

// x: [B, T, C]; takes columns [offset, offset + H*dk) and splits them into heads -> [B, H, T, dk].
template <class T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads, std::size_t dk, std::size_t offset) {
    if (x.rank() != 3 || offset + heads * dk > x.size(2)) throw ContractError("split_heads: bad shape " + shape_str(x.shape()));
    const std::size_t B = x.size(0), S = x.size(1), C = x.size(2);
    std::vector<T> out(B * heads * S * dk);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t t = 0; t < S; ++t)
                std::copy_n(x.data().data() + (b * S + t) * C + offset + h * dk, dk, out.data() + ((b * heads + h) * S + t) * dk);
    return detail::make_result<T>({B, heads, S, dk}, std::move(out), "split_heads", {x}, [B, S, C, heads, dk, offset](Node<T>& self) {
        Node<T>& px = *self.parents[0];
        if (!px.requires_grad) return;
        auto gx = px.grad_buffer();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t t = 0; t < S; ++t)
                    for (std::size_t j = 0; j < dk; ++j)
                        gx[(b * S + t) * C + offset + h * dk + j] += self.grad[((b * heads + h) * S + t) * dk + j];
    });
}

// [B, H, T, dk] -> [B, T, H*dk]
template <class T>
Tensor<T> merge_heads(const Tensor<T>& x) {
    if (x.rank() != 4) throw ContractError("merge_heads: expects [B,H,T,dk]");
    const std::size_t B = x.size(0), H = x.size(1), S = x.size(2), dk = x.size(3);
    std::vector<T> out(x.numel());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t t = 0; t < S; ++t)
                std::copy_n(x.data().data() + ((b * H + h) * S + t) * dk, dk, out.data() + (b * S + t) * H * dk + h * dk);
    return detail::make_result<T>({B, S, H * dk}, std::move(out), "merge_heads", {x}, [B, H, S, dk](Node<T>& self) {
        Node<T>& px = *self.parents[0];
        if (!px.requires_grad) return;
        auto gx = px.grad_buffer();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t t = 0; t < S; ++t)
                    for (std::size_t j = 0; j < dk; ++j)
                        gx[((b * H + h) * S + t) * dk + j] += self.grad[(b * S + t) * H * dk + h * dk + j];
    });
}

// Stacks 2-D tensors [E_i, D] along rows.
template <class T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: no inputs");
    const std::size_t D = parts[0].shape().back();
    std::vector<std::size_t> rows;
    std::vector<T> out;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.size(1) != D) throw ContractError("concat_rows: expects [E, D] inputs");
        rows.push_back(p.size(0));
        out.insert(out.end(), p.data().begin(), p.data().end());
    }
    const std::size_t total = out.size() / D;
    return detail::make_result_n<T>({total, D}, std::move(out), "concat_rows", parts, [rows, D](Node<T>& self) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            Node<T>& p = *self.parents[i];
            const std::size_t n = rows[i] * D;
            if (p.requires_grad) {
                auto gp = p.grad_buffer();
                for (std::size_t j = 0; j < n; ++j) gp[j] += self.grad[off + j];
            }
            off += n;
        }
    });
}

// Inverse of time_slice: T tensors [B, D] -> [B, T, D].
template <class T>
Tensor<T> stack_time(const std::vector<Tensor<T>>& steps) {
    if (steps.empty()) throw ContractError("stack_time: no inputs");
    const std::size_t B = steps[0].size(0), D = steps[0].size(1), S = steps.size();
    std::vector<T> out(B * S * D);
    for (std::size_t t = 0; t < S; ++t) {
        if (steps[t].shape() != Shape{B, D}) throw ContractError("stack_time: shape mismatch");
        for (std::size_t b = 0; b < B; ++b) std::copy_n(steps[t].data().data() + b * D, D, out.data() + (b * S + t) * D);
    }
    return detail::make_result_n<T>({B, S, D}, std::move(out), "stack_time", steps, [B, S, D](Node<T>& self) {
        for (std::size_t t = 0; t < S; ++t) {
            Node<T>& p = *self.parents[t];
            if (!p.requires_grad) continue;
            auto gp = p.grad_buffer();
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t j = 0; j < D; ++j) gp[b * D + j] += self.grad[(b * S + t) * D + j];
        }
    });
}

// a: [B, H, M, K]; w: [H, K, N] -> [B, H, M, N], one matrix per head shared over the batch.
template <class T>
Tensor<T> matmul_per_head(const Tensor<T>& a, const Tensor<T>& w) {
    if (a.rank() != 4 || w.rank() != 3 || a.size(1) != w.size(0) || a.size(3) != w.size(1)) {
        throw ContractError(fmt::format("matmul_per_head: {} x {}", shape_str(a.shape()), shape_str(w.shape())));
    }
    const std::size_t B = a.size(0), H = a.size(1), M = a.size(2), K = a.size(3), N = w.size(2);
    std::vector<T> out(B * H * M * N, T(0));
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < H; ++h)
            detail::gemm_nn(a.data().data() + (b * H + h) * M * K, w.data().data() + h * K * N,
                            out.data() + (b * H + h) * M * N, M, K, N);
    return detail::make_result<T>({B, H, M, N}, std::move(out), "matmul_per_head", {a, w}, [B, H, M, K, N](Node<T>& self) {
        Node<T>& pa = *self.parents[0];
        Node<T>& pw = *self.parents[1];
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t h = 0; h < H; ++h) {
                const T* g = self.grad.data() + (b * H + h) * M * N;
                if (pa.requires_grad) {
                    detail::gemm_nt(g, pw.data.data() + h * K * N, pa.grad_buffer().data() + (b * H + h) * M * K, M, N, K);
                }
                if (pw.requires_grad) {
                    detail::gemm_tn(pa.data.data() + (b * H + h) * M * K, g, pw.grad_buffer().data() + h * K * N, M, K, N);
                }
            }
        }
    });
}

// ---- indexing ----

// table: [V, D]; ids of any shape -> [ids..., D].
template <class T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids, const Shape& ids_shape) {
    if (table.rank() != 2) throw ContractError("embedding: table must be [V, D]");
    const std::size_t V = table.size(0), D = table.size(1);
    std::vector<std::int32_t> idx(ids.begin(), ids.end());
    std::vector<T> out(idx.size() * D);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= V) {
            throw ContractError(fmt::format("embedding: id {} out of range [0,{})", idx[i], V));
        }
        std::copy_n(table.data().data() + static_cast<std::size_t>(idx[i]) * D, D, out.data() + i * D);
    }
    Shape s = ids_shape;
    s.push_back(D);
    return detail::make_result<T>(std::move(s), std::move(out), "embedding", {table}, [idx = std::move(idx), D](Node<T>& self) {
        Node<T>& pt = *self.parents[0];
        if (!pt.requires_grad) return;
        auto gt = pt.grad_buffer();
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < D; ++j) gt[static_cast<std::size_t>(idx[i]) * D + j] += self.grad[i * D + j];
    });
}

// Rows of x (viewed as [N, D] over its last dim) selected by idx -> [E, D].
template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> idx) {
    const std::size_t D = x.shape().back();
    const std::size_t N = x.numel() / D;
    std::vector<std::size_t> ix(idx.begin(), idx.end());
    std::vector<T> out(ix.size() * D);
    for (std::size_t e = 0; e < ix.size(); ++e) {
        if (ix[e] >= N) throw ContractError("gather_rows: index out of range");
        std::copy_n(x.data().data() + ix[e] * D, D, out.data() + e * D);
    }
    const std::size_t E = ix.size();
    return detail::make_result<T>({E, D}, std::move(out), "gather_rows", {x}, [ix = std::move(ix), D](Node<T>& self) {
        Node<T>& px = *self.parents[0];
        if (!px.requires_grad) return;
        auto gx = px.grad_buffer();
        for (std::size_t e = 0; e < ix.size(); ++e)
            for (std::size_t j = 0; j < D; ++j) gx[ix[e] * D + j] += self.grad[e * D + j];
    });
}

// Row e of x is averaged into output row idx[e]; output rows without contributors are zero.
template <class T>
Tensor<T> scatter_mean(const Tensor<T>& x, std::span<const std::size_t> idx, std::size_t n_out) {
    if (x.rank() != 2 || x.size(0) != idx.size()) throw ContractError("scatter_mean: expects [E, D] with E indices");
    const std::size_t D = x.size(1);
    std::vector<std::size_t> ix(idx.begin(), idx.end());
    std::vector<T> count(n_out, T(0));
    for (auto i : ix) {
        if (i >= n_out) throw ContractError("scatter_mean: index out of range");
        count[i] += T(1);
    }
    std::vector<T> out(n_out * D, T(0));
    for (std::size_t e = 0; e < ix.size(); ++e)
        for (std::size_t j = 0; j < D; ++j) out[ix[e] * D + j] += x.data()[e * D + j];
    for (std::size_t r = 0; r < n_out; ++r)
        if (count[r] > T(0))
            for (std::size_t j = 0; j < D; ++j) out[r * D + j] /= count[r];
    return detail::make_result<T>({n_out, D}, std::move(out), "scatter_mean", {x},
                                  [ix = std::move(ix), count = std::move(count), D](Node<T>& self) {
                                      Node<T>& px = *self.parents[0];
                                      if (!px.requires_grad) return;
                                      auto gx = px.grad_buffer();
                                      for (std::size_t e = 0; e < ix.size(); ++e)
                                          for (std::size_t j = 0; j < D; ++j)
                                              gx[e * D + j] += self.grad[ix[e] * D + j] / count[ix[e]];
                                  });
}

}  // namespace cct
