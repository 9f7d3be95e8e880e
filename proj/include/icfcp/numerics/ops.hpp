// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operations on Tensor. Every op checks its output for
// non-finite values and throws NumericError instead of propagating NaN.

#pragma once


#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "icfcp/numerics/tensor.hpp"

namespace icfcp::num {

namespace detail {

/// Strided view of a row-major matrix, optionally transposed.
template <class T>
struct View {
  const T* p;
  std::size_t ld;
  bool trans = false;
  T operator()(std::size_t i, std::size_t j) const { return trans ? p[j * ld + i] : p[i * ld + j]; }
};

/// C[i][j] += Σ_t A(i,t)·B(t,j) over an m×n block with inner length k.
/// Every entry is summed in ascending t, so results never depend on buffer
/// alignment or vector width.
template <class T>
void gemm_acc(std::size_t m, std::size_t n, std::size_t k, View<T> A, View<T> B, T* C, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    T* c = C + i * ldc;
    for (std::size_t t = 0; t < k; ++t) {
      const T a = A(i, t);
      if (!B.trans) {
        const T* b = B.p + t * B.ld;
        for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
      } else {
        for (std::size_t j = 0; j < n; ++j) c[j] += a * B.p[j * B.ld + t];
      }
    }
  }
}

template <class T>
void check_finite(const std::vector<T>& values, const char* op) {
  for (const T v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by '") + op + "'");
    }
  }
}

/// Gradient buffer of `t`, or nullptr when `t` takes no gradient.
template <class T>
T* grad_ptr(const Tensor<T>& t) {
  return t.requires_grad() ? t.node()->ensure_grad().data() : nullptr;
}

template <class T, class Backward>
Tensor<T> make_op(Shape shape, std::vector<T> data, const char* op,
                  const std::vector<Tensor<T>>& parents, Backward&& backward_fn) {
  check_finite(data, op);
  auto out = Tensor<T>::from(std::move(shape), std::move(data));
  Node<T>* node = out.node();
  node->op = op;
  if (!num::grad_enabled()) return out;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  node->requires_grad = true;
  for (const auto& p : parents) node->parents.push_back(p.ptr());
  node->backward = std::forward<Backward>(backward_fn);
  return out;
}

template <class T>
void require_rank2(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                         shape_str(t.shape()));
  }
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

template <class T, class F, class DF>
Tensor<T> unary(const Tensor<T>& a, const char* op, F f, DF df) {
  std::vector<T> out(a.size());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return make_op<T>(a.shape(), std::move(out), op, {a}, [a, df](Node<T>& self) {
    T* ga = grad_ptr(a);
    if (!ga) return;
    const auto x = a.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      ga[i] += self.grad[i] * df(x[i], self.data[i]);
    }
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// c = a·b for a[m×k], b[k×p].
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  }
  std::vector<T> out(m * p, T(0));
  detail::gemm_acc<T>(m, p, k, {a.data().data(), k}, {b.data().data(), p}, out.data(), p);
  return detail::make_op<T>({m, p}, std::move(out), "matmul", {a, b},
                            [a, b, m, k, p](Node<T>& self) {
    const detail::View<T> G{self.grad.data(), p};
    if (T* ga = detail::grad_ptr(a)) {
      detail::gemm_acc<T>(m, k, p, G, {b.data().data(), p, true}, ga, k);
    }
    if (T* gb = detail::grad_ptr(b)) {
      detail::gemm_acc<T>(k, p, m, {a.data().data(), k, true}, G, gb, p);
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_op<T>(a.shape(), std::move(out), "add", {a, b}, [a, b](Node<T>& self) {
    if (T* ga = detail::grad_ptr(a))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    if (T* gb = detail::grad_ptr(b))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_op<T>(a.shape(), std::move(out), "sub", {a, b}, [a, b](Node<T>& self) {
    if (T* ga = detail::grad_ptr(a))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    if (T* gb = detail::grad_ptr(b))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] -= self.grad[i];
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_op<T>(a.shape(), std::move(out), "mul", {a, b}, [a, b](Node<T>& self) {
    if (T* ga = detail::grad_ptr(a))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * b[i];
    if (T* gb = detail::grad_ptr(b))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i] * a[i];
  });
}

/// a[m×p] + bias broadcast over rows; bias has p entries.
template <class T>
Tensor<T> add_bias(const Tensor<T>& a, const Tensor<T>& bias) {
  detail::require_rank2(a, "add_bias");
  const std::size_t m = a.dim(0), p = a.dim(1);
  if (bias.size() != p) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " vs rows of width " +
                         std::to_string(p));
  }
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < p; ++j) out[i * p + j] = a[i * p + j] + bias[j];
  return detail::make_op<T>(a.shape(), std::move(out), "add_bias", {a, bias},
                            [a, bias, m, p](Node<T>& self) {
    if (T* ga = detail::grad_ptr(a))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    if (T* gb = detail::grad_ptr(bias))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < p; ++j) gb[j] += self.grad[i * p + j];
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  return detail::unary(
      a, "scale", [c](T x) { return c * x; }, [c](T, T) { return c; });
}

template <class T>
Tensor<T> neg(const Tensor<T>& a) {
  return scale(a, T(-1));
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  return detail::unary(
      a, "add_scalar", [c](T x) { return x + c; }, [](T, T) { return T(1); });
}

/// Elementwise min(a, c). Clamped entries receive zero gradient.
template <class T>
Tensor<T> minimum(const Tensor<T>& a, T c) {
  return detail::unary(
      a, "minimum", [c](T x) { return std::min(x, c); },
      [c](T x, T) { return x < c ? T(1) : T(0); });
}

/// max(x, 0); the derivative at 0 is taken as 0.
template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary(
      a, "relu", [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

/// Exact (erf) GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  constexpr T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
  return detail::unary(
      a, "gelu", [](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
      [](T x, T) {
        return T(0.5) * (T(1) + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(T(-0.5) * x * x);
      });
}

template <class T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::unary(
      a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& a) {
  return detail::unary(
      a, "log", [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary(
      a, "sigmoid",
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = T(0);
  for (const T v : a.data()) total += v;
  return detail::make_op<T>({1}, {total}, "sum", {a}, [a](Node<T>& self) {
    if (T* ga = detail::grad_ptr(a))
      for (std::size_t i = 0; i < a.size(); ++i) ga[i] += self.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

/// Row sums of a[m×p], returned as a single row of m values.
template <class T>
Tensor<T> sum_rows(const Tensor<T>& a) {
  detail::require_rank2(a, "sum_rows");
  const std::size_t m = a.dim(0), p = a.dim(1);
  std::vector<T> out(m, T(0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < p; ++j) out[i] += a[i * p + j];
  return detail::make_op<T>({1, m}, std::move(out), "sum_rows", {a}, [a, m, p](Node<T>& self) {
    if (T* ga = detail::grad_ptr(a))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < p; ++j) ga[i * p + j] += self.grad[i];
  });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return detail::make_op<T>(std::move(shape), std::move(out), "reshape", {a}, [a](Node<T>& self) {
    if (T* ga = detail::grad_ptr(a))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
  });
}

/// Stacks matrices with equal column counts vertically.
template <class T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t p = parts.front().cols();
  std::size_t m = 0;
  for (const auto& t : parts) {
    if (t.cols() != p) throw DimensionError("concat_rows: column count mismatch");
    m += t.rows();
  }
  std::vector<T> out;
  out.reserve(m * p);
  for (const auto& t : parts) out.insert(out.end(), t.data().begin(), t.data().end());
  return detail::make_op<T>({m, p}, std::move(out), "concat_rows", parts, [parts](Node<T>& self) {
    std::size_t offset = 0;
    for (const auto& t : parts) {
      if (T* g = detail::grad_ptr(t))
        for (std::size_t i = 0; i < t.size(); ++i) g[i] += self.grad[offset + i];
      offset += t.size();
    }
  });
}

/// Rows [begin, begin+count) of a matrix.
template <class T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t count) {
  const std::size_t p = a.cols();
  if (begin + count > a.rows()) {
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of " + shape_str(a.shape()));
  }
  std::vector<T> out(a.data().begin() + static_cast<std::ptrdiff_t>(begin * p),
                     a.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * p));
  return detail::make_op<T>({count, p}, std::move(out), "slice_rows", {a},
                            [a, begin, p](Node<T>& self) {
    if (T* ga = detail::grad_ptr(a))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[begin * p + i] += self.grad[i];
  });
}

/// Picks flat-indexed entries of `a` into a single row.
template <class T>
Tensor<T> gather(const Tensor<T>& a, std::vector<std::size_t> flat_indices) {
  std::vector<T> out(flat_indices.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (flat_indices[i] >= a.size()) throw DimensionError("gather: index out of range");
    out[i] = a[flat_indices[i]];
  }
  const std::size_t k = out.size();
  return detail::make_op<T>({1, k}, std::move(out), "gather", {a},
                            [a, idx = std::move(flat_indices)](Node<T>& self) {
    if (T* ga = detail::grad_ptr(a))
      for (std::size_t i = 0; i < idx.size(); ++i) ga[idx[i]] += self.grad[i];
  });
}

/// d[i][j] = v_i − v_j for the n entries of v.
template <class T>
Tensor<T> pairwise_diff(const Tensor<T>& v) {
  const std::size_t n = v.size();
  std::vector<T> out(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = v[i] - v[j];
  return detail::make_op<T>({n, n}, std::move(out), "pairwise_diff", {v}, [v, n](Node<T>& self) {
    T* gv = detail::grad_ptr(v);
    if (!gv) return;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        gv[i] += self.grad[i * n + j];
        gv[j] -= self.grad[i * n + j];
      }
  });
}

// ---------------------------------------------------------------------------
// Row-wise normalizations

/// Row softmax, stabilized by subtracting each row's max.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  const std::size_t m = a.rows(), p = a.cols();
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < m; ++i) {
    const T* x = a.data().data() + i * p;
    T* y = out.data() + i * p;
    const T mx = *std::max_element(x, x + p);
    T z = T(0);
    for (std::size_t j = 0; j < p; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < p; ++j) y[j] /= z;
  }
  return detail::make_op<T>(a.shape(), std::move(out), "softmax_rows", {a},
                            [a, m, p](Node<T>& self) {
    T* ga = detail::grad_ptr(a);
    if (!ga) return;
    for (std::size_t i = 0; i < m; ++i) {
      const T* y = self.data.data() + i * p;
      const T* g = self.grad.data() + i * p;
      T dot = T(0);
      for (std::size_t j = 0; j < p; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < p; ++j) ga[i * p + j] += y[j] * (g[j] - dot);
    }
  });
}

template <class T>
Tensor<T> log_softmax_rows(const Tensor<T>& a) {
  const std::size_t m = a.rows(), p = a.cols();
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < m; ++i) {
    const T* x = a.data().data() + i * p;
    T* y = out.data() + i * p;
    const T mx = *std::max_element(x, x + p);
    T z = T(0);
    for (std::size_t j = 0; j < p; ++j) z += std::exp(x[j] - mx);
    const T lse = mx + std::log(z);
    for (std::size_t j = 0; j < p; ++j) y[j] = x[j] - lse;
  }
  return detail::make_op<T>(a.shape(), std::move(out), "log_softmax_rows", {a},
                            [a, m, p](Node<T>& self) {
    T* ga = detail::grad_ptr(a);
    if (!ga) return;
    for (std::size_t i = 0; i < m; ++i) {
      const T* y = self.data.data() + i * p;
      const T* g = self.grad.data() + i * p;
      T gsum = T(0);
      for (std::size_t j = 0; j < p; ++j) gsum += g[j];
      for (std::size_t j = 0; j < p; ++j) ga[i * p + j] += g[j] - std::exp(y[j]) * gsum;
    }
  });
}

/// Per-row layer normalization with affine gain/shift of width p.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
  detail::require_rank2(x, "layer_norm");
  const std::size_t m = x.dim(0), p = x.dim(1);
  if (gamma.size() != p || beta.size() != p) {
    throw DimensionError("layer_norm: affine parameters must have " + std::to_string(p) +
                         " entries");
  }
  std::vector<T> out(x.size());
  std::vector<T> xhat(x.size());
  std::vector<T> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = x.data().data() + i * p;
    T mu = T(0);
    for (std::size_t j = 0; j < p; ++j) mu += row[j];
    mu /= static_cast<T>(p);
    T var = T(0);
    for (std::size_t j = 0; j < p; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(p);
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < p; ++j) {
      xhat[i * p + j] = (row[j] - mu) * inv_std[i];
      out[i * p + j] = xhat[i * p + j] * gamma[j] + beta[j];
    }
  }
  return detail::make_op<T>(
      x.shape(), std::move(out), "layer_norm", {x, gamma, beta},
      [x, gamma, beta, m, p, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        const T* g = self.grad.data();
        if (T* gg = detail::grad_ptr(gamma))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < p; ++j) gg[j] += g[i * p + j] * xhat[i * p + j];
        if (T* gb = detail::grad_ptr(beta))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < p; ++j) gb[j] += g[i * p + j];
        T* gx = detail::grad_ptr(x);
        if (!gx) return;
        const T inv_p = T(1) / static_cast<T>(p);
        for (std::size_t i = 0; i < m; ++i) {
          T s1 = T(0), s2 = T(0);
          for (std::size_t j = 0; j < p; ++j) {
            const T dxh = g[i * p + j] * gamma[j];
            s1 += dxh;
            s2 += dxh * xhat[i * p + j];
          }
          for (std::size_t j = 0; j < p; ++j) {
            const T dxh = g[i * p + j] * gamma[j];
            gx[i * p + j] += inv_std[i] * (dxh - inv_p * s1 - xhat[i * p + j] * inv_p * s2);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Attention

/// Multi-head scaled dot-product attention with an additive mask.
///
/// q, k: [L×D]; v: [L×Dv]; mask: [L×L] with entries 0 (visible) or
/// blocked_value<T>() (hidden). Heads split D and Dv into equal column blocks.
/// Hidden columns get exactly zero weight after the softmax.
template <class T>
Tensor<T> masked_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                           const Tensor<T>& mask, std::size_t num_heads = 1) {
  detail::require_rank2(q, "masked_attention");
  detail::require_rank2(k, "masked_attention");
  detail::require_rank2(v, "masked_attention");
  const std::size_t L = q.dim(0), D = q.dim(1), Dv = v.dim(1);
  if (k.dim(0) != L || v.dim(0) != L || k.dim(1) != D) {
    throw DimensionError("masked_attention: q/k/v shapes disagree");
  }
  if (mask.rows() != L || mask.cols() != L) {
    throw DimensionError("masked_attention: mask " + shape_str(mask.shape()) +
                         " does not match sequence length " + std::to_string(L));
  }
  if (num_heads == 0 || D % num_heads || Dv % num_heads) {
    throw DimensionError("masked_attention: width not divisible by head count");
  }
  constexpr T half_blocked = blocked_value<T>() / T(2);
  for (std::size_t i = 0; i < L; ++i) {
    bool open = false;
    for (std::size_t j = 0; j < L; ++j) {
      const T mij = mask[i * L + j];
      if (mij == T(0)) {
        open = true;
      } else if (!(mij <= half_blocked)) {
        throw ContractError("masked_attention: mask entries must be 0 or blocked");
      }
    }
    if (!open) {
      throw ContractError("masked_attention: row " + std::to_string(i) + " is fully blocked");
    }
  }

  const std::size_t dh = D / num_heads, dvh = Dv / num_heads;
  const T scale_factor = T(1) / std::sqrt(static_cast<T>(dh));
  const T* Q = q.data().data();
  const T* Kp = k.data().data();
  const T* V = v.data().data();
  const T* M = mask.data().data();

  std::vector<T> out(L * Dv, T(0));
  std::vector<T> probs(num_heads * L * L, T(0));
  for (std::size_t h = 0; h < num_heads; ++h) {
    T* P = probs.data() + h * L * L;
    detail::gemm_acc<T>(L, L, dh, {Q + h * dh, D}, {Kp + h * dh, D, true}, P, L);
    for (std::size_t i = 0; i < L; ++i) {
      T* row = P + i * L;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < L; ++j) mx = std::max(mx, row[j] = row[j] * scale_factor + M[i * L + j]);
      T z = T(0);
      for (std::size_t j = 0; j < L; ++j) z += (row[j] = std::exp(row[j] - mx));
      for (std::size_t j = 0; j < L; ++j) row[j] /= z;
    }
    detail::gemm_acc<T>(L, dvh, L, {P, L}, {V + h * dvh, Dv}, out.data() + h * dvh, Dv);
  }

  return detail::make_op<T>(
      {L, Dv}, std::move(out), "masked_attention", {q, k, v},
      [q, k, v, L, D, Dv, dh, dvh, num_heads, scale_factor,
       probs = std::move(probs)](Node<T>& self) {
        T* gq = detail::grad_ptr(q);
        T* gk = detail::grad_ptr(k);
        T* gv = detail::grad_ptr(v);
        const T* G = self.grad.data();
        const T* Q = q.data().data();
        const T* Kp = k.data().data();
        const T* V = v.data().data();
        std::vector<T> dS(L * L);
        for (std::size_t h = 0; h < num_heads; ++h) {
          const T* P = probs.data() + h * L * L;
          const detail::View<T> Gh{G + h * dvh, Dv};
          if (gv) detail::gemm_acc<T>(L, dvh, L, {P, L, true}, Gh, gv + h * dvh, Dv);
          if (!gq && !gk) continue;
          std::fill(dS.begin(), dS.end(), T(0));
          detail::gemm_acc<T>(L, L, dvh, Gh, {V + h * dvh, Dv, true}, dS.data(), L);
          for (std::size_t i = 0; i < L; ++i) {
            T* row = dS.data() + i * L;
            const T* prow = P + i * L;
            T dot = T(0);
            for (std::size_t j = 0; j < L; ++j) dot += row[j] * prow[j];
            for (std::size_t j = 0; j < L; ++j) row[j] = prow[j] * (row[j] - dot) * scale_factor;
          }
          if (gq) detail::gemm_acc<T>(L, dh, L, {dS.data(), L}, {Kp + h * dh, D}, gq + h * dh, D);
          if (gk) detail::gemm_acc<T>(L, dh, L, {dS.data(), L, true}, {Q + h * dh, D}, gk + h * dh, D);
        }
      });
}

}  // namespace icfcp::num
