/* Copyright 2026 The moelab Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "moelab/numerics/tape.hpp"

namespace moelab::numerics {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

template <class T>
MatMap<T> as_matrix(Tensor<T>& t) {
  return MatMap<T>(t.ptr(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
template <class T>
ConstMatMap<T> as_matrix(const Tensor<T>& t) {
  return ConstMatMap<T>(t.ptr(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

using TokenId = std::uint32_t;

namespace detail {

template <class T>
void require_rank2(const Tensor<T>& t, const char* op) {
  require(t.rank() == 2, Errc::dimension, std::string(op) + " expects a rank-2 tensor, got " + shape_str(t.shape()));
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), Errc::dimension,
          std::string(op) + " shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <class T>
void axpy(Tensor<T>& dst, const Tensor<T>& src, T alpha = T{1}) {
  T* d = dst.ptr();
  const T* s = src.ptr();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += alpha * s[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Value-level kernels, shared by the tape ops and by inference-only callers.

template <class T>
Tensor<T> matmul_value(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  require(a.cols() == b.rows(), Errc::dimension,
          "matmul inner dimensions disagree: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor<T> out({a.rows(), b.cols()});
  as_matrix(out).noalias() = as_matrix(a) * as_matrix(b);
  return out;
}

// Stable softmax along `axis` for tensors of any rank.
template <class T>
Tensor<T> softmax_value(const Tensor<T>& x, std::size_t axis) {
  require(axis < x.rank(), Errc::dimension, "softmax axis " + std::to_string(axis) + " out of range");
  Tensor<T> y(x.shape());
  const std::size_t n = x.dim(axis);
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t outer = x.size() / (n * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T m = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < n; ++j) m = std::max(m, x[base + j * inner]);
      T s{0};
      for (std::size_t j = 0; j < n; ++j) {
        const T e = std::exp(x[base + j * inner] - m);
        y[base + j * inner] = e;
        s += e;
      }
      for (std::size_t j = 0; j < n; ++j) y[base + j * inner] /= s;
    }
  }
  return y;
}

template <class T>
T logsumexp(std::span<const T> row) {
  T m = -std::numeric_limits<T>::infinity();
  for (T v : row) m = std::max(m, v);
  if (!std::isfinite(m)) return m;
  T s{0};
  for (T v : row) s += std::exp(v - m);
  return m + std::log(s);
}

// ---------------------------------------------------------------------------
// Tape ops.

template <class T>
Var matmul(Tape<T>& tape, Var a, Var b) {
  Tensor<T> out = matmul_value(tape.value(a), tape.value(b));
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    const auto G = as_matrix(g);
    if (Tensor<T>* da = t.grad_sink(a)) as_matrix(*da).noalias() += G * as_matrix(t.value(b)).transpose();
    if (Tensor<T>* db = t.grad_sink(b)) as_matrix(*db).noalias() += as_matrix(t.value(a)).transpose() * G;
  });
}

template <class T>
Var add(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& x = tape.value(a);
  const Tensor<T>& y = tape.value(b);
  detail::require_same_shape(x, y, "add");
  Tensor<T> out = x;
  detail::axpy(out, y);
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    if (Tensor<T>* da = t.grad_sink(a)) detail::axpy(*da, g);
    if (Tensor<T>* db = t.grad_sink(b)) detail::axpy(*db, g);
  });
}

template <class T>
Var mul(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& x = tape.value(a);
  const Tensor<T>& y = tape.value(b);
  detail::require_same_shape(x, y, "mul");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(a);
    const Tensor<T>& yv = t.value(b);
    if (Tensor<T>* da = t.grad_sink(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*da)[i] += g[i] * yv[i];
    if (Tensor<T>* db = t.grad_sink(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*db)[i] += g[i] * xv[i];
  });
}

template <class T>
Var scale(Tape<T>& tape, Var a, T c) {
  Tensor<T> out = tape.value(a);
  for (T& v : out.data()) v *= c;
  return tape.record(std::move(out), {a}, [a, c](Tape<T>& t, const Tensor<T>& g) {
    if (Tensor<T>* da = t.grad_sink(a)) detail::axpy(*da, g, c);
  });
}

template <class T>
Var square(Tape<T>& tape, Var a) {
  return mul(tape, a, a);
}

template <class T>
Var sum(Tape<T>& tape, Var a) {
  const Tensor<T>& x = tape.value(a);
  T s{0};
  for (T v : x.data()) s += v;
  return tape.record(Tensor<T>::scalar(s), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    if (Tensor<T>* da = t.grad_sink(a))
      for (T& v : da->data()) v += g[0];
  });
}

template <class T>
Var mean(Tape<T>& tape, Var a) {
  const std::size_t n = tape.value(a).size();
  return scale(tape, sum(tape, a), T{1} / static_cast<T>(n));
}

template <class T>
Var softmax(Tape<T>& tape, Var x, std::size_t axis) {
  Tensor<T> y = softmax_value(tape.value(x), axis);
  return tape.record(std::move(y), {x}, [x, axis](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>* dx = t.grad_sink(x);
    if (!dx) return;
    // dx = y * (g - <g, y>) along the axis. Recompute y rather than store it.
    const Tensor<T> yv = softmax_value(t.value(x), axis);
    const std::size_t n = yv.dim(axis);
    std::size_t inner = 1;
    for (std::size_t i = axis + 1; i < yv.rank(); ++i) inner *= yv.dim(i);
    const std::size_t outer = yv.size() / (n * inner);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        T dot{0};
        for (std::size_t j = 0; j < n; ++j) dot += g[base + j * inner] * yv[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t k = base + j * inner;
          (*dx)[k] += yv[k] * (g[k] - dot);
        }
      }
    }
  });
}

// y_i = gain_i * x_i / sqrt(mean(x^2) + eps), applied to each row of x.
template <class T>
Var rmsnorm(Tape<T>& tape, Var x, Var gain, T eps) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& gv = tape.value(gain);
  require(gv.rank() == 1 && gv.dim(0) == xv.cols(), Errc::dimension,
          "rmsnorm gain " + shape_str(gv.shape()) + " does not match last dimension of " + shape_str(xv.shape()));
  const std::size_t rows = xv.size() / xv.cols();
  const std::size_t n = xv.cols();
  Tensor<T> y(xv.shape());
  std::vector<T> inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.ptr() + r * n;
    T ss{0};
    for (std::size_t i = 0; i < n; ++i) ss += xr[i] * xr[i];
    const T ms = ss / static_cast<T>(n) + eps;
    inv[r] = ms > T{0} ? T{1} / std::sqrt(ms) : T{0};
    T* yr = y.ptr() + r * n;
    for (std::size_t i = 0; i < n; ++i) yr[i] = gv[i] * xr[i] * inv[r];
  }
  return tape.record(std::move(y), {x, gain},
                     [x, gain, inv = std::move(inv), n](Tape<T>& t, const Tensor<T>& g) {
                       const Tensor<T>& xv = t.value(x);
                       const Tensor<T>& gv = t.value(gain);
                       Tensor<T>* dx = t.grad_sink(x);
                       Tensor<T>* dg = t.grad_sink(gain);
                       for (std::size_t r = 0; r < inv.size(); ++r) {
                         const T* xr = xv.ptr() + r * n;
                         const T* gr = g.ptr() + r * n;
                         const T s = inv[r];
                         if (dg)
                           for (std::size_t i = 0; i < n; ++i) (*dg)[i] += gr[i] * xr[i] * s;
                         if (dx) {
                           // d/dx_j: s*gain_j*g_j - s^3/n * x_j * sum_i g_i gain_i x_i
                           T dot{0};
                           for (std::size_t i = 0; i < n; ++i) dot += gr[i] * gv[i] * xr[i];
                           const T c = s * s * s * dot / static_cast<T>(n);
                           T* dr = dx->ptr() + r * n;
                           for (std::size_t i = 0; i < n; ++i) dr[i] += s * gv[i] * gr[i] - c * xr[i];
                         }
                       }
                     });
}

// Mean negative log-likelihood over the positions where mask is true.
template <class T>
Var cross_entropy_masked(Tape<T>& tape, Var logits, std::span<const TokenId> targets,
                         std::span<const bool> mask) {
  const Tensor<T>& z = tape.value(logits);
  detail::require_rank2(z, "cross_entropy_masked");
  const std::size_t rows = z.rows();
  const std::size_t vocab = z.cols();
  require(targets.size() == rows && mask.size() == rows, Errc::dimension,
          "cross_entropy_masked: targets/mask length must equal logits rows");
  std::size_t count = 0;
  for (bool m : mask) count += m ? 1 : 0;
  require(count > 0, Errc::empty_mask, "cross_entropy_masked: mask selects no positions");

  // Accumulate in long double: n copies of the same loss sum exactly for
  // n < 2^11, so uniform logits give exactly ln(V).
  long double total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    require(targets[r] < vocab, Errc::input, "target id out of vocabulary");
    const auto row = z.row(r);
    total += static_cast<long double>(logsumexp<T>(row) - row[targets[r]]);
  }
  const T loss = static_cast<T>(total / static_cast<long double>(count));
  std::vector<TokenId> tgt(targets.begin(), targets.end());
  std::vector<bool> msk(mask.begin(), mask.end());
  return tape.record(Tensor<T>::scalar(loss), {logits},
                     [logits, tgt = std::move(tgt), msk = std::move(msk), count](Tape<T>& t, const Tensor<T>& g) {
                       Tensor<T>* dz = t.grad_sink(logits);
                       if (!dz) return;
                       const Tensor<T>& zv = t.value(logits);
                       const std::size_t vocab = zv.cols();
                       const T w = g[0] / static_cast<T>(count);
                       for (std::size_t r = 0; r < tgt.size(); ++r) {
                         if (!msk[r]) continue;
                         const auto row = zv.row(r);
                         const T lse = logsumexp<T>(row);
                         T* dr = dz->ptr() + r * vocab;
                         for (std::size_t j = 0; j < vocab; ++j) dr[j] += w * std::exp(row[j] - lse);
                         dr[tgt[r]] -= w;
                       }
                     });
}

template <class T>
Var cross_entropy(Tape<T>& tape, Var logits, std::span<const TokenId> targets) {
  // std::vector<bool> is not contiguous, so build the mask in a plain array.
  std::unique_ptr<bool[]> m(new bool[targets.size()]);
  std::fill_n(m.get(), targets.size(), true);
  return cross_entropy_masked(tape, logits, targets, std::span<const bool>(m.get(), targets.size()));
}

// Row lookup: out[i] = table[ids[i]].
template <class T>
Var embedding(Tape<T>& tape, Var table, std::span<const TokenId> ids) {
  const Tensor<T>& tv = tape.value(table);
  detail::require_rank2(tv, "embedding");
  const std::size_t d = tv.cols();
  Tensor<T> out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] < tv.rows(), Errc::input,
            "token id " + std::to_string(ids[i]) + " >= vocab " + std::to_string(tv.rows()));
    std::copy_n(tv.ptr() + ids[i] * d, d, out.ptr() + i * d);
  }
  std::vector<TokenId> idv(ids.begin(), ids.end());
  return tape.record(std::move(out), {table}, [table, idv = std::move(idv), d](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>* dt = t.grad_sink(table);
    if (!dt) return;
    for (std::size_t i = 0; i < idv.size(); ++i) {
      T* dst = dt->ptr() + idv[i] * d;
      const T* src = g.ptr() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

// silu(gate) * up, elementwise.
template <class T>
Var swiglu(Tape<T>& tape, Var gate, Var up) {
  const Tensor<T>& gv = tape.value(gate);
  const Tensor<T>& uv = tape.value(up);
  detail::require_same_shape(gv, uv, "swiglu");
  Tensor<T> out(gv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T sig = T{1} / (T{1} + std::exp(-gv[i]));
    out[i] = gv[i] * sig * uv[i];
  }
  return tape.record(std::move(out), {gate, up}, [gate, up](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& gv = t.value(gate);
    const Tensor<T>& uv = t.value(up);
    Tensor<T>* dg = t.grad_sink(gate);
    Tensor<T>* du = t.grad_sink(up);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T sig = T{1} / (T{1} + std::exp(-gv[i]));
      const T silu = gv[i] * sig;
      if (du) (*du)[i] += g[i] * silu;
      if (dg) (*dg)[i] += g[i] * uv[i] * sig * (T{1} + gv[i] * (T{1} - sig));
    }
  });
}

template <class T>
Var gather_rows(Tape<T>& tape, Var x, std::span<const std::uint32_t> rows) {
  const Tensor<T>& xv = tape.value(x);
  detail::require_rank2(xv, "gather_rows");
  const std::size_t d = xv.cols();
  Tensor<T> out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < xv.rows(), Errc::dimension, "gather_rows index out of range");
    std::copy_n(xv.ptr() + rows[i] * d, d, out.ptr() + i * d);
  }
  std::vector<std::uint32_t> idx(rows.begin(), rows.end());
  return tape.record(std::move(out), {x}, [x, idx = std::move(idx), d](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>* dx = t.grad_sink(x);
    if (!dx) return;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      T* dst = dx->ptr() + idx[i] * d;
      const T* src = g.ptr() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

/// One scattered contribution: rows of `value` are added into output rows `rows`.
struct RowScatter {
  Var value;
  std::vector<std::uint32_t> rows;
};

// out = sum over parts of scatter(part.value, part.rows), shape [n_rows x d].
template <class T>
Var scatter_add_rows(Tape<T>& tape, std::size_t n_rows, std::size_t d, std::vector<RowScatter> parts) {
  Tensor<T> out({n_rows, d});
  std::vector<Var> inputs;
  inputs.reserve(parts.size());
  for (const RowScatter& p : parts) {
    const Tensor<T>& v = tape.value(p.value);
    require(v.rank() == 2 && v.cols() == d && v.rows() == p.rows.size(), Errc::dimension,
            "scatter_add_rows part shape " + shape_str(v.shape()) + " inconsistent with its row list");
    for (std::size_t i = 0; i < p.rows.size(); ++i) {
      require(p.rows[i] < n_rows, Errc::dimension, "scatter_add_rows index out of range");
      T* dst = out.ptr() + p.rows[i] * d;
      const T* src = v.ptr() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
    inputs.push_back(p.value);
  }
  return tape.record(std::move(out), std::span<const Var>(inputs),
                     [parts = std::move(parts), d](Tape<T>& t, const Tensor<T>& g) {
                       for (const RowScatter& p : parts) {
                         Tensor<T>* dv = t.grad_sink(p.value);
                         if (!dv) continue;
                         for (std::size_t i = 0; i < p.rows.size(); ++i) {
                           const T* src = g.ptr() + p.rows[i] * d;
                           T* dst = dv->ptr() + i * d;
                           for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                         }
                       }
                     });
}

// out[i, :] = y[i, :] * weights[rows[i], col]. Differentiable in both y and weights.
template <class T>
Var scale_rows_by(Tape<T>& tape, Var y, Var weights, std::span<const std::uint32_t> rows, std::size_t col) {
  const Tensor<T>& yv = tape.value(y);
  const Tensor<T>& wv = tape.value(weights);
  detail::require_rank2(yv, "scale_rows_by");
  detail::require_rank2(wv, "scale_rows_by");
  require(yv.rows() == rows.size() && col < wv.cols(), Errc::dimension, "scale_rows_by shape mismatch");
  const std::size_t d = yv.cols();
  Tensor<T> out(yv.shape());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const T w = wv(rows[i], col);
    for (std::size_t j = 0; j < d; ++j) out(i, j) = yv(i, j) * w;
  }
  std::vector<std::uint32_t> idx(rows.begin(), rows.end());
  return tape.record(std::move(out), {y, weights},
                     [y, weights, idx = std::move(idx), col, d](Tape<T>& t, const Tensor<T>& g) {
                       const Tensor<T>& yv = t.value(y);
                       const Tensor<T>& wv = t.value(weights);
                       Tensor<T>* dy = t.grad_sink(y);
                       Tensor<T>* dw = t.grad_sink(weights);
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         const T w = wv(idx[i], col);
                         T acc{0};
                         for (std::size_t j = 0; j < d; ++j) {
                           if (dy) (*dy)(i, j) += g(i, j) * w;
                           acc += g(i, j) * yv(i, j);
                         }
                         if (dw) (*dw)(idx[i], col) += acc;
                       }
                     });
}

// Dense [N x E] gates: softmax over each row's selected columns, zero elsewhere.
// `selected` is row-major [N x k].
template <class T>
Var restricted_softmax(Tape<T>& tape, Var logits, std::span<const std::uint32_t> selected, std::size_t k) {
  const Tensor<T>& s = tape.value(logits);
  detail::require_rank2(s, "restricted_softmax");
  const std::size_t n = s.rows();
  const std::size_t e = s.cols();
  require(k >= 1 && k <= e && selected.size() == n * k, Errc::dimension, "restricted_softmax selection shape");
  Tensor<T> gates({n, e});
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint32_t* sel = selected.data() + r * k;
    T m = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < k; ++j) m = std::max(m, s(r, sel[j]));
    T z{0};
    for (std::size_t j = 0; j < k; ++j) z += std::exp(s(r, sel[j]) - m);
    for (std::size_t j = 0; j < k; ++j) gates(r, sel[j]) = std::exp(s(r, sel[j]) - m) / z;
  }
  std::vector<std::uint32_t> sel(selected.begin(), selected.end());
  return tape.record(std::move(gates), {logits}, [logits, sel = std::move(sel), k](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>* ds = t.grad_sink(logits);
    if (!ds) return;
    const Tensor<T>& s = t.value(logits);
    const std::size_t n = s.rows();
    std::vector<T> p(k);
    for (std::size_t r = 0; r < n; ++r) {
      const std::uint32_t* idx = sel.data() + r * k;
      T m = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < k; ++j) m = std::max(m, s(r, idx[j]));
      T z{0};
      for (std::size_t j = 0; j < k; ++j) z += (p[j] = std::exp(s(r, idx[j]) - m));
      T dot{0};
      for (std::size_t j = 0; j < k; ++j) {
        p[j] /= z;
        dot += p[j] * g(r, idx[j]);
      }
      for (std::size_t j = 0; j < k; ++j) (*ds)(r, idx[j]) += p[j] * (g(r, idx[j]) - dot);
    }
  });
}

// Mean over rows: [N x C] -> [C].
template <class T>
Var column_mean(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  detail::require_rank2(xv, "column_mean");
  const std::size_t n = xv.rows();
  const std::size_t c = xv.cols();
  Tensor<T> out({c});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < c; ++j) out[j] += xv(r, j);
  for (T& v : out.data()) v /= static_cast<T>(n);
  return tape.record(std::move(out), {x}, [x, n, c](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>* dx = t.grad_sink(x);
    if (!dx) return;
    const T w = T{1} / static_cast<T>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < c; ++j) (*dx)(r, j) += g[j] * w;
  });
}

// Scalar sum_i x_i * w_i with constant weights.
template <class T>
Var weighted_sum(Tape<T>& tape, Var x, std::vector<T> weights) {
  const Tensor<T>& xv = tape.value(x);
  require(weights.size() == xv.size(), Errc::dimension, "weighted_sum weight count mismatch");
  T s{0};
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i] * weights[i];
  return tape.record(Tensor<T>::scalar(s), {x}, [x, w = std::move(weights)](Tape<T>& t, const Tensor<T>& g) {
    if (Tensor<T>* dx = t.grad_sink(x))
      for (std::size_t i = 0; i < w.size(); ++i) (*dx)[i] += g[0] * w[i];
  });
}

// Row-wise logsumexp: [N x C] -> [N].
template <class T>
Var logsumexp_rows(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  detail::require_rank2(xv, "logsumexp_rows");
  Tensor<T> out({xv.rows()});
  for (std::size_t r = 0; r < xv.rows(); ++r) out[r] = logsumexp<T>(xv.row(r));
  return tape.record(std::move(out), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>* dx = t.grad_sink(x);
    if (!dx) return;
    const Tensor<T>& xv = t.value(x);
    for (std::size_t r = 0; r < xv.rows(); ++r) {
      const auto row = xv.row(r);
      const T lse = logsumexp<T>(row);
      for (std::size_t j = 0; j < row.size(); ++j) (*dx)(r, j) += g[r] * std::exp(row[j] - lse);
    }
  });
}

}  // namespace moelab::numerics
