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

#include <cmath>
#include <limits>
#include <vector>

#include "moelab/numerics/ops.hpp"

namespace moelab::model {

using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

namespace detail {

template <class T>
using StridedMap = Eigen::Map<numerics::RowMatrix<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstStridedMap = Eigen::Map<const numerics::RowMatrix<T>, 0, Eigen::OuterStride<>>;

// cos/sin tables [seq_len x head_dim/2] for angle = pos * base^(-2i/head_dim).
template <class T>
struct RopeTable {
  std::vector<T> cos, sin;
  std::size_t half = 0;

  RopeTable(std::size_t seq_len, std::size_t head_dim, double base) : half(head_dim / 2) {
    cos.resize(seq_len * half);
    sin.resize(seq_len * half);
    for (std::size_t p = 0; p < seq_len; ++p) {
      for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
        const double angle = static_cast<double>(p) * freq;
        cos[p * half + i] = static_cast<T>(std::cos(angle));
        sin[p * half + i] = static_cast<T>(std::sin(angle));
      }
    }
  }
};

// Rotates interleaved pairs (2i, 2i+1) of each head; sign = -1 applies the inverse.
template <class T>
void rope_apply(const T* src, T* dst, std::size_t rows, std::size_t seq_len, std::size_t d, std::size_t head_dim,
                const RopeTable<T>& tab, T sign, bool accumulate) {
  const std::size_t heads = d / head_dim;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t pos = r % seq_len;
    const T* c = tab.cos.data() + pos * tab.half;
    const T* s = tab.sin.data() + pos * tab.half;
    for (std::size_t h = 0; h < heads; ++h) {
      const T* x = src + r * d + h * head_dim;
      T* y = dst + r * d + h * head_dim;
      for (std::size_t i = 0; i < tab.half; ++i) {
        const T x0 = x[2 * i], x1 = x[2 * i + 1];
        const T sn = sign * s[i];
        const T y0 = x0 * c[i] - x1 * sn;
        const T y1 = x0 * sn + x1 * c[i];
        if (accumulate) {
          y[2 * i] += y0;
          y[2 * i + 1] += y1;
        } else {
          y[2 * i] = y0;
          y[2 * i + 1] = y1;
        }
      }
    }
  }
}

}  // namespace detail

/// Rotary position embedding over rows of x [B*seq_len x d]; the position of
/// row r is r mod seq_len.
template <class T>
Var rope(Tape<T>& tape, Var x, std::size_t seq_len, std::size_t n_heads, double base) {
  const Tensor<T>& xv = tape.value(x);
  require(xv.rank() == 2 && xv.rows() % seq_len == 0 && xv.cols() % n_heads == 0, Errc::dimension,
          "rope input " + numerics::shape_str(xv.shape()) + " incompatible with seq_len/heads");
  const std::size_t d = xv.cols();
  const std::size_t hd = d / n_heads;
  require(hd % 2 == 0, Errc::dimension, "rope needs an even head dimension");
  auto tab = std::make_shared<detail::RopeTable<T>>(seq_len, hd, base);
  Tensor<T> out(xv.shape());
  detail::rope_apply(xv.ptr(), out.ptr(), xv.rows(), seq_len, d, hd, *tab, T{1}, false);
  return tape.record(std::move(out), {x}, [x, tab, seq_len, d, hd](Tape<T>& t, const Tensor<T>& g) {
    if (Tensor<T>* dx = t.grad_sink(x)) detail::rope_apply(g.ptr(), dx->ptr(), g.rows(), seq_len, d, hd, *tab, T{-1}, true);
  });
}

/// Multi-head causal self-attention over B packed sequences of length seq_len.
/// q, k, v: [B*seq_len x d] with heads laid out as contiguous column blocks.
template <class T>
Var causal_attention(Tape<T>& tape, Var q, Var k, Var v, std::size_t seq_len, std::size_t n_heads) {
  using Mat = numerics::RowMatrix<T>;
  const Tensor<T>& qv = tape.value(q);
  const Tensor<T>& kv = tape.value(k);
  const Tensor<T>& vv = tape.value(v);
  require(qv.shape() == kv.shape() && qv.shape() == vv.shape(), Errc::dimension, "attention q/k/v shape mismatch");
  require(qv.rank() == 2 && qv.rows() % seq_len == 0 && qv.cols() % n_heads == 0, Errc::dimension,
          "attention input " + numerics::shape_str(qv.shape()) + " incompatible with seq_len/heads");
  const std::size_t d = qv.cols();
  const std::size_t hd = d / n_heads;
  const std::size_t batch = qv.rows() / seq_len;
  const std::size_t tt = seq_len;
  const T scale = T{1} / std::sqrt(static_cast<T>(hd));
  const auto ld = Eigen::OuterStride<>(static_cast<Eigen::Index>(d));
  const auto n = static_cast<Eigen::Index>(tt);
  const auto w = static_cast<Eigen::Index>(hd);

  auto probs = std::make_shared<std::vector<T>>(batch * n_heads * tt * tt);
  Tensor<T> out(qv.shape());
  Mat s(n, n);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t off = b * tt * d + h * hd;
      detail::ConstStridedMap<T> Q(qv.ptr() + off, n, w, ld);
      detail::ConstStridedMap<T> K(kv.ptr() + off, n, w, ld);
      detail::ConstStridedMap<T> V(vv.ptr() + off, n, w, ld);
      s.noalias() = Q * K.transpose();
      T* p = probs->data() + (b * n_heads + h) * tt * tt;
      for (std::size_t i = 0; i < tt; ++i) {
        T m = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j <= i; ++j) m = std::max(m, s(i, j) * scale);
        T z{0};
        for (std::size_t j = 0; j <= i; ++j) z += (p[i * tt + j] = std::exp(s(i, j) * scale - m));
        for (std::size_t j = 0; j <= i; ++j) p[i * tt + j] /= z;
        for (std::size_t j = i + 1; j < tt; ++j) p[i * tt + j] = T{0};
      }
      Eigen::Map<const Mat> P(p, n, n);
      detail::StridedMap<T> O(out.ptr() + off, n, w, ld);
      O.noalias() = P * V;
    }
  }
  return tape.record(
      std::move(out), {q, k, v}, [q, k, v, probs, tt, n_heads, d, hd, batch, scale](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& qv = t.value(q);
        const Tensor<T>& kv = t.value(k);
        const Tensor<T>& vv = t.value(v);
        Tensor<T>* dq = t.grad_sink(q);
        Tensor<T>* dk = t.grad_sink(k);
        Tensor<T>* dv = t.grad_sink(v);
        const auto ld = Eigen::OuterStride<>(static_cast<Eigen::Index>(d));
        const auto n = static_cast<Eigen::Index>(tt);
        const auto w = static_cast<Eigen::Index>(hd);
        Mat dp(n, n);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < n_heads; ++h) {
            const std::size_t off = b * tt * d + h * hd;
            Eigen::Map<const Mat> P(probs->data() + (b * n_heads + h) * tt * tt, n, n);
            detail::ConstStridedMap<T> dO(g.ptr() + off, n, w, ld);
            detail::ConstStridedMap<T> V(vv.ptr() + off, n, w, ld);
            if (dv) detail::StridedMap<T>(dv->ptr() + off, n, w, ld).noalias() += P.transpose() * dO;
            if (!dq && !dk) continue;
            dp.noalias() = dO * V.transpose();
            // dS = P .* (dP - rowsum(dP .* P)), folded with the 1/sqrt(hd) scale.
            for (Eigen::Index i = 0; i < n; ++i) {
              T dot{0};
              for (Eigen::Index j = 0; j <= i; ++j) dot += dp(i, j) * P(i, j);
              for (Eigen::Index j = 0; j < n; ++j) dp(i, j) = j <= i ? P(i, j) * (dp(i, j) - dot) * scale : T{0};
            }
            if (dq) {
              detail::ConstStridedMap<T> K(kv.ptr() + off, n, w, ld);
              detail::StridedMap<T>(dq->ptr() + off, n, w, ld).noalias() += dp * K;
            }
            if (dk) {
              detail::ConstStridedMap<T> Q(qv.ptr() + off, n, w, ld);
              detail::StridedMap<T>(dk->ptr() + off, n, w, ld).noalias() += dp.transpose() * Q;
            }
          }
        }
      });
}

}  // namespace moelab::model
