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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "moelab/numerics/ops.hpp"

namespace moelab::model {

using numerics::Tensor;

/// Per-token routing outcome for one MoE layer.
template <class T>
struct RouterDecision {
  Tensor<T> logits;                     // [N x E] raw router scores s
  std::vector<std::uint32_t> selected;  // [N x k], each row in descending-logit order
  Tensor<T> gates;                      // [N x E], nonzero only on selected entries
  std::size_t top_k = 0;

  std::size_t n_tokens() const { return logits.rows(); }
  std::size_t n_experts() const { return logits.cols(); }
  std::span<const std::uint32_t> selected_row(std::size_t r) const {
    return {selected.data() + r * top_k, top_k};
  }
};

/// Indices of the k largest entries of each row; ties go to the lower index.
template <class T>
std::vector<std::uint32_t> select_top_k(const Tensor<T>& logits, std::size_t k) {
  require(logits.rank() == 2, Errc::dimension, "router logits must be [tokens x experts]");
  const std::size_t n = logits.rows();
  const std::size_t e = logits.cols();
  require(k >= 1 && k <= e, Errc::config,
          "top_k " + std::to_string(k) + " exceeds effective experts " + std::to_string(e));
  std::vector<std::uint32_t> out(n * k);
  std::vector<std::uint32_t> idx(e);
  for (std::size_t r = 0; r < n; ++r) {
    std::iota(idx.begin(), idx.end(), 0u);
    const auto row = logits.row(r);
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::uint32_t a, std::uint32_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
    std::copy_n(idx.begin(), k, out.begin() + static_cast<std::ptrdiff_t>(r * k));
  }
  return out;
}

// Gates are the softmax restricted to the selected logits.
template <class T>
RouterDecision<T> route_logits(Tensor<T> logits, std::size_t k) {
  RouterDecision<T> d;
  d.selected = select_top_k(logits, k);
  d.top_k = k;
  d.gates = Tensor<T>(logits.shape());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto sel = std::span<const std::uint32_t>(d.selected.data() + r * k, k);
    T m = logits(r, sel[0]);
    T z{0};
    for (auto i : sel) z += std::exp(logits(r, i) - m);
    for (auto i : sel) d.gates(r, i) = std::exp(logits(r, i) - m) / z;
  }
  d.logits = std::move(logits);
  return d;
}

// s = x * W_router, then top-k selection and gate normalization.
template <class T>
RouterDecision<T> route(const Tensor<T>& x, const Tensor<T>& w_router, std::size_t k) {
  require(w_router.rank() == 2 && w_router.rows() == x.cols(), Errc::dimension,
          "router weight must be [d x experts], got " + numerics::shape_str(w_router.shape()));
  require(k <= w_router.cols(), Errc::config,
          "top_k " + std::to_string(k) + " exceeds effective experts " + std::to_string(w_router.cols()));
  return route_logits(numerics::matmul_value(x, w_router), k);
}

/// Load statistics for one layer and one batch.
/// f[i]: routed-token count of expert i divided by token count (sums to k).
/// P[i]: mean full-softmax router probability of expert i.
struct MoELayerStats {
  std::vector<double> f;
  std::vector<double> P;
  std::size_t tokens = 0;
  std::size_t top_k = 0;
};

template <class T>
MoELayerStats layer_stats(const RouterDecision<T>& d) {
  const std::size_t n = d.n_tokens();
  const std::size_t e = d.n_experts();
  MoELayerStats s;
  s.tokens = n;
  s.top_k = d.top_k;
  s.f.assign(e, 0.0);
  s.P.assign(e, 0.0);
  std::vector<std::size_t> counts(e, 0);
  for (auto i : d.selected) ++counts[i];
  for (std::size_t i = 0; i < e; ++i) s.f[i] = static_cast<double>(counts[i]) / static_cast<double>(n);
  const Tensor<T> probs = numerics::softmax_value(d.logits, 1);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < e; ++i) s.P[i] += static_cast<double>(probs(r, i));
  for (double& p : s.P) p /= static_cast<double>(n);
  return s;
}

// E * sum_i (f_i / k) * P_i for one layer. f is renormalized by k so the
// minimum under uniform routing is exactly 1 for every k.
inline double lb_loss(const MoELayerStats& s) {
  const double e = static_cast<double>(s.f.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < s.f.size(); ++i) acc += (s.f[i] / static_cast<double>(s.top_k)) * s.P[i];
  return e * acc;
}

// Averaged over layers.
inline double lb_loss(std::span<const MoELayerStats> layers) {
  require(!layers.empty(), Errc::contract, "lb_loss needs at least one layer");
  double acc = 0.0;
  for (const auto& s : layers) acc += lb_loss(s);
  return acc / static_cast<double>(layers.size());
}

// Mean over tokens of logsumexp(s)^2, pooled over every logits tensor given.
template <class T>
double rz_loss(std::span<const Tensor<T>> logits) {
  double acc = 0.0;
  std::size_t rows = 0;
  for (const auto& s : logits) {
    for (std::size_t r = 0; r < s.rows(); ++r) {
      const double lse = static_cast<double>(numerics::logsumexp<T>(s.row(r)));
      acc += lse * lse;
    }
    rows += s.rows();
  }
  require(rows > 0, Errc::contract, "rz_loss needs at least one token");
  return acc / static_cast<double>(rows);
}

template <class T>
double rz_loss(const Tensor<T>& logits) {
  return rz_loss<T>(std::span<const Tensor<T>>(&logits, 1));
}

}  // namespace moelab::model
