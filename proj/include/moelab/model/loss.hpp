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

#include <span>
#include <vector>

#include "moelab/model/transformer.hpp"

namespace moelab::model {

constexpr double kDefaultLbCoef = 1e-2;
constexpr double kDefaultRzCoef = 1e-3;

/// total = ce + alpha * lb + beta * rz, evaluated in that order in double.
struct LossBreakdown {
  double ce = 0.0;
  double lb = 0.0;
  double rz = 0.0;
  double alpha = kDefaultLbCoef;
  double beta = kDefaultRzCoef;
  double total = 0.0;

  static double combine(double ce, double lb, double rz, double alpha, double beta) {
    return ce + alpha * lb + beta * rz;
  }
};

template <class T>
struct LossVars {
  Var total;
  Var ce;
  Var lb;
  Var rz;
  LossBreakdown breakdown;
};

/// Combined training objective on the tape. CE is the mean over masked
/// positions; lb averages the per-layer load-balance term; rz pools the
/// squared router logsumexp over every token of every layer.
template <class T>
LossVars<T> combined_loss(Tape<T>& tape, const ForwardResult<T>& fwd, std::span<const TokenId> targets,
                          std::span<const bool> mask, double alpha = kDefaultLbCoef, double beta = kDefaultRzCoef) {
  require(alpha >= 0.0 && beta >= 0.0, Errc::contract, "auxiliary loss coefficients must be non-negative");
  require(!fwd.layers.empty(), Errc::contract, "combined_loss needs at least one MoE layer");
  LossVars<T> out;
  out.ce = numerics::cross_entropy_masked(tape, fwd.logits, targets, mask);

  const auto n_layers = static_cast<T>(fwd.layers.size());
  Var lb_sum, rz_sum;
  std::size_t rz_rows = 0;
  for (const MoEOutput<T>& layer : fwd.layers) {
    const MoELayerStats& s = layer.stats;
    const double e = static_cast<double>(s.f.size());
    std::vector<T> w(s.f.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(e * s.f[i] / static_cast<double>(s.top_k));
    Var lb_layer = numerics::weighted_sum(tape, numerics::column_mean(tape, layer.probs), std::move(w));
    Var lse = numerics::logsumexp_rows(tape, layer.router_logits);
    Var rz_layer = numerics::sum(tape, numerics::square(tape, lse));
    rz_rows += tape.value(lse).size();
    lb_sum = lb_sum.valid() ? numerics::add(tape, lb_sum, lb_layer) : lb_layer;
    rz_sum = rz_sum.valid() ? numerics::add(tape, rz_sum, rz_layer) : rz_layer;
  }
  out.lb = numerics::scale(tape, lb_sum, T{1} / n_layers);
  out.rz = numerics::scale(tape, rz_sum, T{1} / static_cast<T>(rz_rows));
  out.total = numerics::add(tape, out.ce,
                            numerics::add(tape, numerics::scale(tape, out.lb, static_cast<T>(alpha)),
                                          numerics::scale(tape, out.rz, static_cast<T>(beta))));

  LossBreakdown& b = out.breakdown;
  b.ce = static_cast<double>(tape.value(out.ce).item());
  b.lb = static_cast<double>(tape.value(out.lb).item());
  b.rz = static_cast<double>(tape.value(out.rz).item());
  b.alpha = alpha;
  b.beta = beta;
  b.total = LossBreakdown::combine(b.ce, b.lb, b.rz, alpha, beta);
  return out;
}

/// Value-level form: CE over masked rows of `logits`, lb from per-layer stats,
/// rz from the per-layer router logits.
template <class T>
LossBreakdown combined_loss(const Tensor<T>& logits, std::span<const TokenId> targets, std::span<const bool> mask,
                            std::span<const MoELayerStats> stats, std::span<const Tensor<T>> router_logits,
                            double alpha = kDefaultLbCoef, double beta = kDefaultRzCoef) {
  require(alpha >= 0.0 && beta >= 0.0, Errc::contract, "auxiliary loss coefficients must be non-negative");
  Tape<T> tape;
  Var z = tape.ref(logits, false);
  LossBreakdown b;
  b.ce = static_cast<double>(tape.value(numerics::cross_entropy_masked(tape, z, targets, mask)).item());
  b.lb = lb_loss(stats);
  b.rz = rz_loss<T>(router_logits);
  b.alpha = alpha;
  b.beta = beta;
  b.total = LossBreakdown::combine(b.ce, b.lb, b.rz, alpha, beta);
  return b;
}

}  // namespace moelab::model
