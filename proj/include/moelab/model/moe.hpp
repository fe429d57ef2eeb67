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

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "moelab/model/routing.hpp"
#include "moelab/numerics/ops.hpp"

namespace moelab::model {

using numerics::Tape;
using numerics::Var;

/// Input/output nodes of one dense projection y = x * W, kept so curvature
/// probes can read activations and output gradients after backward.
struct LinearTrace {
  std::string name;
  Var input;
  Var output;
};

struct ExpertVars {
  Var w_gate;
  Var w_up;
  Var w_down;
};

template <class T>
struct MoEOutput {
  Var y;              // [N x d]
  Var router_logits;  // [N x E]
  Var gates;          // [N x E] restricted softmax
  Var probs;          // [N x E] full softmax, feeds the load-balance term
  RouterDecision<T> decision;
  MoELayerStats stats;
};

/// Dropless token-choice MoE feed-forward block on the tape.
///
/// Tokens are grouped by destination expert; each expert runs one batched
/// SwiGLU over its group, the result is scaled by the token's gate, and the
/// groups are scattered back into token order.
template <class T>
MoEOutput<T> moe_block(Tape<T>& tape, Var x, Var w_router, std::span<const ExpertVars> experts, std::size_t top_k,
                       std::vector<LinearTrace>* traces = nullptr, const std::string& prefix = {}) {
  const std::size_t n = tape.value(x).rows();
  const std::size_t d = tape.value(x).cols();
  const std::size_t ne = experts.size();
  require(tape.value(w_router).cols() == ne, Errc::dimension, "router width does not match expert count");

  MoEOutput<T> out;
  out.router_logits = numerics::matmul(tape, x, w_router);
  if (traces) traces->push_back({prefix + "router", x, out.router_logits});
  out.decision = route_logits(tape.value(out.router_logits), top_k);
  out.stats = layer_stats(out.decision);
  out.gates = numerics::restricted_softmax(tape, out.router_logits, out.decision.selected, top_k);
  out.probs = numerics::softmax(tape, out.router_logits, 1);

  std::vector<std::vector<std::uint32_t>> groups(ne);
  for (std::size_t r = 0; r < n; ++r)
    for (auto e : out.decision.selected_row(r)) groups[e].push_back(static_cast<std::uint32_t>(r));

  std::vector<numerics::RowScatter> parts;
  for (std::size_t e = 0; e < ne; ++e) {
    if (groups[e].empty()) continue;
    const ExpertVars& ev = experts[e];
    const std::string ep = prefix + "experts." + std::to_string(e) + ".";
    Var xe = numerics::gather_rows(tape, x, groups[e]);
    Var g = numerics::matmul(tape, xe, ev.w_gate);
    Var u = numerics::matmul(tape, xe, ev.w_up);
    Var a = numerics::swiglu(tape, g, u);
    Var ye = numerics::matmul(tape, a, ev.w_down);
    if (traces) {
      traces->push_back({ep + "w_gate", xe, g});
      traces->push_back({ep + "w_up", xe, u});
      traces->push_back({ep + "w_down", a, ye});
    }
    Var scaled = numerics::scale_rows_by(tape, ye, out.gates, groups[e], e);
    parts.push_back({scaled, std::move(groups[e])});
  }
  out.y = numerics::scatter_add_rows(tape, n, d, std::move(parts));
  return out;
}

/// Expert weights for the value-level entry point.
template <class T>
struct ExpertWeights {
  const Tensor<T>* w_gate;
  const Tensor<T>* w_up;
  const Tensor<T>* w_down;
};

/// Value-level MoE forward for a precomputed decision: y = sum_{i in K} g_i FFN_i(x).
template <class T>
std::pair<Tensor<T>, MoELayerStats> moe_forward(const Tensor<T>& x, const RouterDecision<T>& decision,
                                                std::span<const ExpertWeights<T>> experts) {
  require(decision.n_tokens() == x.rows() && decision.n_experts() == experts.size(), Errc::dimension,
          "moe_forward: decision does not match inputs");
  Tape<T> tape;
  Var xv = tape.ref(x, false);
  Var gates = tape.ref(decision.gates, false);
  std::vector<std::vector<std::uint32_t>> groups(experts.size());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (auto e : decision.selected_row(r)) groups[e].push_back(static_cast<std::uint32_t>(r));
  std::vector<numerics::RowScatter> parts;
  for (std::size_t e = 0; e < experts.size(); ++e) {
    if (groups[e].empty()) continue;
    Var xe = numerics::gather_rows(tape, xv, groups[e]);
    Var g = numerics::matmul(tape, xe, tape.ref(*experts[e].w_gate, false));
    Var u = numerics::matmul(tape, xe, tape.ref(*experts[e].w_up, false));
    Var ye = numerics::matmul(tape, numerics::swiglu(tape, g, u), tape.ref(*experts[e].w_down, false));
    parts.push_back({numerics::scale_rows_by(tape, ye, gates, groups[e], e), std::move(groups[e])});
  }
  Var y = numerics::scatter_add_rows(tape, x.rows(), x.cols(), std::move(parts));
  return {tape.value(y), layer_stats(decision)};
}

}  // namespace moelab::model
