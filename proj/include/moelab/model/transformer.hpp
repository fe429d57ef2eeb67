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
#include <string>
#include <vector>

#include "moelab/model/attention.hpp"
#include "moelab/model/config.hpp"
#include "moelab/model/moe.hpp"
#include "moelab/model/params.hpp"

namespace moelab::model {

using numerics::TokenId;

struct ForwardOptions {
  bool params_require_grad = true;
  bool trace_linear = false;
};

template <class T>
struct ForwardResult {
  Var logits;                        // [N x vocab]
  std::vector<Var> params;           // aligned with ParameterStore::entries()
  std::vector<MoEOutput<T>> layers;  // one per transformer block
  std::vector<LinearTrace> traces;   // filled when trace_linear is set
};

/// Causal pre-norm decoder over B packed sequences of `seq_len` tokens each.
/// Every feed-forward block is an MoE layer.
template <class T>
ForwardResult<T> transformer_forward(Tape<T>& tape, const ModelConfig& cfg, const ParameterStore<T>& params,
                                     std::span<const TokenId> tokens, std::size_t seq_len,
                                     const ForwardOptions& opt = {}) {
  require(seq_len > 0 && seq_len <= cfg.max_seq_len, Errc::input,
          "sequence length " + std::to_string(seq_len) + " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  require(!tokens.empty() && tokens.size() % seq_len == 0, Errc::input,
          "token count must be a positive multiple of seq_len");
  for (TokenId t : tokens)
    require(t < cfg.vocab_size, Errc::input,
            "token id " + std::to_string(t) + " >= vocab_size " + std::to_string(cfg.vocab_size));

  ForwardResult<T> res;
  res.params.reserve(params.size());
  for (const auto& e : params.entries()) res.params.push_back(tape.ref(e.value, opt.params_require_grad));
  std::size_t cursor = 0;
  auto next = [&](const std::string& expected) {
    require(params.entries()[cursor].name == expected, Errc::contract,
            "parameter order mismatch: expected " + expected + ", found " + params.entries()[cursor].name);
    return res.params[cursor++];
  };
  auto* traces = opt.trace_linear ? &res.traces : nullptr;
  auto proj = [&](Var in, Var w, const std::string& name) {
    Var out = numerics::matmul(tape, in, w);
    if (traces) traces->push_back({name, in, out});
    return out;
  };

  const T eps = static_cast<T>(cfg.norm_eps);
  Var x = numerics::embedding(tape, next("embed"), tokens);
  const std::size_t ne = cfg.effective_experts();
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = names::layer(l);
    Var h = numerics::rmsnorm(tape, x, next(pre + "attn_norm"), eps);
    Var q = proj(h, next(pre + "attn.wq"), pre + "attn.wq");
    Var k = proj(h, next(pre + "attn.wk"), pre + "attn.wk");
    Var v = proj(h, next(pre + "attn.wv"), pre + "attn.wv");
    q = rope(tape, q, seq_len, cfg.n_heads, cfg.rope_base);
    k = rope(tape, k, seq_len, cfg.n_heads, cfg.rope_base);
    Var a = causal_attention(tape, q, k, v, seq_len, cfg.n_heads);
    x = numerics::add(tape, x, proj(a, next(pre + "attn.wo"), pre + "attn.wo"));

    h = numerics::rmsnorm(tape, x, next(pre + "ffn_norm"), eps);
    Var router = next(pre + "router");
    std::vector<ExpertVars> experts(ne);
    for (std::size_t e = 0; e < ne; ++e) {
      const std::string ep = names::expert(l, e);
      experts[e].w_gate = next(ep + "w_gate");
      experts[e].w_up = next(ep + "w_up");
      experts[e].w_down = next(ep + "w_down");
    }
    MoEOutput<T> moe = moe_block<T>(tape, h, router, experts, cfg.effective_top_k(), traces, pre);
    x = numerics::add(tape, x, moe.y);
    res.layers.push_back(std::move(moe));
  }
  x = numerics::rmsnorm(tape, x, next("final_norm"), eps);
  res.logits = proj(x, next("lm_head"), "lm_head");
  require(cursor == params.size(), Errc::contract, "parameter store has unused entries");
  return res;
}

/// Inference-only logits for one sequence.
template <class T>
Tensor<T> transformer_logits(const ModelConfig& cfg, const ParameterStore<T>& params,
                             std::span<const TokenId> tokens) {
  Tape<T> tape;
  ForwardOptions opt;
  opt.params_require_grad = false;
  auto res = transformer_forward(tape, cfg, params, tokens, tokens.size(), opt);
  return tape.value(res.logits);
}

}  // namespace moelab::model
