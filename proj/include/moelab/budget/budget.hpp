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
#include <string>
#include <tuple>
#include <vector>

#include "moelab/model/config.hpp"

namespace moelab::budget {

using model::ModelConfig;

struct ParamCount {
  std::uint64_t total = 0;
  std::uint64_t active = 0;
  std::uint64_t embedding = 0;  // input table only; the LM head is counted as a regular weight
};

// Walks the same tensor list as init_parameters. Active counts k' experts per
// layer instead of all E_eff.
inline ParamCount count_params(const ModelConfig& cfg) {
  cfg.validate();
  const std::uint64_t d = cfg.d_model;
  const std::uint64_t v = cfg.vocab_size;
  const std::uint64_t ne = cfg.effective_experts();
  const std::uint64_t k = cfg.effective_top_k();
  const std::uint64_t per_expert = 3 * d * cfg.expert_hidden();

  const std::uint64_t shared_per_layer = 2 * d      // attn_norm, ffn_norm
                                         + 4 * d * d  // wq wk wv wo
                                         + d * ne;    // router
  ParamCount c;
  c.embedding = v * d;
  const std::uint64_t outside = c.embedding + d /* final_norm */ + d * v /* lm_head */;
  c.total = outside + cfg.n_layers * (shared_per_layer + ne * per_expert);
  c.active = outside + cfg.n_layers * (shared_per_layer + k * per_expert);
  return c;
}

// Forward FLOPs per token: two per active non-embedding weight. The O(T^2)
// attention-score term is not included.
inline std::uint64_t flops_per_token(const ModelConfig& cfg) {
  const ParamCount c = count_params(cfg);
  return 2 * (c.active - c.embedding);
}

// Forward plus backward.
inline std::uint64_t train_flops_per_token(const ModelConfig& cfg) { return 3 * flops_per_token(cfg); }

inline double density_of(const ModelConfig& cfg) {
  cfg.validate();
  return static_cast<double>(cfg.effective_top_k()) / static_cast<double>(cfg.effective_experts());
}

inline double sparsity_of(const ModelConfig& cfg) { return 1.0 - density_of(cfg); }

inline double tpp(double tokens, double params) {
  require(params > 0.0, Errc::contract, "tokens-per-parameter needs a positive parameter count");
  require(tokens >= 0.0, Errc::contract, "token count must be non-negative");
  return tokens / params;
}

struct BudgetReport {
  std::uint64_t total_params = 0;
  std::uint64_t active_params = 0;
  std::uint64_t flops_per_token_forward = 0;
  double sparsity = 0.0;
  double density = 0.0;
  double tpp_total = 0.0;
  double tpp_active = 0.0;
};

inline BudgetReport make_report(const ModelConfig& cfg, std::uint64_t tokens) {
  const ParamCount c = count_params(cfg);
  BudgetReport r;
  r.total_params = c.total;
  r.active_params = c.active;
  r.flops_per_token_forward = flops_per_token(cfg);
  r.density = density_of(cfg);
  r.sparsity = 1.0 - r.density;
  r.tpp_total = tpp(static_cast<double>(tokens), static_cast<double>(c.total));
  r.tpp_active = tpp(static_cast<double>(tokens), static_cast<double>(c.active));
  return r;
}

}  // namespace moelab::budget
