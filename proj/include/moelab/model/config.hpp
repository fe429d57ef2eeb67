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

#include <cstddef>
#include <string>

#include "moelab/core/error.hpp"
#include "moelab/numerics/tensor.hpp"

namespace moelab::model {

using numerics::Precision;

enum class LmHeadInit {
  normal,  // truncated normal, same std as every other matrix
  scaled,  // truncated normal with std / sqrt(d_model)
  zero,
};

inline std::string to_string(LmHeadInit v) {
  switch (v) {
    case LmHeadInit::normal: return "normal";
    case LmHeadInit::scaled: return "scaled";
    case LmHeadInit::zero: return "zero";
  }
  return "normal";
}

inline LmHeadInit lm_head_init_from_string(const std::string& s) {
  if (s == "normal") return LmHeadInit::normal;
  if (s == "scaled") return LmHeadInit::scaled;
  if (s == "zero") return LmHeadInit::zero;
  fail(Errc::config, "unknown lm_head_init '" + s + "' (expected normal|scaled|zero)");
}

/// Architecture and sparsity description of one run.
///
/// Fine-grained segmentation with granularity g splits every expert into g
/// thinner experts: E*g experts of hidden width (ffn_expansion*d)/g, so total
/// expert parameters do not depend on g. Whether top-k also scales with g is
/// left to `scale_top_k_with_granularity` (off by default).
struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t n_experts = 8;
  std::size_t top_k = 2;
  std::size_t granularity = 1;
  std::size_t ffn_expansion = 2;
  std::size_t vocab_size = 259;
  std::size_t max_seq_len = 1024;
  double rope_base = 10000.0;
  bool scale_top_k_with_granularity = false;
  Precision precision = Precision::f32;

  double init_std = 0.02;
  LmHeadInit lm_head_init = LmHeadInit::normal;
  double norm_eps = 1e-5;

  std::size_t effective_experts() const { return n_experts * granularity; }
  std::size_t effective_top_k() const { return scale_top_k_with_granularity ? top_k * granularity : top_k; }
  std::size_t expert_hidden() const { return ffn_expansion * d_model / granularity; }
  std::size_t head_dim() const { return d_model / n_heads; }

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      require(v > 0, Errc::config, std::string(name) + " must be positive");
    };
    positive(d_model, "d_model");
    positive(n_layers, "n_layers");
    positive(n_heads, "n_heads");
    positive(n_experts, "n_experts");
    positive(top_k, "top_k");
    positive(granularity, "granularity");
    positive(ffn_expansion, "ffn_expansion");
    positive(vocab_size, "vocab_size");
    positive(max_seq_len, "max_seq_len");
    require(d_model % n_heads == 0, Errc::config, "invariant violated: d_model divisible by n_heads");
    require(head_dim() % 2 == 0, Errc::config, "invariant violated: head_dim must be even for rotary embeddings");
    require((ffn_expansion * d_model) % granularity == 0, Errc::config,
            "invariant violated: (ffn_expansion*d_model) divisible by granularity");
    require(effective_top_k() >= 1 && effective_top_k() <= effective_experts(), Errc::config,
            "invariant violated: 1 <= effective_top_k (" + std::to_string(effective_top_k()) +
                ") <= effective_experts (" + std::to_string(effective_experts()) + ")");
    require(rope_base > 0.0, Errc::config, "rope_base must be positive");
    require(init_std >= 0.0, Errc::config, "init_std must be non-negative");
    require(norm_eps >= 0.0, Errc::config, "norm_eps must be non-negative");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace moelab::model
