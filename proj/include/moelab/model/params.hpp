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
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "moelab/core/rng.hpp"
#include "moelab/model/config.hpp"
#include "moelab/numerics/tensor.hpp"

namespace moelab::model {

using numerics::Tensor;

/// Named parameter tensors in a fixed insertion order. The order is part of
/// the checkpoint layout.
template <class T>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
  };

  Tensor<T>& add(std::string name, Tensor<T> value) {
    require(!index_.contains(name), Errc::contract, "duplicate parameter " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(value)});
    return entries_.back().value;
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  Tensor<T>& at(const std::string& name) { return entries_[lookup(name)].value; }
  const Tensor<T>& at(const std::string& name) const { return entries_[lookup(name)].value; }

  std::size_t size() const noexcept { return entries_.size(); }
  std::vector<Entry>& entries() noexcept { return entries_; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), Errc::contract, "no parameter named " + name);
    return it->second;
  }

  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

namespace names {
inline std::string layer(std::size_t l) { return "layers." + std::to_string(l) + "."; }
inline std::string expert(std::size_t l, std::size_t e) {
  return layer(l) + "experts." + std::to_string(e) + ".";
}
}  // namespace names

enum class InitKind { ones, normal, out_scaled, lm_head };

struct ParamSpec {
  std::string name;
  numerics::Shape shape;
  InitKind init;
};

// Every parameter tensor of the transformer in storage order. Weights are
// stored [in x out] so projections are x * W.
inline std::vector<ParamSpec> parameter_specs(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.d_model;
  const std::size_t h = cfg.expert_hidden();
  const std::size_t ne = cfg.effective_experts();
  std::vector<ParamSpec> specs;
  specs.push_back({"embed", {cfg.vocab_size, d}, InitKind::normal});
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = names::layer(l);
    specs.push_back({pre + "attn_norm", {d}, InitKind::ones});
    specs.push_back({pre + "attn.wq", {d, d}, InitKind::normal});
    specs.push_back({pre + "attn.wk", {d, d}, InitKind::normal});
    specs.push_back({pre + "attn.wv", {d, d}, InitKind::normal});
    specs.push_back({pre + "attn.wo", {d, d}, InitKind::out_scaled});
    specs.push_back({pre + "ffn_norm", {d}, InitKind::ones});
    specs.push_back({pre + "router", {d, ne}, InitKind::normal});
    for (std::size_t e = 0; e < ne; ++e) {
      const std::string ep = names::expert(l, e);
      specs.push_back({ep + "w_gate", {d, h}, InitKind::normal});
      specs.push_back({ep + "w_up", {d, h}, InitKind::normal});
      specs.push_back({ep + "w_down", {h, d}, InitKind::out_scaled});
    }
  }
  specs.push_back({"final_norm", {d}, InitKind::ones});
  specs.push_back({"lm_head", {d, cfg.vocab_size}, InitKind::lm_head});
  return specs;
}

/// Builds and initializes every parameter of the transformer.
///
/// Matrices are truncated-normal(init_std); the attention output projection
/// and expert down projections are further scaled by 1/sqrt(2L). RMSNorm gains
/// start at one.
template <class T>
ParameterStore<T> init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "init"));
  const double out_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg.n_layers));
  auto normal = [&](numerics::Shape shape, double std) {
    Tensor<T> t(std::move(shape));
    for (T& v : t.data()) v = static_cast<T>(rng.truncated_normal(std));
    return t;
  };

  ParameterStore<T> p;
  for (ParamSpec& s : parameter_specs(cfg)) {
    switch (s.init) {
      case InitKind::ones: p.add(s.name, Tensor<T>(s.shape, T{1})); break;
      case InitKind::normal: p.add(s.name, normal(s.shape, cfg.init_std)); break;
      case InitKind::out_scaled: p.add(s.name, normal(s.shape, cfg.init_std * out_scale)); break;
      case InitKind::lm_head:
        switch (cfg.lm_head_init) {
          case LmHeadInit::normal: p.add(s.name, normal(s.shape, cfg.init_std)); break;
          case LmHeadInit::scaled:
            p.add(s.name, normal(s.shape, cfg.init_std / std::sqrt(static_cast<double>(cfg.d_model))));
            break;
          case LmHeadInit::zero: p.add(s.name, Tensor<T>(s.shape)); break;
        }
        break;
    }
  }
  return p;
}

template <class U, class T>
ParameterStore<U> cast_parameters(const ParameterStore<T>& src) {
  ParameterStore<U> dst;
  for (const auto& e : src.entries()) dst.add(e.name, e.value.template cast<U>());
  return dst;
}

}  // namespace moelab::model
