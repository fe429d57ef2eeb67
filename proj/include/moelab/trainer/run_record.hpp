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
#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "moelab/budget/budget.hpp"
#include "moelab/core/error.hpp"

namespace moelab::trainer {

/// One periodic training metric row. The named members are the fixed
/// JSON-lines fields; `extras` carries everything else (vocab, n_heads,
/// ffn_expansion, scale_top_k, k_eff, expert_load, ...).
struct RunRecord {
  std::string run_id;
  std::uint64_t step = 0;
  std::uint64_t tokens_seen = 0;
  std::size_t d = 0, L = 0, E = 0, k = 0, g = 1;
  std::uint64_t total_params = 0;
  std::uint64_t active_params = 0;
  double sparsity = 0.0;
  double lr = 0.0;
  double train_ce = 0.0;
  std::optional<double> val_ce;
  double lb_loss = 0.0;
  double rz_loss = 0.0;
  nlohmann::json extras = nlohmann::json::object();

  void set_model(const model::ModelConfig& c) {
    d = c.d_model;
    L = c.n_layers;
    E = c.n_experts;
    k = c.top_k;
    g = c.granularity;
    const auto p = budget::count_params(c);
    total_params = p.total;
    active_params = p.active;
    sparsity = budget::sparsity_of(c);
    extras["vocab"] = c.vocab_size;
    extras["n_heads"] = c.n_heads;
    extras["ffn_expansion"] = c.ffn_expansion;
    extras["scale_top_k"] = c.scale_top_k_with_granularity;
    extras["k_eff"] = c.effective_top_k();
  }
};

// Rebuilds the budget-relevant part of the config. Missing extras take the
// ModelConfig defaults.
inline model::ModelConfig model_config_of(const RunRecord& r) {
  model::ModelConfig c;
  c.d_model = r.d;
  c.n_layers = r.L;
  c.n_experts = r.E;
  c.top_k = r.k;
  c.granularity = r.g;
  c.vocab_size = r.extras.value("vocab", c.vocab_size);
  c.n_heads = r.extras.value("n_heads", c.n_heads);
  c.ffn_expansion = r.extras.value("ffn_expansion", c.ffn_expansion);
  c.scale_top_k_with_granularity = r.extras.value("scale_top_k", c.scale_top_k_with_granularity);
  return c;
}

inline nlohmann::json to_json(const RunRecord& r) {
  nlohmann::json j = r.extras.is_object() ? r.extras : nlohmann::json::object();
  j["record"] = "train";
  j["run_id"] = r.run_id;
  j["step"] = r.step;
  j["tokens_seen"] = r.tokens_seen;
  j["d"] = r.d;
  j["L"] = r.L;
  j["E"] = r.E;
  j["k"] = r.k;
  j["g"] = r.g;
  j["total_params"] = r.total_params;
  j["active_params"] = r.active_params;
  j["sparsity"] = r.sparsity;
  j["lr"] = r.lr;
  j["train_ce"] = r.train_ce;
  j["val_ce"] = r.val_ce ? nlohmann::json(*r.val_ce) : nlohmann::json(nullptr);
  j["lb_loss"] = r.lb_loss;
  j["rz_loss"] = r.rz_loss;
  return j;
}

inline RunRecord run_record_from_json(const nlohmann::json& j) {
  static const char* kFixed[] = {"record", "run_id", "step", "tokens_seen", "d", "L", "E", "k", "g",
                                 "total_params", "active_params", "sparsity", "lr", "train_ce", "val_ce",
                                 "lb_loss", "rz_loss"};
  RunRecord r;
  try {
    r.run_id = j.at("run_id");
    r.step = j.at("step");
    r.tokens_seen = j.at("tokens_seen");
    r.d = j.at("d");
    r.L = j.at("L");
    r.E = j.at("E");
    r.k = j.at("k");
    r.g = j.at("g");
    r.total_params = j.at("total_params");
    r.active_params = j.at("active_params");
    r.sparsity = j.at("sparsity");
    r.lr = j.at("lr");
    r.train_ce = j.at("train_ce");
    if (!j.at("val_ce").is_null()) r.val_ce = j.at("val_ce").get<double>();
    r.lb_loss = j.at("lb_loss");
    r.rz_loss = j.at("rz_loss");
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::validation, std::string("malformed run record: ") + e.what());
  }
  r.extras = j;
  for (const char* key : kFixed) r.extras.erase(key);
  return r;
}

// Append-only JSON-lines writer, flushed per line.
class JsonlWriter {
 public:
  explicit JsonlWriter(const std::string& path, bool append = true)
      : out_(path, append ? std::ios::app : std::ios::trunc) {
    require(out_.good(), Errc::io, "cannot open " + path + " for writing");
  }
  void write(const nlohmann::json& j) {
    out_ << j.dump() << '\n';
    out_.flush();
    require(out_.good(), Errc::io, "write failed");
  }

 private:
  std::ofstream out_;
};

}  // namespace moelab::trainer
