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

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "moelab/curvature/kfac.hpp"
#include "moelab/evalsuite/decode.hpp"
#include "moelab/model/transformer.hpp"

namespace moelab::curvature {

struct ProbeConfig {
  std::size_t probe_tokens = 4096;
  std::size_t seq_len = 128;
  std::uint64_t seed = 0;
  bool include_router = true;
  std::size_t max_iters = 10000;
  double tol = 1e-12;
};

struct LayerRow {
  std::string name;
  double lambda_max = 0.0;
  bool converged = false;
  std::size_t tokens = 0;  // tokens that reached the layer
};

struct ProbeReport {
  std::vector<LayerRow> layers;  // parameter order
  double max_lambda = 0.0;
  std::string argmax_layer;
};

// Dense projections probed, in parameter order. Embeddings are not probed.
inline std::vector<std::string> probed_layers(const model::ModelConfig& cfg, bool include_router) {
  std::vector<std::string> out;
  for (const auto& s : model::parameter_specs(cfg)) {
    if (s.shape.size() != 2 || s.name == "embed") continue;
    if (!include_router && s.name.ends_with(".router")) continue;
    out.push_back(s.name);
  }
  return out;
}

/// Seeded probe windows from a token stream: `probe_tokens / seq_len` starts
/// drawn uniformly.
inline std::vector<std::vector<numerics::TokenId>> probe_windows(std::span<const numerics::TokenId> stream,
                                                                 const ProbeConfig& pc) {
  require(pc.seq_len > 0 && pc.probe_tokens >= pc.seq_len, Errc::config, "probe needs probe_tokens >= seq_len > 0");
  require(stream.size() >= pc.seq_len, Errc::insufficient_data, "probe stream is shorter than one window");
  Rng rng(derive_seed(pc.seed, "probe_windows"));
  std::vector<std::vector<numerics::TokenId>> out;
  for (std::size_t i = 0; i < pc.probe_tokens / pc.seq_len; ++i) {
    const std::size_t start = rng.below(stream.size() - pc.seq_len + 1);
    out.emplace_back(stream.begin() + start, stream.begin() + start + pc.seq_len);
  }
  return out;
}

/// Sampled-label Fisher probe. Labels are drawn from the model's own
/// softmax with a seed keyed on each window's content, so the result does
/// not depend on window order. Runs in double precision.
template <class T>
ProbeReport model_max_eig(const model::ModelConfig& cfg, const model::ParameterStore<T>& params,
                          const std::vector<std::vector<numerics::TokenId>>& windows, const ProbeConfig& pc) {
  require(!windows.empty(), Errc::insufficient_data, "probe batch is empty");
  const std::size_t seq = windows.front().size();
  std::vector<numerics::TokenId> tokens;
  for (const auto& w : windows) {
    require(w.size() == seq, Errc::input, "probe windows must share one length");
    tokens.insert(tokens.end(), w.begin(), w.end());
  }
  const auto p64 = model::cast_parameters<double>(params);
  numerics::Tape<double> tape;
  model::ForwardOptions opt;
  opt.trace_linear = true;
  auto fwd = model::transformer_forward(tape, cfg, p64, tokens, seq, opt);

  const auto& logits = tape.value(fwd.logits);
  std::vector<numerics::TokenId> labels(tokens.size());
  for (std::size_t w = 0; w < windows.size(); ++w) {
    std::string key(reinterpret_cast<const char*>(windows[w].data()), windows[w].size() * sizeof(numerics::TokenId));
    Rng rng(derive_seed(derive_seed(pc.seed, "fisher_labels"), key));
    for (std::size_t t = 0; t < seq; ++t) {
      const std::size_t r = w * seq + t;
      const auto probs = evalsuite::nucleus_distribution(logits.row(r), 1.0, 1.0);
      labels[r] = static_cast<numerics::TokenId>(evalsuite::sample_index(probs, rng));
    }
  }
  // Summed loss so each token contributes its own output gradient.
  auto loss = numerics::cross_entropy(tape, fwd.logits, labels);
  tape.backward(numerics::scale(tape, loss, static_cast<double>(tokens.size())));

  const auto names = probed_layers(cfg, pc.include_router);
  std::map<std::string, KroneckerFactorPair> pairs;
  for (const auto& tr : fwd.traces) {
    const auto& in = tape.value(tr.input);
    const auto& out = tape.value(tr.output);
    const auto* g = tape.grad(tr.output);
    auto [it, fresh] = pairs.try_emplace(tr.name, in.cols(), out.cols());
    const Eigen::MatrixXd gm = g ? to_eigen(*g) : Eigen::MatrixXd::Zero(out.rows(), out.cols());
    accumulate_factors(to_eigen(in), gm, it->second);
  }
  ProbeReport rep;
  for (const auto& name : names) {
    LayerRow row{name, 0.0, true, 0};
    auto it = pairs.find(name);
    if (it != pairs.end() && it->second.samples > 0) {
      const LayerEig e = kfac_layer_max_eig(it->second.finalized(), pc.max_iters, pc.tol);
      row.lambda_max = e.lambda_max;
      row.converged = e.converged;
      row.tokens = it->second.tokens;
    }
    if (rep.layers.empty() || row.lambda_max > rep.max_lambda) {
      rep.max_lambda = row.lambda_max;
      rep.argmax_layer = name;
    }
    rep.layers.push_back(std::move(row));
  }
  return rep;
}

inline std::vector<nlohmann::json> to_json_rows(const ProbeReport& rep, const std::string& run_id) {
  std::vector<nlohmann::json> rows;
  for (const auto& l : rep.layers)
    rows.push_back({{"record", "curvature"},
                    {"run_id", run_id},
                    {"layer_name", l.name},
                    {"lambda_max", l.lambda_max},
                    {"converged", l.converged},
                    {"tokens", l.tokens}});
  return rows;
}

}  // namespace moelab::curvature
