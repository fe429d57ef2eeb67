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

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "moelab/core/error.hpp"
#include "moelab/core/rng.hpp"
#include "moelab/curvature/probe.hpp"
#include "moelab/evalsuite/decode.hpp"
#include "moelab/model/config.hpp"
#include "moelab/trainer/corpus.hpp"
#include "moelab/trainer/trainer.hpp"

namespace moelab::cli {

/// Everything one experiment needs. Sub-seeds come from `seed`:
///   corpus  derive_seed(seed, "corpus")
///   train   derive_seed(seed, "train")   (model init is derive_seed(train, "model"))
///   eval    derive_seed(seed, "eval")
///   probe   derive_seed(seed, "probe")
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string run_id;  // empty means derived from the model block
  std::string out;

  model::ModelConfig model;
  trainer::TrainConfig train;
  std::uint64_t checkpoint_every = 0;  // 0 writes only the final checkpoint
  trainer::CorpusSpec corpus;
  std::vector<std::string> tasks{"memory_qa", "memory_mc", "arith"};
  std::size_t shots = 0;
  std::size_t max_items = 0;
  evalsuite::SCConfig sc;
  curvature::ProbeConfig probe;

  std::uint64_t corpus_seed() const { return derive_seed(seed, "corpus"); }
  std::uint64_t train_seed() const { return derive_seed(seed, "train"); }
  std::uint64_t eval_seed() const { return derive_seed(seed, "eval"); }
  std::uint64_t probe_seed() const { return derive_seed(seed, "probe"); }

  std::string resolved_run_id() const {
    if (!run_id.empty()) return run_id;
    return "d" + std::to_string(model.d_model) + "_L" + std::to_string(model.n_layers) + "_E" +
           std::to_string(model.n_experts) + "_k" + std::to_string(model.top_k) + "_g" +
           std::to_string(model.granularity);
  }

  // Corpus and trainer settings with the derived seeds filled in.
  trainer::CorpusSpec corpus_spec() const {
    trainer::CorpusSpec c = corpus;
    c.seed = corpus_seed();
    return c;
  }
  trainer::TrainConfig train_config() const {
    trainer::TrainConfig t = train;
    t.seed = train_seed();
    t.run_id = resolved_run_id();
    return t;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string fmt(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, end};
}

inline std::uint64_t parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) {
    // allow integral scientific notation such as 2e7
    double d = 0;
    auto [p2, ec2] = std::from_chars(s.data(), s.data() + s.size(), d);
    if (ec2 != std::errc{} || p2 != s.data() + s.size() || d < 0 || d != std::floor(d) || d >= 1.8e19)
      throw std::invalid_argument("expected a non-negative integer");
    v = static_cast<std::uint64_t>(d);
  }
  return v;
}

inline double parse_f64(const std::string& s) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || !std::isfinite(v)) throw std::invalid_argument("expected a number");
  return v;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw std::invalid_argument("expected true or false");
}

inline std::vector<std::string> parse_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) throw std::invalid_argument("empty list element");
    out.push_back(item);
  }
  return out;
}

inline std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + v[i];
  return s;
}

struct Field {
  std::string section;
  std::string key;
  bool required = false;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
  std::string path() const { return section + "." + key; }
};

template <class Int>
Field uint_field(std::string sec, std::string key, Int ExperimentConfig::*outer, bool required = false) {
  return {sec, key, required, [outer](ExperimentConfig& c, const std::string& v) {
            c.*outer = static_cast<Int>(parse_u64(v));
          },
          [outer](const ExperimentConfig& c) { return std::to_string(c.*outer); }};
}

// Member pointer into a nested struct, e.g. &ExperimentConfig::model then &ModelConfig::d_model.
template <class Outer, class Int>
Field nested_uint(std::string sec, std::string key, Outer ExperimentConfig::*o, Int Outer::*m, bool required = false) {
  return {sec, key, required,
          [o, m](ExperimentConfig& c, const std::string& v) { (c.*o).*m = static_cast<Int>(parse_u64(v)); },
          [o, m](const ExperimentConfig& c) { return std::to_string((c.*o).*m); }};
}

template <class Outer>
Field nested_f64(std::string sec, std::string key, Outer ExperimentConfig::*o, double Outer::*m, bool required = false) {
  return {sec, key, required, [o, m](ExperimentConfig& c, const std::string& v) { (c.*o).*m = parse_f64(v); },
          [o, m](const ExperimentConfig& c) { return fmt((c.*o).*m); }};
}

template <class Outer>
Field nested_bool(std::string sec, std::string key, Outer ExperimentConfig::*o, bool Outer::*m) {
  return {sec, key, false, [o, m](ExperimentConfig& c, const std::string& v) { (c.*o).*m = parse_bool(v); },
          [o, m](const ExperimentConfig& c) { return std::string((c.*o).*m ? "true" : "false"); }};
}

inline const std::vector<Field>& fields() {
  using E = ExperimentConfig;
  using M = model::ModelConfig;
  using T = trainer::TrainConfig;
  using C = trainer::CorpusSpec;
  using S = evalsuite::SCConfig;
  using P = curvature::ProbeConfig;
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(uint_field("run", "seed", &E::seed));
    f.push_back({"run", "run_id", false, [](E& c, const std::string& v) { c.run_id = v; },
                 [](const E& c) { return c.resolved_run_id(); }});
    f.push_back({"run", "out", false, [](E& c, const std::string& v) { c.out = v; }, [](const E& c) { return c.out; }});

    f.push_back(nested_uint("model", "d_model", &E::model, &M::d_model, true));
    f.push_back(nested_uint("model", "n_layers", &E::model, &M::n_layers));
    f.push_back(nested_uint("model", "n_heads", &E::model, &M::n_heads));
    f.push_back(nested_uint("model", "n_experts", &E::model, &M::n_experts, true));
    f.push_back(nested_uint("model", "top_k", &E::model, &M::top_k, true));
    f.push_back(nested_uint("model", "granularity", &E::model, &M::granularity));
    f.push_back(nested_uint("model", "ffn_expansion", &E::model, &M::ffn_expansion));
    f.push_back(nested_uint("model", "vocab_size", &E::model, &M::vocab_size));
    f.push_back(nested_uint("model", "max_seq_len", &E::model, &M::max_seq_len));
    f.push_back(nested_f64("model", "rope_base", &E::model, &M::rope_base));
    f.push_back(nested_bool("model", "scale_top_k_with_granularity", &E::model, &M::scale_top_k_with_granularity));
    f.push_back({"model", "precision", false,
                 [](E& c, const std::string& v) {
                   if (v == "f32") c.model.precision = numerics::Precision::f32;
                   else if (v == "f64") c.model.precision = numerics::Precision::f64;
                   else throw std::invalid_argument("expected f32 or f64");
                 },
                 [](const E& c) { return std::string(c.model.precision == numerics::Precision::f64 ? "f64" : "f32"); }});
    f.push_back(nested_f64("model", "init_std", &E::model, &M::init_std));
    f.push_back({"model", "lm_head_init", false,
                 [](E& c, const std::string& v) {
                   try {
                     c.model.lm_head_init = model::lm_head_init_from_string(v);
                   } catch (const Error&) {
                     throw std::invalid_argument("expected normal, scaled or zero");
                   }
                 },
                 [](const E& c) { return model::to_string(c.model.lm_head_init); }});
    f.push_back(nested_f64("model", "norm_eps", &E::model, &M::norm_eps));

    f.push_back(nested_uint("train", "seq_len", &E::train, &T::seq_len));
    f.push_back(nested_uint("train", "batch_size", &E::train, &T::batch_size));
    f.push_back(nested_uint("train", "micro_batches", &E::train, &T::micro_batches));
    f.push_back(nested_f64("train", "alpha", &E::train, &T::alpha));
    f.push_back(nested_f64("train", "beta", &E::train, &T::beta));
    f.push_back(nested_f64("train", "grad_clip", &E::train, &T::grad_clip));
    f.push_back(nested_uint("train", "log_every", &E::train, &T::log_every));
    f.push_back(nested_uint("train", "eval_every", &E::train, &T::eval_every));
    f.push_back(nested_uint("train", "val_sequences", &E::train, &T::val_sequences));
    f.push_back(uint_field("train", "checkpoint_every", &E::checkpoint_every));

    f.push_back({"schedule", "peak_lr", false, [](E& c, const std::string& v) { c.train.schedule.peak = parse_f64(v); },
                 [](const E& c) { return fmt(c.train.schedule.peak); }});
    f.push_back({"schedule", "warmup_steps", false,
                 [](E& c, const std::string& v) { c.train.schedule.warmup_steps = parse_u64(v); },
                 [](const E& c) { return std::to_string(c.train.schedule.warmup_steps); }});
    f.push_back({"schedule", "total_steps", true,
                 [](E& c, const std::string& v) { c.train.schedule.total_steps = parse_u64(v); },
                 [](const E& c) { return std::to_string(c.train.schedule.total_steps); }});
    f.push_back({"schedule", "floor", false, [](E& c, const std::string& v) { c.train.schedule.floor = parse_f64(v); },
                 [](const E& c) { return fmt(c.train.schedule.floor); }});

    f.push_back({"optim", "beta1", false, [](E& c, const std::string& v) { c.train.optim.beta1 = parse_f64(v); },
                 [](const E& c) { return fmt(c.train.optim.beta1); }});
    f.push_back({"optim", "beta2", false, [](E& c, const std::string& v) { c.train.optim.beta2 = parse_f64(v); },
                 [](const E& c) { return fmt(c.train.optim.beta2); }});
    f.push_back({"optim", "eps", false, [](E& c, const std::string& v) { c.train.optim.eps = parse_f64(v); },
                 [](const E& c) { return fmt(c.train.optim.eps); }});
    f.push_back({"optim", "weight_decay", false,
                 [](E& c, const std::string& v) { c.train.optim.weight_decay = parse_f64(v); },
                 [](const E& c) { return fmt(c.train.optim.weight_decay); }});

    f.push_back({"corpus", "kind", false,
                 [](E& c, const std::string& v) {
                   try {
                     c.corpus.kind = trainer::corpus_kind_from_string(v);
                   } catch (const Error&) {
                     throw std::invalid_argument("expected memory-recall, chain-arithmetic or mixture");
                   }
                 },
                 [](const E& c) { return trainer::to_string(c.corpus.kind); }});
    f.push_back(nested_uint("corpus", "tokens", &E::corpus, &C::tokens));
    f.push_back(nested_uint("corpus", "split_train", &E::corpus, &C::split_train));
    f.push_back(nested_uint("corpus", "split_validation", &E::corpus, &C::split_validation));
    f.push_back(nested_uint("corpus", "n_facts", &E::corpus, &C::n_facts));
    f.push_back(nested_uint("corpus", "n_probes", &E::corpus, &C::n_probes));
    f.push_back(nested_uint("corpus", "n_arith_items", &E::corpus, &C::n_arith_items));
    f.push_back(nested_uint("corpus", "arith_min_ops", &E::corpus, &C::arith_min_ops));
    f.push_back(nested_uint("corpus", "arith_max_ops", &E::corpus, &C::arith_max_ops));
    f.push_back(nested_uint("corpus", "arith_max_start", &E::corpus, &C::arith_max_start));
    f.push_back(nested_f64("corpus", "memory_fraction", &E::corpus, &C::memory_fraction));

    f.push_back({"eval", "tasks", false, [](E& c, const std::string& v) { c.tasks = parse_list(v); },
                 [](const E& c) { return join(c.tasks); }});
    f.push_back(uint_field("eval", "shots", &E::shots));
    f.push_back(uint_field("eval", "max_items", &E::max_items));

    f.push_back(nested_uint("sc", "samples", &E::sc, &S::n_samples));
    f.push_back(nested_f64("sc", "temperature", &E::sc, &S::temperature));
    f.push_back(nested_f64("sc", "top_p", &E::sc, &S::top_p));
    f.push_back(nested_uint("sc", "max_new_tokens", &E::sc, &S::max_new_tokens));

    f.push_back(nested_uint("probe", "tokens", &E::probe, &P::probe_tokens));
    f.push_back(nested_uint("probe", "seq_len", &E::probe, &P::seq_len));
    f.push_back(nested_bool("probe", "include_router", &E::probe, &P::include_router));
    f.push_back(nested_uint("probe", "max_iters", &E::probe, &P::max_iters));
    f.push_back(nested_f64("probe", "tol", &E::probe, &P::tol));
    return f;
  }();
  return table;
}

}  // namespace detail

/// Checks every cross-field invariant. `line_of` maps a key path to the line
/// it was set on, for messages.
inline void validate(const ExperimentConfig& c, const std::map<std::string, std::size_t>& line_of = {},
                     const std::string& origin = "config") {
  auto at = [&](const std::string& path) {
    auto it = line_of.find(path);
    return origin + (it == line_of.end() ? "" : ":" + std::to_string(it->second)) + ": " + path;
  };
  auto wrap = [&](const std::string& path, auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      fail(Errc::config, at(path) + ": " + e.message());
    }
  };
  wrap("model.top_k", [&] { c.model.validate(); });
  wrap("schedule.warmup_steps", [&] { c.train.schedule.validate(); });
  wrap("train.batch_size", [&] { c.train.validate(); });
  wrap("corpus.tokens", [&] { c.corpus.validate(); });
  wrap("sc.samples", [&] { c.sc.validate(); });
  require(c.train.seq_len <= c.model.max_seq_len, Errc::config,
          at("train.seq_len") + ": invariant violated: seq_len <= model.max_seq_len");
  require(c.probe.seq_len >= 1 && c.probe.probe_tokens >= c.probe.seq_len, Errc::config,
          at("probe.tokens") + ": invariant violated: probe.tokens >= probe.seq_len >= 1");
  require(c.probe.tol > 0.0, Errc::config, at("probe.tol") + ": must be positive");
  require(c.model.vocab_size >= trainer::ByteTokenizer::kVocabSize, Errc::config,
          at("model.vocab_size") + ": must cover the byte tokenizer (" +
              std::to_string(trainer::ByteTokenizer::kVocabSize) + ")");
  const std::string rid = c.resolved_run_id();
  require(rid.find_first_of("/\\,\"\n ") == std::string::npos, Errc::config,
          at("run.run_id") + ": must not contain '/', ',', quotes or whitespace");
}

/// Sectioned `key = value` text. '#' or ';' start a comment line. Every key
/// must belong to its section; unknown sections, unknown keys, repeated
/// keys and missing required keys are config errors naming the key path
/// and line.
inline ExperimentConfig parse_config_text(const std::string& text, const std::string& origin = "config") {
  std::map<std::string, const detail::Field*> by_path;
  std::set<std::string> sections;
  for (const auto& f : detail::fields()) {
    by_path[f.path()] = &f;
    sections.insert(f.section);
  }
  ExperimentConfig c;
  std::map<std::string, std::size_t> line_of;
  std::istringstream in(text);
  std::string raw, section;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = detail::trim(raw);
    const std::string where = origin + ":" + std::to_string(lineno);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      require(line.back() == ']', Errc::config, where + ": malformed section header '" + line + "'");
      section = detail::trim(line.substr(1, line.size() - 2));
      require(sections.contains(section), Errc::config, where + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    require(eq != std::string::npos, Errc::config, where + ": expected 'key = value', got '" + line + "'");
    require(!section.empty(), Errc::config, where + ": key outside any section");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const std::string path = section + "." + key;
    auto it = by_path.find(path);
    require(it != by_path.end(), Errc::config, where + ": unknown key '" + path + "'");
    if (auto prev = line_of.find(path); prev != line_of.end())
      fail(Errc::config, where + ": key '" + path + "' repeated (first set on line " + std::to_string(prev->second) + ")");
    try {
      it->second->set(c, value);
    } catch (const std::invalid_argument& e) {
      fail(Errc::config, where + ": " + path + ": " + e.what() + ", got '" + value + "'");
    }
    line_of[path] = lineno;
  }
  for (const auto& f : detail::fields())
    require(!f.required || line_of.contains(f.path()), Errc::config,
            origin + ": missing required key '" + f.path() + "'");
  validate(c, line_of, origin);
  return c;
}

inline ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), Errc::config, "cannot read config file " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config_text(text, path);
}

/// Every key with its materialized value. Parsing the result gives back the
/// same config, and rendering that gives the same text.
inline std::string resolved_text(const ExperimentConfig& c) {
  std::string out = "# resolved configuration\n";
  std::string section;
  for (const auto& f : detail::fields()) {
    if (f.section != section) {
      out += "\n[" + f.section + "]\n";
      section = f.section;
    }
    out += f.key + " = " + f.get(c) + "\n";
  }
  return out;
}

}  // namespace moelab::cli
