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
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "moelab/core/rng.hpp"
#include "moelab/evalsuite/lm.hpp"
#include "moelab/evalsuite/protocol.hpp"
#include "moelab/evalsuite/task.hpp"

namespace moelab::evalsuite {

struct SCConfig {
  std::size_t n_samples = 128;
  double temperature = 0.6;
  double top_p = 0.95;
  std::size_t max_new_tokens = 96;

  void validate() const {
    require(n_samples >= 1, Errc::config, "self-consistency needs at least one sample");
    require(temperature > 0.0 && std::isfinite(temperature), Errc::config, "temperature must be positive");
    require(top_p > 0.0 && top_p <= 1.0, Errc::config, "nucleus threshold must be in (0, 1]");
  }
};

struct DecodeOptions {
  double temperature = 1.0;
  double top_p = 1.0;
  std::size_t max_new_tokens = 96;
  bool greedy = false;
  std::vector<std::string> stop{"\nQuestion:"};
};

/// Temperature-scaled softmax restricted to the nucleus: the smallest
/// probability-sorted prefix whose mass reaches top_p, renormalized.
inline std::vector<double> nucleus_distribution(std::span<const double> logits, double temperature, double top_p) {
  require(temperature > 0.0, Errc::contract, "temperature must be positive");
  require(top_p > 0.0 && top_p <= 1.0, Errc::contract, "top_p must be in (0, 1]");
  const std::size_t n = logits.size();
  double m = -std::numeric_limits<double>::infinity();
  for (double v : logits) m = std::max(m, v);
  std::vector<double> p(n);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += p[i] = std::exp((logits[i] - m) / temperature);
  for (double& v : p) v /= z;
  if (top_p >= 1.0) return p;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  double mass = 0.0;
  std::size_t keep = 0;
  while (keep < n && mass < top_p) mass += p[order[keep++]];
  std::vector<double> q(n, 0.0);
  for (std::size_t i = 0; i < keep; ++i) q[order[i]] = p[order[i]] / mass;
  return q;
}

inline std::size_t argmax_token(std::span<const double> logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

inline std::size_t sample_index(std::span<const double> probs, Rng& rng) {
  const double u = rng.uniform();
  double c = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    c += probs[i];
    last = i;
    if (u < c) return i;
  }
  return last;
}

/// Autoregressive continuation of `prompt`. Stops at EOS, a stop string,
/// max_new_tokens, or the model's context limit.
inline std::string sample_decode(const LanguageModel& lm, const std::string& prompt, const DecodeOptions& opt,
                                 std::uint64_t seed) {
  std::vector<TokenId> ids = context_tokens(lm, prompt);
  Rng rng(seed);
  std::string out;
  for (std::size_t step = 0; step < opt.max_new_tokens && ids.size() < lm.max_seq_len(); ++step) {
    const std::vector<double> logits = lm.next_logits(ids);
    const std::size_t tok =
        opt.greedy ? argmax_token(logits) : sample_index(nucleus_distribution(logits, opt.temperature, opt.top_p), rng);
    if (tok == ByteTokenizer::kEos) break;
    ids.push_back(static_cast<TokenId>(tok));
    if (tok < 256) out.push_back(static_cast<char>(tok));
    bool stopped = false;
    for (const auto& s : opt.stop)
      if (!s.empty() && out.ends_with(s)) {
        out.resize(out.size() - s.size());
        stopped = true;
      }
    if (stopped) break;
  }
  return out;
}

inline std::string canonicalize(std::string s, const Canonicalization& c = {}) {
  auto is_space = [](char ch) { return ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r'; };
  for (;;) {
    const std::string before = s;
    if (c.trim_whitespace) {
      while (!s.empty() && is_space(s.back())) s.pop_back();
      std::size_t i = 0;
      while (i < s.size() && is_space(s[i])) ++i;
      s.erase(0, i);
    }
    if (c.strip_dollar && !s.empty() && s.front() == '$') s.erase(0, 1);
    if (c.strip_commas) std::erase(s, ',');
    if (c.strip_trailing_period && !s.empty() && s.back() == '.') s.pop_back();
    if (s == before) return s;
  }
}

/// Last match of the highest-priority pattern that has a non-empty payload.
/// The payload runs to the end of its line.
inline std::optional<std::string> extract_answer(const std::string& text, const std::vector<std::string>& patterns,
                                                 const Canonicalization& canon = {}) {
  for (const auto& pat : patterns) {
    if (pat.empty()) continue;
    std::size_t pos = text.rfind(pat);
    while (pos != std::string::npos) {
      const std::size_t from = pos + pat.size();
      const std::size_t eol = text.find('\n', from);
      std::string payload = canonicalize(text.substr(from, eol == std::string::npos ? std::string::npos : eol - from), canon);
      if (!payload.empty()) return payload;
      if (pos == 0) break;
      pos = text.rfind(pat, pos - 1);
    }
  }
  return std::nullopt;
}

inline std::optional<std::string> extract_answer(const std::string& text) {
  return extract_answer(text, TaskSpec{}.patterns);
}

// The reference answer an extraction is compared against.
inline std::string gold_answer(const TaskSpec& task, const EvalItem& item) {
  return extract_answer(item.answer, task.patterns, task.canon).value_or(canonicalize(item.answer, task.canon));
}

/// Plurality over present votes. Ties go to the answer seen first.
inline std::optional<std::string> majority_vote(const std::vector<std::optional<std::string>>& votes) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> tally;  // answer -> (count, first index)
  for (std::size_t i = 0; i < votes.size(); ++i) {
    if (!votes[i]) continue;
    auto [it, fresh] = tally.try_emplace(*votes[i], 0, i);
    ++it->second.first;
  }
  std::optional<std::string> best;
  std::size_t best_count = 0, best_first = 0;
  for (const auto& [answer, cf] : tally) {
    if (!best || cf.first > best_count || (cf.first == best_count && cf.second < best_first)) {
      best = answer;
      best_count = cf.first;
      best_first = cf.second;
    }
  }
  return best;
}

struct SCOutcome {
  std::optional<std::string> answer;
  std::vector<std::optional<std::string>> votes;
};

// Extraction sees the scored question's own rendering plus the completion,
// so an "Answer:" cue ending the prompt is honoured.
inline std::optional<std::string> extract_completion(const TaskSpec& task, const EvalItem& item,
                                                     const std::string& completion) {
  return extract_answer(render_question(task.kind, item.question) + completion, task.patterns, task.canon);
}

inline SCOutcome self_consistency(const LanguageModel& lm, const TaskSpec& task, const EvalItem& item,
                                  const std::string& prompt, const SCConfig& sc, std::uint64_t seed) {
  sc.validate();
  DecodeOptions opt;
  opt.temperature = sc.temperature;
  opt.top_p = sc.top_p;
  opt.max_new_tokens = sc.max_new_tokens;
  SCOutcome out;
  out.votes.reserve(sc.n_samples);
  for (std::size_t i = 0; i < sc.n_samples; ++i)
    out.votes.push_back(extract_completion(task, item, sample_decode(lm, prompt, opt, derive_seed(seed, i))));
  out.answer = majority_vote(out.votes);
  return out;
}

}  // namespace moelab::evalsuite
