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
#include <numeric>
#include <string>
#include <vector>

#include "moelab/core/rng.hpp"
#include "moelab/evalsuite/lm.hpp"
#include "moelab/evalsuite/task.hpp"

namespace moelab::evalsuite {

/// Demonstrations come from one seeded permutation of the task, fixed per
/// (task, seed); the scored item is skipped. With zero shots the prompt is
/// the rendered question alone.
inline std::string build_fewshot_prompt(const TaskSpec& task, std::size_t item, std::size_t shots,
                                        std::uint64_t seed) {
  require(item < task.items.size(), Errc::contract, "item index out of range");
  require(shots < task.items.size(), Errc::contract,
          "shots=" + std::to_string(shots) + " needs more than " + std::to_string(task.items.size()) + " items");
  std::string prompt;
  if (shots > 0) {
    std::vector<std::size_t> order(task.items.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(derive_seed(seed, "fewshot"), task.name));
    rng.shuffle(order);
    std::size_t used = 0;
    for (std::size_t idx : order) {
      if (used == shots) break;
      if (idx == item) continue;
      prompt += render_document(task.kind, task.items[idx]);
      prompt += "\n\n";
      ++used;
    }
  }
  prompt += render_question(task.kind, task.items[item].question);
  return prompt;
}

struct AnswerLoss {
  double mean = 0.0;  // per answer token
  double sum = 0.0;
  std::size_t tokens = 0;
};

inline std::vector<TokenId> context_tokens(const LanguageModel& lm, const std::string& prompt) {
  std::vector<TokenId> ids;
  if (auto b = lm.boundary_token()) ids.push_back(*b);
  ByteTokenizer::append(ids, prompt);
  return ids;
}

/// Teacher-forced cross-entropy over the answer positions only.
inline AnswerLoss answer_token_stats(const LanguageModel& lm, const std::string& prompt, const std::string& answer) {
  require(!prompt.empty() && !answer.empty(), Errc::validation, "prompt and answer must each be at least one token");
  std::vector<TokenId> ids = context_tokens(lm, prompt);
  const std::size_t start = ids.size();
  ByteTokenizer::append(ids, answer);
  require(ids.size() <= lm.max_seq_len(), Errc::truncation,
          "prompt+answer is " + std::to_string(ids.size()) + " tokens, max_seq_len is " +
              std::to_string(lm.max_seq_len()));
  for (TokenId t : ids)
    require(t < lm.vocab_size(), Errc::input, "token " + std::to_string(t) + " outside model vocabulary");
  const Tensor<double> logits = lm.logits(ids);
  require(logits.rows() == ids.size() && logits.cols() == lm.vocab_size(), Errc::dimension,
          "model returned logits of the wrong shape");
  AnswerLoss out;
  for (std::size_t i = start; i < ids.size(); ++i) {
    const auto row = logits.row(i - 1);
    const double nll = numerics::logsumexp<double>(row) - row[ids[i]];
    out.sum += nll;
    ++out.tokens;
    // running mean stays exact when every term is equal
    out.mean += (nll - out.mean) / static_cast<double>(out.tokens);
  }
  return out;
}

inline double answer_token_loss(const LanguageModel& lm, const std::string& prompt, const std::string& answer) {
  return answer_token_stats(lm, prompt, answer).mean;
}

struct ChoiceScores {
  std::vector<AnswerLoss> losses;
  std::size_t predicted = 0;  // argmin of per-token loss, first on ties
};

inline ChoiceScores score_choices(const LanguageModel& lm, const std::string& prompt, const EvalItem& item) {
  ChoiceScores s;
  for (const auto& c : item.choices) s.losses.push_back(answer_token_stats(lm, prompt, render_answer(c)));
  for (std::size_t i = 1; i < s.losses.size(); ++i)
    if (s.losses[i].mean < s.losses[s.predicted].mean) s.predicted = i;
  return s;
}

}  // namespace moelab::evalsuite
