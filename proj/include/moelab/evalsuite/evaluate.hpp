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

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "moelab/evalsuite/decode.hpp"
#include "moelab/evalsuite/protocol.hpp"

namespace moelab::evalsuite {

enum class EvalMode { taskloss, pass1, self_consistency };

inline std::string to_string(EvalMode m) {
  switch (m) {
    case EvalMode::taskloss: return "taskloss";
    case EvalMode::pass1: return "pass1";
    case EvalMode::self_consistency: return "sc";
  }
  return "?";
}

inline EvalMode eval_mode_from_string(const std::string& s) {
  if (s == "taskloss") return EvalMode::taskloss;
  if (s == "pass1") return EvalMode::pass1;
  if (s == "sc" || s == "self-consistency") return EvalMode::self_consistency;
  fail(Errc::config, "unknown eval mode '" + s + "' (taskloss | pass1 | sc)");
}

struct ItemRecord {
  double loss = 0.0;      // per-token loss of the gold answer
  double loss_raw = 0.0;  // summed over the gold answer's tokens
  std::optional<std::string> predicted;
  std::string gold;
  bool correct = false;
};

struct EvalResult {
  std::string task;
  EvalMode mode = EvalMode::taskloss;
  std::size_t shots = 0;
  std::size_t n_items = 0;
  std::size_t n_correct = 0;
  double task_loss = 0.0;
  std::optional<double> accuracy;  // absent in taskloss mode
  std::vector<ItemRecord> records;
};

struct EvalOptions {
  EvalMode mode = EvalMode::taskloss;
  std::optional<std::size_t> shots;  // defaults to the task's shot count
  std::uint64_t seed = 0;
  DecodeOptions pass1{1.0, 1.0, 96, true, {"\nQuestion:"}};
  SCConfig sc;
  std::size_t max_items = 0;  // 0 means all
};

/// Scores every item, in order. Multiple-choice pass1 is the argmin of
/// per-token choice loss; open-ended pass1 is exact match after extraction.
inline EvalResult evaluate(const LanguageModel& lm, const TaskSpec& task, const EvalOptions& opt) {
  task.validate();
  require(!task.items.empty(), Errc::validation, "task " + task.name + " has no items");
  require(!(opt.mode == EvalMode::self_consistency && task.kind == TaskKind::multiple_choice), Errc::contract,
          "self-consistency needs an open-ended task");
  EvalResult r;
  r.task = task.name;
  r.mode = opt.mode;
  r.shots = opt.shots.value_or(task.shots);
  const std::size_t n =
      opt.max_items == 0 ? task.items.size() : std::min(opt.max_items, task.items.size());
  const std::uint64_t item_seed = derive_seed(opt.seed, "decode");
  double loss_mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const EvalItem& item = task.items[i];
    const std::string prompt = build_fewshot_prompt(task, i, r.shots, opt.seed);
    ItemRecord rec;
    if (task.kind == TaskKind::multiple_choice) {
      const std::size_t gold = item.gold_index();
      rec.gold = item.answer;
      if (opt.mode == EvalMode::taskloss) {
        const AnswerLoss l = answer_token_stats(lm, prompt, render_answer(item.answer));
        rec.loss = l.mean;
        rec.loss_raw = l.sum;
      } else {
        const ChoiceScores s = score_choices(lm, prompt, item);
        rec.loss = s.losses[gold].mean;
        rec.loss_raw = s.losses[gold].sum;
        rec.predicted = item.choices[s.predicted];
        rec.correct = s.predicted == gold;
      }
    } else {
      rec.gold = gold_answer(task, item);
      const AnswerLoss l = answer_token_stats(lm, prompt, render_answer(item.answer));
      rec.loss = l.mean;
      rec.loss_raw = l.sum;
      if (opt.mode == EvalMode::pass1) {
        rec.predicted = extract_completion(task, item, sample_decode(lm, prompt, opt.pass1, derive_seed(item_seed, i)));
      } else if (opt.mode == EvalMode::self_consistency) {
        rec.predicted = self_consistency(lm, task, item, prompt, opt.sc, derive_seed(item_seed, i)).answer;
      }
      rec.correct = rec.predicted && *rec.predicted == rec.gold;
    }
    r.n_correct += rec.correct;
    loss_mean += (rec.loss - loss_mean) / static_cast<double>(i + 1);
    r.records.push_back(std::move(rec));
  }
  r.n_items = n;
  r.task_loss = loss_mean;
  if (opt.mode != EvalMode::taskloss) r.accuracy = static_cast<double>(r.n_correct) / static_cast<double>(n);
  return r;
}

inline EvalResult mc_accuracy(const LanguageModel& lm, const TaskSpec& task, std::uint64_t seed = 0) {
  require(task.kind == TaskKind::multiple_choice, Errc::contract, "mc_accuracy needs a multiple-choice task");
  EvalOptions opt;
  opt.mode = EvalMode::pass1;
  opt.seed = seed;
  return evaluate(lm, task, opt);
}

inline nlohmann::json to_json(const EvalResult& r, const std::string& run_id, bool with_items = false) {
  nlohmann::json j{{"record", "eval"},
                   {"run_id", run_id},
                   {"task", r.task},
                   {"mode", to_string(r.mode)},
                   {"shots", r.shots},
                   {"n_items", r.n_items},
                   {"task_loss", r.task_loss},
                   {"accuracy", r.accuracy ? nlohmann::json(*r.accuracy) : nlohmann::json(nullptr)}};
  if (with_items) {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& rec : r.records)
      items.push_back({{"loss", rec.loss},
                       {"loss_raw", rec.loss_raw},
                       {"predicted", rec.predicted ? nlohmann::json(*rec.predicted) : nlohmann::json(nullptr)},
                       {"gold", rec.gold},
                       {"correct", rec.correct}});
    j["items"] = std::move(items);
  }
  return j;
}

}  // namespace moelab::evalsuite
