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

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "moelab/core/error.hpp"

namespace moelab::evalsuite {

enum class TaskKind { multiple_choice, open_ended };

inline std::string to_string(TaskKind k) { return k == TaskKind::multiple_choice ? "multiple-choice" : "open-ended"; }

struct EvalItem {
  std::string question;
  std::string answer;                // gold answer string
  std::vector<std::string> choices;  // empty for open-ended items

  std::size_t gold_index() const {
    for (std::size_t i = 0; i < choices.size(); ++i)
      if (choices[i] == answer) return i;
    fail(Errc::validation, "gold answer is not among the choices");
  }
};

// Canonicalization applied to extracted and gold answers.
struct Canonicalization {
  bool strip_commas = true;
  bool strip_trailing_period = true;
  bool strip_dollar = true;
  bool trim_whitespace = true;
};

struct TaskSpec {
  std::string name;
  TaskKind kind = TaskKind::open_ended;
  std::vector<EvalItem> items;
  std::size_t shots = 0;
  std::vector<std::string> patterns{"####", "The answer is", "Answer:"};
  Canonicalization canon;

  void validate() const {
    require(!name.empty(), Errc::validation, "task needs a name");
    for (std::size_t i = 0; i < items.size(); ++i) {
      const EvalItem& it = items[i];
      const std::string where = name + " item " + std::to_string(i);
      require(!it.question.empty() && !it.answer.empty(), Errc::validation, where + ": empty question or answer");
      if (kind == TaskKind::multiple_choice) {
        require(it.choices.size() >= 2, Errc::validation, where + ": needs at least two choices");
        std::size_t gold = 0;
        for (const auto& c : it.choices) gold += c == it.answer;
        require(gold == 1, Errc::validation, where + ": gold answer must appear exactly once among choices");
      } else {
        require(it.choices.empty(), Errc::validation, where + ": open-ended items carry no choices");
      }
    }
  }
};

// Shared QA template. Open-ended questions are wrapped as
// "Question: {q}\nAnswer:"; multiple-choice questions are used verbatim.
// Answers and choices always follow after one space.
inline std::string render_question(TaskKind kind, const std::string& question) {
  return kind == TaskKind::open_ended ? "Question: " + question + "\nAnswer:" : question;
}

inline std::string render_answer(const std::string& answer) { return " " + answer; }

inline std::string render_document(TaskKind kind, const EvalItem& it) {
  return render_question(kind, it.question) + render_answer(it.answer);
}

inline nlohmann::json to_json(const EvalItem& it) {
  nlohmann::json j{{"question", it.question}, {"answer", it.answer}};
  if (!it.choices.empty()) j["choices"] = it.choices;
  return j;
}

// One item per line: {question, answer, choices?}. The task kind follows
// from whether the items carry choices.
inline TaskSpec load_task_jsonl(const std::string& path, const std::string& name) {
  std::ifstream in(path);
  require(in.good(), Errc::io, "cannot open task file " + path);
  TaskSpec t;
  t.name = name;
  std::string line;
  std::size_t lineno = 0;
  bool any_choices = false, any_open = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::validation, path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    require(j.is_object() && j.contains("question") && j.contains("answer") && j["question"].is_string() &&
                j["answer"].is_string(),
            Errc::validation, path + ":" + std::to_string(lineno) + ": expected string fields question and answer");
    EvalItem it{j["question"].get<std::string>(), j["answer"].get<std::string>(), {}};
    if (j.contains("choices")) {
      require(j["choices"].is_array(), Errc::validation, path + ":" + std::to_string(lineno) + ": choices must be a list");
      it.choices = j["choices"].get<std::vector<std::string>>();
    }
    (it.choices.empty() ? any_open : any_choices) = true;
    t.items.push_back(std::move(it));
  }
  require(!(any_choices && any_open), Errc::validation, path + ": mixes multiple-choice and open-ended items");
  t.kind = any_choices ? TaskKind::multiple_choice : TaskKind::open_ended;
  t.validate();
  return t;
}

inline void save_task_jsonl(const TaskSpec& t, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), Errc::io, "cannot write task file " + path);
  for (const auto& it : t.items) out << to_json(it).dump() << '\n';
}

}  // namespace moelab::evalsuite
