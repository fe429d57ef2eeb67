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
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "moelab/budget/budget.hpp"
#include "moelab/trainer/run_record.hpp"

namespace moelab::analysis {

using trainer::RunRecord;

struct TaskMetrics {
  std::optional<double> loss;
  std::optional<double> accuracy;
};

/// One (run_id, step) point with the eval results attached to it. Eval rows
/// in self-consistency mode are stored under "<task>@sc".
struct AnalysisRecord {
  RunRecord run;
  std::map<std::string, TaskMetrics> tasks;
};

struct RunSet {
  std::vector<AnalysisRecord> records;  // sorted by (run_id, step)
  std::vector<std::string> warnings;
};

namespace detail {

inline void check_budget(const RunRecord& r, const std::string& where) {
  model::ModelConfig cfg;
  try {
    cfg = trainer::model_config_of(r);
    cfg.validate();
  } catch (const Error& e) {
    fail(Errc::validation, where + ": config fields do not validate: " + e.what());
  }
  const auto p = budget::count_params(cfg);
  const double s = budget::sparsity_of(cfg);
  require(r.sparsity == s, Errc::validation,
          where + ": stored sparsity " + std::to_string(r.sparsity) + " != recomputed " + std::to_string(s));
  require(r.total_params == p.total && r.active_params == p.active, Errc::validation,
          where + ": stored parameter counts (" + std::to_string(r.total_params) + ", " +
              std::to_string(r.active_params) + ") != recomputed (" + std::to_string(p.total) + ", " +
              std::to_string(p.active) + ")");
}

inline std::vector<std::filesystem::path> jsonl_files(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace detail

/// Reads every *.jsonl under `dir`. Train rows become records keyed by
/// (run_id, step); eval rows attach to the record with their run_id and
/// step, or to the run's last step when they carry none. Other record
/// kinds are skipped.
inline RunSet load_runs(const std::string& dir) {
  require(std::filesystem::is_directory(dir), Errc::io, "not a directory: " + dir);
  std::map<std::pair<std::string, std::uint64_t>, AnalysisRecord> by_key;
  struct PendingEval {
    nlohmann::json j;
    std::string where;
  };
  std::vector<PendingEval> evals;
  RunSet out;
  for (const auto& file : detail::jsonl_files(dir)) {
    std::ifstream in(file);
    require(in.good(), Errc::io, "cannot read " + file.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const std::string where = file.string() + ":" + std::to_string(lineno);
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        fail(Errc::validation, where + ": malformed JSON: " + e.what());
      }
      require(j.is_object(), Errc::validation, where + ": expected a JSON object");
      const std::string kind = j.value("record", std::string("train"));
      if (kind == "eval") {
        evals.push_back({std::move(j), where});
        continue;
      }
      if (kind != "train") continue;
      RunRecord r;
      try {
        r = trainer::run_record_from_json(j);
      } catch (const Error& e) {
        fail(Errc::validation, where + ": " + e.what());
      }
      detail::check_budget(r, where);
      auto key = std::make_pair(r.run_id, r.step);
      if (by_key.contains(key)) {
        out.warnings.push_back(where + ": duplicate record for run " + r.run_id + " step " + std::to_string(r.step) +
                               " ignored");
        continue;
      }
      by_key.emplace(std::move(key), AnalysisRecord{std::move(r), {}});
    }
  }
  for (auto& ev : evals) {
    const auto& j = ev.j;
    std::string run_id, task, mode;
    try {
      run_id = j.at("run_id").get<std::string>();
      task = j.at("task").get<std::string>();
      mode = j.value("mode", std::string("taskloss"));
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::validation, ev.where + ": malformed eval record: " + e.what());
    }
    AnalysisRecord* target = nullptr;
    if (j.contains("step") && j["step"].is_number_unsigned()) {
      auto it = by_key.find({run_id, j["step"].get<std::uint64_t>()});
      if (it != by_key.end()) target = &it->second;
    } else {
      for (auto& [key, rec] : by_key)
        if (key.first == run_id) target = &rec;  // map order leaves the last step
    }
    if (!target) {
      out.warnings.push_back(ev.where + ": eval for unknown run " + run_id + " ignored");
      continue;
    }
    TaskMetrics& m = target->tasks[mode == "sc" ? task + "@sc" : task];
    if (j.contains("task_loss") && j["task_loss"].is_number()) m.loss = j["task_loss"].get<double>();
    if (j.contains("accuracy") && j["accuracy"].is_number()) m.accuracy = j["accuracy"].get<double>();
  }
  for (auto& [key, rec] : by_key) out.records.push_back(std::move(rec));
  return out;
}

// Last step of every run.
inline std::vector<AnalysisRecord> final_records(const RunSet& set) {
  std::vector<AnalysisRecord> out;
  for (const auto& r : set.records) {
    if (!out.empty() && out.back().run.run_id == r.run.run_id)
      out.back() = r;
    else
      out.push_back(r);
  }
  return out;
}

}  // namespace moelab::analysis
