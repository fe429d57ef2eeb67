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
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "moelab/analysis/export.hpp"
#include "moelab/budget/plan.hpp"
#include "moelab/cli/config.hpp"
#include "moelab/curvature/probe.hpp"
#include "moelab/evalsuite/evaluate.hpp"
#include "moelab/evalsuite/lm.hpp"
#include "moelab/trainer/checkpoint.hpp"
#include "moelab/trainer/corpus.hpp"
#include "moelab/trainer/trainer.hpp"

namespace moelab::cli {

namespace fs = std::filesystem;

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kConfigError = 3,
  kValidationError = 4,
  kRuntimeError = 5,
};

inline int exit_code_for(Errc c) {
  switch (c) {
    case Errc::config: return kConfigError;
    case Errc::validation:
    case Errc::input:
    case Errc::insufficient_data:
    case Errc::truncation:
    case Errc::checkpoint_header:
    case Errc::checkpoint_payload:
    case Errc::checkpoint_version:
    case Errc::checkpoint_shape: return kValidationError;
    default: return kRuntimeError;
  }
}

inline constexpr const char* kOutRootEnv = "MOELAB_OUT_ROOT";
inline constexpr const char* kResolvedName = "resolved.cfg";
inline constexpr const char* kMetricsName = "metrics.jsonl";
inline constexpr const char* kCheckpointName = "checkpoint.bin";
inline constexpr const char* kEvalName = "eval.jsonl";
inline constexpr const char* kCurvatureName = "curvature.jsonl";

namespace detail {

// --out, then the config's run.out, then $MOELAB_OUT_ROOT/<leaf>, then runs/<leaf>.
inline std::string output_dir(const std::string& flag, const std::string& from_config, const std::string& leaf) {
  if (!flag.empty()) return flag;
  if (!from_config.empty()) return from_config;
  if (const char* root = std::getenv(kOutRootEnv); root && *root) return (fs::path(root) / leaf).string();
  return (fs::path("runs") / leaf).string();
}

inline void make_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), Errc::io, "cannot create output directory " + dir);
}

inline void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  require(out.good(), Errc::io, "cannot write " + p.string());
  out << text;
  require(out.good(), Errc::io, "write failed: " + p.string());
}

inline std::string read_file(const fs::path& p, Errc code) {
  std::ifstream in(p, std::ios::binary);
  require(in.good(), code, "cannot read " + p.string());
  return {(std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()};
}

template <class F>
decltype(auto) with_precision(numerics::Precision p, F&& f) {
  if (p == numerics::Precision::f64) return f(std::type_identity<double>{});
  return f(std::type_identity<float>{});
}

// The experiment config comes from --config, else the copy embedded in
// the checkpoint.
template <class T>
ExperimentConfig experiment_of(const trainer::Checkpoint<T>& ck, const std::string& config_flag) {
  if (!config_flag.empty()) return parse_config(config_flag);
  require(ck.meta.contains("experiment"), Errc::config,
          "checkpoint carries no experiment config; pass --config");
  return parse_config_text(ck.meta["experiment"].template get<std::string>(), "checkpoint");
}

inline std::string fmt_row(const std::vector<std::string>& cols, const std::vector<int>& widths) {
  std::ostringstream os;
  for (std::size_t i = 0; i < cols.size(); ++i) os << std::left << std::setw(widths[i]) << cols[i] << ' ';
  std::string s = os.str();
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s + "\n";
}

}  // namespace detail

// ---- train ----------------------------------------------------------------

struct TrainOutcome {
  std::string run_id;
  std::uint64_t steps = 0;
  std::uint64_t tokens = 0;
  double final_train_ce = 0.0;
  std::optional<double> final_val_ce;
};

/// Trains one experiment into `dir`: resolved.cfg, metrics.jsonl and
/// checkpoint.bin, which is also refreshed every checkpoint_every steps.
/// With `resume`, continues from dir/checkpoint.bin.
inline TrainOutcome train_experiment(const ExperimentConfig& cfg, const std::string& dir, bool resume,
                                     std::ostream& log) {
  const fs::path out(dir);
  const fs::path ck_path = out / kCheckpointName;
  if (resume) require(fs::exists(ck_path), Errc::input, "--resume needs " + ck_path.string());
  detail::make_dir(dir);
  detail::write_file(out / kResolvedName, resolved_text(cfg));

  const trainer::Corpus corpus = trainer::make_corpus(cfg.corpus_spec());
  const trainer::TrainConfig tc = cfg.train_config();
  return detail::with_precision(cfg.model.precision, [&]<class T>(std::type_identity<T>) {
    auto make = [&]() {
      if (!resume) return trainer::Trainer<T>(cfg.model, tc, corpus.train, corpus.validation);
      return trainer::Trainer<T>(trainer::load_checkpoint<T>(ck_path.string(), cfg.model), tc, corpus.train,
                                 corpus.validation);
    };
    trainer::Trainer<T> tr = make();
    auto save = [&](const fs::path& p) {
      auto ck = tr.checkpoint();
      ck.meta["experiment"] = resolved_text(cfg);
      trainer::save_checkpoint(ck, p.string());
    };
    trainer::JsonlWriter metrics((out / kMetricsName).string(), resume);
    TrainOutcome o;
    o.run_id = tc.run_id;
    log << "train " << tc.run_id << ": " << tc.schedule.total_steps << " steps x " << tc.tokens_per_step()
        << " tokens, corpus " << corpus.train.size() << " train / " << corpus.validation.size() << " val tokens\n";
    tr.run(
        [&](const trainer::RunRecord& r) {
          metrics.write(trainer::to_json(r));
          o.final_train_ce = r.train_ce;
          if (r.val_ce) o.final_val_ce = r.val_ce;
        },
        [&](const trainer::Trainer<T>& t) {
          if (cfg.checkpoint_every && t.step_count() % cfg.checkpoint_every == 0 && !t.done()) save(ck_path);
        });
    save(ck_path);
    o.steps = tr.step_count();
    o.tokens = tr.tokens_seen();
    log << "train " << tc.run_id << ": done, train_ce " << o.final_train_ce;
    if (o.final_val_ce) log << ", val_ce " << *o.final_val_ce;
    log << "\n";
    return o;
  });
}

// ---- eval -----------------------------------------------------------------

inline evalsuite::TaskSpec find_task(const trainer::Corpus& corpus, const std::string& name) {
  for (const auto& t : corpus.tasks)
    if (t.name == name) return t;
  std::string known;
  for (const auto& t : corpus.tasks) known += (known.empty() ? "" : ", ") + t.name;
  fail(Errc::config, "unknown task '" + name + "' for this corpus (available: " + known + ")");
}

struct EvalRequest {
  std::string checkpoint;
  std::string config;     // optional override of the embedded config
  std::vector<std::string> tasks;  // empty means the config's list
  std::string task_file;  // JSONL task instead of a corpus task
  evalsuite::EvalMode mode = evalsuite::EvalMode::taskloss;
  std::optional<std::size_t> shots;
  std::optional<std::size_t> max_items;
  std::optional<evalsuite::SCConfig> sc;
  bool with_items = false;
  std::string out;
};

inline std::vector<nlohmann::json> run_eval(const EvalRequest& req, std::ostream& log) {
  const auto prec = trainer::checkpoint_precision(req.checkpoint);
  return detail::with_precision(prec, [&]<class T>(std::type_identity<T>) {
    const auto ck = trainer::load_checkpoint<T>(req.checkpoint);
    ExperimentConfig cfg = detail::experiment_of(ck, req.config);
    if (req.sc) {
      req.sc->validate();
      cfg.sc = *req.sc;
    }
    std::vector<evalsuite::TaskSpec> tasks;
    if (!req.task_file.empty()) {
      tasks.push_back(evalsuite::load_task_jsonl(req.task_file, fs::path(req.task_file).stem().string()));
    } else {
      const trainer::Corpus corpus = trainer::make_corpus(cfg.corpus_spec());
      for (const auto& name : req.tasks.empty() ? cfg.tasks : req.tasks) {
        auto t = find_task(corpus, name);
        if (req.mode == evalsuite::EvalMode::self_consistency && t.kind == evalsuite::TaskKind::multiple_choice) {
          // the config's default list may hold multiple-choice tasks; an explicit one is an error
          require(req.tasks.empty(), Errc::config, "self-consistency needs an open-ended task, got " + name);
          continue;
        }
        tasks.push_back(std::move(t));
      }
    }
    trainer::check_layout(ck, ck.config);
    const evalsuite::TransformerLM<T> lm(ck.config, ck.params);
    const fs::path out = req.out.empty() ? fs::path(req.checkpoint).parent_path() : fs::path(req.out);
    detail::make_dir(out.string());
    if (!fs::exists(out / kResolvedName)) detail::write_file(out / kResolvedName, resolved_text(cfg));
    trainer::JsonlWriter w((out / kEvalName).string(), true);
    const std::string run_id = ck.meta.value("run_id", cfg.resolved_run_id());
    std::vector<nlohmann::json> rows;
    for (const auto& task : tasks) {
      evalsuite::EvalOptions opt;
      opt.mode = req.mode;
      opt.shots = req.shots.value_or(cfg.shots);
      opt.seed = cfg.eval_seed();
      opt.sc = cfg.sc;
      opt.max_items = req.max_items.value_or(cfg.max_items);
      const auto r = evalsuite::evaluate(lm, task, opt);
      nlohmann::json j = evalsuite::to_json(r, run_id, req.with_items);
      j["step"] = ck.step;
      if (req.mode == evalsuite::EvalMode::self_consistency)
        j["sc"] = {{"samples", cfg.sc.n_samples}, {"temperature", cfg.sc.temperature}, {"top_p", cfg.sc.top_p}};
      w.write(j);
      log << "eval " << run_id << " step " << ck.step << " " << task.name << " [" << to_string(r.mode) << ", "
          << r.shots << "-shot, " << r.n_items << " items] task_loss " << r.task_loss;
      if (r.accuracy) log << " accuracy " << *r.accuracy;
      log << "\n";
      rows.push_back(std::move(j));
    }
    return rows;
  });
}

// ---- probe ----------------------------------------------------------------

inline curvature::ProbeReport run_probe(const std::string& checkpoint, const std::string& config_flag,
                                       const std::string& out_flag, std::optional<std::size_t> tokens,
                                       std::optional<bool> include_router, std::ostream& log) {
  const auto prec = trainer::checkpoint_precision(checkpoint);
  return detail::with_precision(prec, [&]<class T>(std::type_identity<T>) {
    const auto ck = trainer::load_checkpoint<T>(checkpoint);
    ExperimentConfig cfg = detail::experiment_of(ck, config_flag);
    curvature::ProbeConfig pc = cfg.probe;
    if (tokens) pc.probe_tokens = *tokens;
    if (include_router) pc.include_router = *include_router;
    pc.seed = cfg.probe_seed();
    require(pc.probe_tokens >= pc.seq_len && pc.seq_len <= ck.config.max_seq_len, Errc::config,
            "probe.tokens must cover one probe.seq_len window within max_seq_len");
    const trainer::Corpus corpus = trainer::make_corpus(cfg.corpus_spec());
    const auto windows = curvature::probe_windows(corpus.train, pc);
    const auto rep = curvature::model_max_eig(ck.config, ck.params, windows, pc);
    const fs::path out = out_flag.empty() ? fs::path(checkpoint).parent_path() : fs::path(out_flag);
    detail::make_dir(out.string());
    if (!fs::exists(out / kResolvedName)) detail::write_file(out / kResolvedName, resolved_text(cfg));
    const std::string run_id = ck.meta.value("run_id", cfg.resolved_run_id());
    trainer::JsonlWriter w((out / kCurvatureName).string(), true);
    const std::vector<int> widths{24, 14, 9, 6};
    log << detail::fmt_row({"layer", "lambda_max", "converged", "tokens"}, widths);
    for (auto j : curvature::to_json_rows(rep, run_id)) {
      j["step"] = ck.step;
      w.write(j);
    }
    for (const auto& l : rep.layers) {
      std::ostringstream v;
      v << std::setprecision(6) << l.lambda_max;
      log << detail::fmt_row({l.name, v.str(), l.converged ? "yes" : "no", std::to_string(l.tokens)}, widths);
    }
    log << "max " << rep.max_lambda << " at " << rep.argmax_layer << "\n";
    return rep;
  });
}

// ---- plan -----------------------------------------------------------------

/// Grid file: a [grid] section whose keys are d_model, n_experts, top_k and
/// granularity, each a comma-separated list. Every combination is tried.
inline std::vector<budget::GridPoint> parse_grid(const std::string& path) {
  const std::string text = detail::read_file(path, Errc::config);
  std::map<std::string, std::vector<std::size_t>> axes{
      {"d_model", {}}, {"n_experts", {}}, {"top_k", {}}, {"granularity", {1}}};
  std::map<std::string, bool> seen;
  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  bool in_grid = false;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = detail::trim(raw);
    const std::string where = path + ":" + std::to_string(lineno);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line[0] == '[') {
      require(line == "[grid]", Errc::config, where + ": unknown section " + line + " (expected [grid])");
      in_grid = true;
      continue;
    }
    require(in_grid, Errc::config, where + ": key outside [grid]");
    const auto eq = line.find('=');
    require(eq != std::string::npos, Errc::config, where + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    require(axes.contains(key), Errc::config, where + ": unknown key 'grid." + key + "'");
    require(!seen[key], Errc::config, where + ": key 'grid." + key + "' repeated");
    seen[key] = true;
    std::vector<std::size_t> vals;
    try {
      for (const auto& s : detail::parse_list(detail::trim(line.substr(eq + 1))))
        vals.push_back(static_cast<std::size_t>(detail::parse_u64(s)));
    } catch (const std::invalid_argument& e) {
      fail(Errc::config, where + ": grid." + key + ": " + e.what());
    }
    require(!vals.empty(), Errc::config, where + ": grid." + key + " is empty");
    axes[key] = vals;
  }
  for (const char* k : {"d_model", "n_experts", "top_k"})
    require(seen[k], Errc::config, path + ": missing required key 'grid." + std::string(k) + "'");
  std::vector<budget::GridPoint> grid;
  for (auto d : axes["d_model"])
    for (auto e : axes["n_experts"])
      for (auto k : axes["top_k"])
        for (auto g : axes["granularity"]) grid.push_back({d, e, k, g});
  return grid;
}

struct PlanRequest {
  std::string grid;
  std::string config;  // base experiment, optional
  std::optional<double> flops_per_token;
  std::optional<double> train_flops;
  double tolerance = 0.01;
  std::optional<std::uint64_t> tokens;
  std::string out;
};

/// Writes sweep.jsonl and one experiment config per planned run.
inline budget::SweepPlan run_plan(const PlanRequest& req, const ExperimentConfig& base, const std::string& dir,
                                  std::ostream& log) {
  const auto grid = parse_grid(req.grid);
  budget::SweepPlan plan;
  const std::uint64_t tps = base.train.tokens_per_step();
  if (req.train_flops && !req.flops_per_token) {
    plan = budget::plan_fixed_compute(base.model, grid, *req.train_flops);
  } else {
    require(req.flops_per_token && *req.flops_per_token > 0, Errc::config,
            "plan needs --flops-per-token or --train-flops");
    require(req.tolerance >= 0, Errc::config, "--tolerance must be non-negative");
    require(!req.train_flops, Errc::config, "--flops-per-token and --train-flops are exclusive");
    const std::uint64_t tokens = req.tokens.value_or(base.train.schedule.total_steps * tps);
    plan = budget::plan_isoflop(base.model, grid, static_cast<std::uint64_t>(std::llround(*req.flops_per_token)),
                                req.tolerance, tokens);
  }
  // Materialize every run config before writing anything.
  std::vector<std::pair<ExperimentConfig, const budget::SweepEntry*>> runs;
  for (const auto& e : plan.entries) {
    ExperimentConfig c = base;
    c.model = e.config;
    c.run_id.clear();
    c.run_id = c.resolved_run_id();
    c.out.clear();
    c.train.schedule.total_steps = std::max<std::uint64_t>(1, (e.tokens + tps - 1) / tps);
    try {
      validate(c, {}, c.run_id);
    } catch (const Error& err) {
      fail(Errc::config, "planned run does not validate: " + err.message());
    }
    runs.emplace_back(std::move(c), &e);
  }
  detail::make_dir(dir);
  detail::write_file(fs::path(dir) / kResolvedName, resolved_text(base));
  std::string sweep;
  const std::vector<int> widths{20, 12, 10, 10, 12, 12, 10};
  log << detail::fmt_row({"run_id", "flops/token", "sparsity", "tokens", "total", "active", "steps"}, widths);
  for (const auto& [c, e] : runs) {
    const auto p = budget::count_params(c.model);
    nlohmann::json j{{"run_id", c.run_id},
                     {"config", trainer::config_to_json(c.model)},
                     {"tokens", e->tokens},
                     {"flops_per_token", e->flops_per_token},
                     {"train_flops", e->train_flops()},
                     {"sparsity", budget::sparsity_of(c.model)},
                     {"density", budget::density_of(c.model)},
                     {"total_params", p.total},
                     {"active_params", p.active},
                     {"total_steps", c.train.schedule.total_steps},
                     {"config_file", c.run_id + ".cfg"}};
    sweep += j.dump() + "\n";
    detail::write_file(fs::path(dir) / (c.run_id + ".cfg"), resolved_text(c));
    log << detail::fmt_row({c.run_id, std::to_string(e->flops_per_token), detail::fmt(budget::sparsity_of(c.model)),
                            std::to_string(e->tokens), std::to_string(p.total), std::to_string(p.active),
                            std::to_string(c.train.schedule.total_steps)},
                           widths);
  }
  detail::write_file(fs::path(dir) / "sweep.jsonl", sweep);
  log << plan.entries.size() << " of " << grid.size() << " grid points planned\n";
  return plan;
}

// ---- analyze --------------------------------------------------------------

struct AnalyzeRequest {
  std::string runs;
  std::vector<std::string> tasks;    // empty means every task found
  std::vector<std::string> metrics;  // empty means task_loss and accuracy
  double rel_tol = 0.02;
  std::string out;
};

inline nlohmann::json run_analyze(const AnalyzeRequest& req, std::ostream& log) {
  std::vector<analysis::Metric> metrics;
  for (const auto& m : req.metrics.empty() ? std::vector<std::string>{"task_loss", "accuracy"} : req.metrics)
    metrics.push_back(analysis::metric_from_string(m));
  require(req.rel_tol >= 0, Errc::config, "--rel-tol must be non-negative");

  const auto set = analysis::load_runs(req.runs);
  const auto finals = analysis::final_records(set);
  std::set<std::string> tasks(req.tasks.begin(), req.tasks.end());
  if (tasks.empty())
    for (const auto& r : finals)
      for (const auto& [t, m] : r.tasks) tasks.insert(t);

  detail::make_dir(req.out);
  std::string resolved = "# resolved configuration\n\n[analyze]\nruns = " + req.runs + "\ntasks = " +
                         detail::join(std::vector<std::string>(tasks.begin(), tasks.end())) + "\nmetrics = ";
  for (std::size_t i = 0; i < metrics.size(); ++i) resolved += (i ? ", " : "") + to_string(metrics[i]);
  resolved += "\nrel_tol = " + detail::fmt(req.rel_tol) + "\n";
  detail::write_file(fs::path(req.out) / kResolvedName, resolved);

  nlohmann::json summary{{"runs", finals.size()},
                         {"warnings", set.warnings},
                         {"notices", nlohmann::json::array()},
                         {"optimal_density", nlohmann::json::array()},
                         {"curves", nlohmann::json::array()}};
  auto emit = [&](const analysis::CurveSet& cs) {
    analysis::export_curves(cs, req.out, finals);
    summary["curves"].push_back(cs.name);
    for (const auto& s : cs.series)
      for (const auto& p : s.points)
        summary["regimes"][cs.name][p.run_id] = analysis::to_string(p.regime);
  };
  for (const auto& w : set.warnings) log << "warning: " << w << "\n";
  for (const auto& task : tasks) {
    for (auto m : metrics) {
      bool any = false;
      for (const auto& r : finals) any = any || analysis::metric_of(r, task, m).has_value();
      if (!any) continue;
      const auto d = analysis::optimal_density(finals, task, m, req.rel_tol);
      for (const auto& n : d.notices) summary["notices"].push_back(task + "/" + to_string(m) + ": " + n);
      for (const auto& r : d.results) {
        summary["optimal_density"].push_back(
            {{"task", task}, {"metric", to_string(m)}, {"group", r.group}, {"density", r.optimal_density},
             {"run_id", r.optimum.run_id}, {"value", r.optimum.y}});
        log << "optimal density " << task << "/" << to_string(m) << " " << r.group << ": " << r.optimal_density
            << " (" << r.optimum.run_id << ")\n";
      }
      emit(analysis::density_curves(d, task, m));
      emit(analysis::loss_task_curve(finals, task, m));
      try {
        emit(analysis::tpp_curve(finals, task, m));
      } catch (const Error& e) {
        if (e.code() != Errc::contract) throw;
        summary["notices"].push_back(task + "/" + to_string(m) + ": tokens-per-parameter curve skipped: " + e.what());
      }
    }
  }
  for (const auto& n : summary["notices"]) log << "notice: " << n.get<std::string>() << "\n";
  detail::write_file(fs::path(req.out) / "summary.json", summary.dump(2) + "\n");
  log << "analyze: " << finals.size() << " runs, " << summary["curves"].size() << " curve sets in " << req.out
      << "\n";
  return summary;
}

// ---- entry point ----------------------------------------------------------

inline int run_command(int argc, const char* const* argv, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
  CLI::App app{"moelab: sparse mixture-of-experts scaling experiments", "moelab"};
  app.require_subcommand(1);
  app.fallthrough(false);

  // plan
  PlanRequest plan;
  std::string plan_tokens;
  auto* cmd_plan = app.add_subcommand("plan", "iso-FLOP grid -> sweep file and per-run configs");
  cmd_plan->add_option("--grid", plan.grid, "grid file with a [grid] section")->required()->check(CLI::ExistingFile);
  cmd_plan->add_option("--config", plan.config, "base experiment config");
  cmd_plan->add_option("--flops-per-token", plan.flops_per_token, "target forward FLOPs per token");
  cmd_plan->add_option("--train-flops", plan.train_flops, "fixed training FLOP budget per run instead");
  cmd_plan->add_option("--tolerance", plan.tolerance, "relative FLOP tolerance")->capture_default_str();
  cmd_plan->add_option("--tokens", plan_tokens, "token budget per run");
  cmd_plan->add_option("--out", plan.out, "output directory");

  // train
  std::vector<std::string> train_configs;
  std::string train_out;
  bool train_resume = false;
  std::size_t jobs = 1;
  auto* cmd_train = app.add_subcommand("train", "config -> run records and checkpoint");
  cmd_train->add_option("--config", train_configs, "experiment config (repeatable)")->required();
  cmd_train->add_option("--out", train_out, "output directory (a parent directory for several configs)");
  cmd_train->add_flag("--resume", train_resume, "continue from <out>/checkpoint.bin");
  cmd_train->add_option("--jobs", jobs, "parallel runs as separate processes")->check(CLI::PositiveNumber);

  // eval and sc-eval
  EvalRequest ev, sc;
  std::string ev_mode = "taskloss";
  std::size_t ev_shots = 0, ev_max = 0, sc_shots = 0, sc_max = 0;
  evalsuite::SCConfig scc;
  auto add_common = [](CLI::App* c, EvalRequest& r, std::size_t& shots, std::size_t& max_items) {
    c->add_option("--checkpoint", r.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
    c->add_option("--config", r.config, "experiment config (default: the one stored in the checkpoint)");
    c->add_option("--task", r.tasks, "task name (repeatable; default: the config's list)");
    c->add_option("--task-file", r.task_file, "JSONL task file")->check(CLI::ExistingFile);
    c->add_option("--shots", shots, "few-shot demonstrations");
    c->add_option("--max-items", max_items, "evaluate only the first N items");
    c->add_flag("--items", r.with_items, "store per-item records");
    c->add_option("--out", r.out, "output directory (default: the checkpoint's)");
  };
  auto* cmd_eval = app.add_subcommand("eval", "checkpoint + task -> task loss / pass@1");
  add_common(cmd_eval, ev, ev_shots, ev_max);
  cmd_eval->add_option("--mode", ev_mode, "taskloss | pass1")->check(CLI::IsMember({"taskloss", "pass1"}));
  auto* cmd_sc = app.add_subcommand("sc-eval", "self-consistency majority vote");
  add_common(cmd_sc, sc, sc_shots, sc_max);
  cmd_sc->add_option("--samples", scc.n_samples, "samples per item")->capture_default_str();
  cmd_sc->add_option("--temp", scc.temperature, "sampling temperature")->capture_default_str();
  cmd_sc->add_option("--top-p", scc.top_p, "nucleus threshold")->capture_default_str();
  cmd_sc->add_option("--max-new-tokens", scc.max_new_tokens, "decode length limit")->capture_default_str();

  // probe-eig
  std::string pr_ck, pr_cfg, pr_out;
  std::size_t pr_tokens = 0;
  bool pr_no_router = false;
  auto* cmd_probe = app.add_subcommand("probe-eig", "checkpoint -> per-layer K-FAC max eigenvalue table");
  cmd_probe->add_option("--checkpoint", pr_ck, "checkpoint file")->required()->check(CLI::ExistingFile);
  cmd_probe->add_option("--config", pr_cfg, "experiment config (default: the one stored in the checkpoint)");
  cmd_probe->add_option("--tokens", pr_tokens, "probe tokens");
  cmd_probe->add_flag("--no-router", pr_no_router, "skip router matrices");
  cmd_probe->add_option("--out", pr_out, "output directory (default: the checkpoint's)");

  // analyze
  AnalyzeRequest an;
  auto* cmd_an = app.add_subcommand("analyze", "runs directory -> curves (CSV + JSON) and summary");
  cmd_an->add_option("--runs", an.runs, "directory searched recursively for *.jsonl")->required();
  cmd_an->add_option("--task", an.tasks, "task (repeatable; default: all found)");
  cmd_an->add_option("--metric", an.metrics, "task_loss | accuracy | train_ce | val_ce (repeatable)");
  cmd_an->add_option("--rel-tol", an.rel_tol, "active-parameter grouping tolerance")->capture_default_str();
  cmd_an->add_option("--out", an.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kUsage;
  }

  try {
    if (*cmd_plan) {
      if (!plan_tokens.empty()) {
        try {
          plan.tokens = detail::parse_u64(plan_tokens);
        } catch (const std::invalid_argument& e) {
          fail(Errc::config, std::string("--tokens: ") + e.what());
        }
      }
      ExperimentConfig base;
      if (!plan.config.empty()) base = parse_config(plan.config);
      const std::string dir = detail::output_dir(plan.out, base.out, "plan");
      run_plan(plan, base, dir, out);
    } else if (*cmd_train) {
      std::vector<ExperimentConfig> cfgs;
      for (const auto& p : train_configs) cfgs.push_back(parse_config(p));
      std::vector<std::string> dirs;
      std::set<std::string> unique;
      for (const auto& c : cfgs) {
        const std::string id = c.resolved_run_id();
        dirs.push_back(cfgs.size() == 1 ? detail::output_dir(train_out, c.out, id)
                                        : (fs::path(detail::output_dir(train_out, "", "")) / id).string());
        require(unique.insert(fs::weakly_canonical(dirs.back()).string()).second, Errc::config,
                "two configs share the output directory " + dirs.back());
      }
      if (jobs <= 1 || cfgs.size() == 1) {
        for (std::size_t i = 0; i < cfgs.size(); ++i) train_experiment(cfgs[i], dirs[i], train_resume, out);
      } else {
        out.flush();
        err.flush();
        std::size_t next = 0, running = 0;
        int worst = kOk;
        std::map<pid_t, std::size_t> children;
        while (next < cfgs.size() || running > 0) {
          while (running < jobs && next < cfgs.size()) {
            const pid_t pid = ::fork();
            require(pid >= 0, Errc::io, "fork failed");
            if (pid == 0) {
              int code = kOk;
              try {
                train_experiment(cfgs[next], dirs[next], train_resume, out);
              } catch (const Error& e) {
                err << "error: " << e.what() << "\n";
                code = exit_code_for(e.code());
              } catch (const std::exception& e) {
                err << "error: " << e.what() << "\n";
                code = kRuntimeError;
              }
              out.flush();
              err.flush();
              std::_Exit(code);
            }
            children[pid] = next++;
            ++running;
          }
          int status = 0;
          const pid_t done = ::wait(&status);
          if (done < 0) break;
          --running;
          const int code = WIFEXITED(status) ? WEXITSTATUS(status) : kRuntimeError;
          if (code != kOk) err << "run " << cfgs[children[done]].resolved_run_id() << " failed with exit " << code << "\n";
          worst = std::max(worst, code);
        }
        return worst;
      }
    } else if (*cmd_eval || *cmd_sc) {
      const bool is_sc = cmd_sc->parsed();
      EvalRequest& r = is_sc ? sc : ev;
      CLI::App* c = is_sc ? cmd_sc : cmd_eval;
      r.mode = is_sc ? evalsuite::EvalMode::self_consistency : evalsuite::eval_mode_from_string(ev_mode);
      if (c->count("--shots")) r.shots = is_sc ? sc_shots : ev_shots;
      if (c->count("--max-items")) r.max_items = is_sc ? sc_max : ev_max;
      if (is_sc) {
        scc.validate();
        r.sc = scc;
      }
      run_eval(r, out);
    } else if (*cmd_probe) {
      run_probe(pr_ck, pr_cfg, pr_out, cmd_probe->count("--tokens") ? std::optional<std::size_t>(pr_tokens) : std::nullopt,
                pr_no_router ? std::optional<bool>(false) : std::nullopt, out);
    } else if (*cmd_an) {
      if (an.out.empty()) an.out = detail::output_dir("", "", "analysis");
      run_analyze(an, out);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kOk;
}

}  // namespace moelab::cli
