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


// Acceptance gate. Prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails. Arguments select a subset, e.g. `acceptance 1 4 9`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/KroneckerProduct>
#include <json.hpp>

#include "common/stubs.hpp"
#include "moelab/analysis/curves.hpp"
#include "moelab/analysis/runs.hpp"
#include "moelab/budget/plan.hpp"
#include "moelab/cli/commands.hpp"
#include "moelab/core/rng.hpp"
#include "moelab/curvature/kfac.hpp"
#include "moelab/evalsuite/evaluate.hpp"
#include "moelab/model/loss.hpp"
#include "moelab/model/transformer.hpp"
#include "moelab/numerics/gradcheck.hpp"
#include "moelab/trainer/checkpoint.hpp"
#include "moelab/trainer/corpus.hpp"
#include "moelab/trainer/trainer.hpp"

namespace {

using namespace moelab;
using model::ModelConfig;
using numerics::Tensor;
using numerics::TokenId;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = true;
  std::vector<std::string> failures;
  std::vector<std::string> notes;

  void check(bool ok, const std::string& what) {
    if (ok) return;
    pass = false;
    failures.push_back(what);
  }
  void note(const std::string& n) { notes.push_back(n); }
};

std::string num(double v, int prec = 6) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- 1 ---------------------------------------------------------------------

Outcome routing() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  std::size_t draws = 0;
  for (std::size_t e : {4u, 8u, 16u}) {
    for (std::size_t k : {1u, 2u, 4u}) {
      Tensor<float> s({10000, e});
      // every fourth row is coarse so ties are common
      for (std::size_t r = 0; r < s.rows(); ++r)
        for (float& v : s.row(r))
          v = r % 4 == 0 ? static_cast<float>(rng.below(3)) : static_cast<float>(3.0 * rng.normal());
      const auto d = model::route_logits(s, k);
      std::size_t bad_nonzero = 0, bad_sum = 0, bad_set = 0;
      for (std::size_t r = 0; r < s.rows(); ++r) {
        std::size_t nonzero = 0;
        double total = 0;
        for (float g : d.gates.row(r)) {
          nonzero += g != 0.0f;
          total += g;
        }
        bad_nonzero += nonzero != k;
        bad_sum += std::abs(total - 1.0) > 1e-6;
        std::vector<std::uint32_t> idx(e);
        std::iota(idx.begin(), idx.end(), 0u);
        const auto row = s.row(r);
        std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return row[a] > row[b]; });
        idx.resize(k);
        std::set<std::uint32_t> want(idx.begin(), idx.end());
        const auto got_span = d.selected_row(r);
        std::set<std::uint32_t> got(got_span.begin(), got_span.end());
        bad_set += got != want;
        for (std::uint32_t i = 0; i < e; ++i) bad_set += (d.gates(r, i) != 0.0f) != want.contains(i);
        ++draws;
      }
      const std::string at = "E=" + std::to_string(e) + " k=" + std::to_string(k) + ": ";
      o.check(bad_nonzero == 0, at + std::to_string(bad_nonzero) + " rows without k nonzeros");
      o.check(bad_sum == 0, at + std::to_string(bad_sum) + " rows with gate sum off by > 1e-6");
      o.check(bad_set == 0, at + std::to_string(bad_set) + " index-set mismatches against the sort oracle");
    }
  }
  const double t = seconds_since(t0);
  o.check(t < 10.0, "runtime " + num(t) + " s >= 10 s");
  o.note(std::to_string(draws) + " draws");
  return o;
}

// ---- 2 ---------------------------------------------------------------------

Outcome formulas() {
  Outcome o;
  ModelConfig c;
  c.n_experts = 8;
  c.top_k = 2;
  const double s8 = budget::sparsity_of(c);
  c.n_experts = 256;
  const double s256 = budget::sparsity_of(c);
  const double t = budget::tpp(125e9, 6.25e9);
  o.check(s8 == 0.75, "sparsity(8,2) = " + num(s8, 17));
  o.check(s256 == 0.9921875, "sparsity(256,2) = " + num(s256, 17));
  o.check(t == 20.0, "tpp(125e9, 6.25e9) = " + num(t, 17));
  o.note("sparsity(8,2)=" + num(s8, 17) + " sparsity(256,2)=" + num(s256, 17) + " tpp=" + num(t, 17));
  return o;
}

// ---- 3 ---------------------------------------------------------------------

Outcome gradient() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.n_experts = 4;
  cfg.top_k = 2;
  cfg.vocab_size = 16;
  cfg.max_seq_len = 32;
  cfg.precision = numerics::Precision::f64;
  cfg.init_std = 0.5;
  const double alpha = 1e-2, beta = 1e-3;
  const std::size_t seq_len = 6;
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(1000 + seed);
    std::vector<TokenId> inputs(2 * seq_len), targets(2 * seq_len);
    for (auto& v : inputs) v = static_cast<TokenId>(rng.below(cfg.vocab_size));
    for (auto& v : targets) v = static_cast<TokenId>(rng.below(cfg.vocab_size));
    std::vector<char> mask_storage(inputs.size(), 1);
    mask_storage[0] = 0;
    const std::span<const bool> mask(reinterpret_cast<const bool*>(mask_storage.data()), mask_storage.size());

    auto params = model::init_parameters<double>(cfg, seed);
    numerics::Tape<double> tape;
    auto fwd = model::transformer_forward(tape, cfg, params, inputs, seq_len);
    std::vector<std::uint32_t> baseline;
    for (const auto& l : fwd.layers) baseline.insert(baseline.end(), l.decision.selected.begin(), l.decision.selected.end());
    auto loss = model::combined_loss(tape, fwd, targets, mask, alpha, beta);
    tape.backward(loss.total);

    std::vector<Tensor<double>> xs;
    for (const auto& e : params.entries()) xs.push_back(e.value);
    std::vector<std::uint32_t> last;
    auto f = [&](const std::vector<Tensor<double>>& in) {
      model::ParameterStore<double> p;
      for (std::size_t i = 0; i < in.size(); ++i) p.add(params.entries()[i].name, in[i]);
      numerics::Tape<double> t;
      model::ForwardOptions opt;
      opt.params_require_grad = false;
      auto fr = model::transformer_forward(t, cfg, p, inputs, seq_len, opt);
      last.clear();
      for (const auto& l : fr.layers) last.insert(last.end(), l.decision.selected.begin(), l.decision.selected.end());
      return t.value(model::combined_loss(t, fr, targets, mask, alpha, beta).total).item();
    };
    numerics::FiniteDifference fd;
    std::size_t rejected = 0;
    const auto numeric = fd.gradient(f, xs, [&] { return last == baseline; }, &rejected);
    std::size_t total = 0;
    for (const auto& x : xs) total += x.size();
    o.check(rejected < total / 50, "seed " + std::to_string(seed) + ": " + std::to_string(rejected) +
                                       " of " + std::to_string(total) + " perturbations changed a top-k set");
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const Tensor<double>* g = tape.grad(fwd.params[i]);
      if (!g) {
        o.check(false, "seed " + std::to_string(seed) + ": no gradient for " + params.entries()[i].name);
        continue;
      }
      Tensor<double> analytic = *g;
      for (std::size_t j = 0; j < analytic.size(); ++j)
        if (rejected && numeric[i][j] == 0.0) analytic[j] = 0.0;
      const double err = numerics::relative_error(analytic, numeric[i]);
      worst = std::max(worst, err);
      o.check(err <= 1e-5, "seed " + std::to_string(seed) + " " + params.entries()[i].name + ": rel err " + num(err));
    }
  }
  const double t = seconds_since(t0);
  o.check(t < 120.0, "runtime " + num(t) + " s >= 120 s");
  o.note("worst rel err " + num(worst, 3));
  return o;
}

// ---- 4 ---------------------------------------------------------------------

Outcome aux_losses() {
  Outcome o;
  double worst_uniform = 0.0;
  for (std::size_t e : {2u, 4u, 8u, 16u, 64u}) {
    for (std::size_t k = 1; k <= e; k *= 2) {
      model::MoELayerStats s;
      s.f.assign(e, static_cast<double>(k) / static_cast<double>(e));
      s.P.assign(e, 1.0 / static_cast<double>(e));
      s.top_k = k;
      s.tokens = 1;
      worst_uniform = std::max(worst_uniform, std::abs(model::lb_loss(s) - 1.0));
    }
    model::MoELayerStats c;
    c.f.assign(e, 0.0);
    c.P.assign(e, 0.0);
    c.f[0] = c.P[0] = 1.0;
    c.top_k = 1;
    c.tokens = 1;
    const double lb = model::lb_loss(c);
    o.check(lb == static_cast<double>(e), "collapse over E=" + std::to_string(e) + " gives " + num(lb, 17));
  }
  // Equal router logits also route uniformly in probability.
  const auto st = model::layer_stats(model::route_logits(Tensor<double>({12, 8}, 0.25), 2));
  worst_uniform = std::max(worst_uniform, std::abs(model::lb_loss(st) - 1.0));
  o.check(worst_uniform <= 1e-9, "uniform lb off by " + num(worst_uniform));

  const double ln2 = std::log(2.0);
  const double rz = model::rz_loss(Tensor<double>::matrix({{ln2, ln2}}));
  const double want = std::log(4.0) * std::log(4.0);
  o.check(std::abs(rz - want) <= 1e-9, "rz([ln2, ln2]) = " + num(rz, 17) + ", want " + num(want, 17));
  o.note("uniform dev " + num(worst_uniform, 3) + ", rz " + num(rz, 12));
  return o;
}

// ---- 5 ---------------------------------------------------------------------

// Brute-force count over an instantiated store. Expert tensors with index >= k'
// are inactive.
budget::ParamCount walk(const ModelConfig& cfg) {
  auto store = model::init_parameters<float>(cfg, 1);
  budget::ParamCount c;
  for (const auto& e : store.entries()) {
    c.total += e.value.size();
    if (e.name == "embed") c.embedding += e.value.size();
    const auto pos = e.name.find("experts.");
    bool active = true;
    if (pos != std::string::npos) active = std::stoul(e.name.substr(pos + 8)) < cfg.effective_top_k();
    if (active) c.active += e.value.size();
  }
  return c;
}

ModelConfig random_config(Rng& rng) {
  ModelConfig c;
  c.n_heads = 1 + rng.below(4);
  c.d_model = c.n_heads * 2 * (1 + rng.below(6));
  c.n_layers = 1 + rng.below(3);
  c.granularity = 1 + rng.below(2);
  c.n_experts = 1 + rng.below(8);
  c.top_k = 1 + rng.below(c.n_experts * c.granularity);
  c.vocab_size = 5 + rng.below(60);
  c.scale_top_k_with_granularity = false;
  return c;
}

Outcome budget_oracle() {
  Outcome o;
  Rng rng(202);
  for (int i = 0; i < 20; ++i) {
    const ModelConfig c = random_config(rng);
    const auto a = budget::count_params(c);
    const auto b = walk(c);
    o.check(a.total == b.total && a.active == b.active && a.embedding == b.embedding,
            "config " + std::to_string(i) + ": count_params (" + std::to_string(a.total) + ", " +
                std::to_string(a.active) + ") != walk (" + std::to_string(b.total) + ", " + std::to_string(b.active) +
                ")");
  }
  ModelConfig base;
  base.n_layers = 2;
  base.n_heads = 2;
  base.vocab_size = 32;
  std::vector<budget::GridPoint> grid;
  for (std::size_t d : {16u, 32u, 48u, 64u})
    for (std::size_t e : {2u, 4u, 8u, 16u})
      for (std::size_t k : {1u, 2u, 4u})
        for (std::size_t g : {1u, 2u})
          if (k <= e * g) grid.push_back({d, e, k, g});
  std::size_t checked = 0;
  for (std::size_t i = 0; i < grid.size(); i += 7) {
    const auto target = budget::flops_per_token(budget::apply(base, grid[i]));
    const auto plan = budget::plan_isoflop(base, grid, target, 0.01, 1000);
    o.check(!plan.entries.empty(), "empty plan for a target taken from the grid");
    for (const auto& e : plan.entries) {
      const auto w = walk(e.config);
      const double recount = 2.0 * static_cast<double>(w.active - w.embedding);
      const double rel = std::abs(recount - static_cast<double>(target)) / static_cast<double>(target);
      o.check(rel <= 0.01, "plan entry off target by " + num(rel));
      ++checked;
    }
  }
  o.note("20 configs, " + std::to_string(checked) + " plan entries recounted");
  return o;
}

// ---- 6 ---------------------------------------------------------------------

Eigen::MatrixXd random_psd(Rng& rng, int n) {
  Eigen::MatrixXd b(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) b(i, j) = rng.normal();
  return b * b.transpose();
}

double dense_max_eig(const Eigen::MatrixXd& m) {
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m).eigenvalues().maxCoeff();
}

Outcome curvature_identity() {
  Outcome o;
  Rng rng(303);
  double worst_kron = 0.0, worst_power = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    curvature::KroneckerFactorPair p(3, 3);
    p.A = random_psd(rng, 3);
    p.G = random_psd(rng, 3);
    p.samples = 1;
    const Eigen::MatrixXd k = Eigen::kroneckerProduct(p.A, p.G).eval();
    worst_kron = std::max(worst_kron, std::abs(curvature::kfac_layer_max_eig(p, 100000, 1e-15).lambda_max -
                                               dense_max_eig(k)));
  }
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::MatrixXd m = random_psd(rng, 8);
    worst_power = std::max(worst_power, std::abs(curvature::max_eig_power(m, 100000, 1e-14).value - dense_max_eig(m)));
  }
  o.check(worst_kron <= 1e-6, "Kronecker identity off by " + num(worst_kron));
  o.check(worst_power <= 1e-4, "power iteration off by " + num(worst_power));
  o.note("kron dev " + num(worst_kron, 3) + ", power dev " + num(worst_power, 3));
  return o;
}

// ---- 7 ---------------------------------------------------------------------

std::vector<TokenId> mixture_stream(std::size_t tokens, std::uint64_t seed) {
  trainer::CorpusSpec s;
  s.kind = trainer::CorpusKind::mixture;
  s.tokens = tokens;
  s.n_facts = 200;
  s.seed = seed;
  return trainer::make_corpus(s).train;
}

Outcome training_smoke() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  ModelConfig cfg;
  cfg.d_model = 64;
  cfg.n_layers = 2;
  cfg.n_heads = 4;
  cfg.n_experts = 8;
  cfg.top_k = 2;
  cfg.max_seq_len = 64;
  trainer::TrainConfig tc;
  tc.seq_len = 32;
  tc.batch_size = 32;
  tc.schedule = {3e-3, 20, 500, 0.1};
  tc.optim.weight_decay = 0.0;
  auto batch = mixture_stream(20'000, 11);
  batch.resize(tc.seq_len * tc.batch_size + 1);
  trainer::Trainer<float> tr(cfg, tc, batch, batch);
  const double initial = tr.step().loss.ce;
  double last = initial;
  while (!tr.done() && last > 0.1 * initial) last = tr.step().loss.ce;
  o.check(last <= 0.1 * initial, "CE " + num(last) + " after " + std::to_string(tr.step_count()) +
                                     " steps, initial " + num(initial));
  o.note("CE " + num(initial, 4) + " -> " + num(last, 4) + " in " + std::to_string(tr.step_count()) + " steps");

  // Resume: save mid-run, reload, and compare the next step with an
  // uninterrupted twin.
  const auto stream = mixture_stream(60'000, 12);
  trainer::TrainConfig rc = tc;
  rc.batch_size = 8;
  rc.schedule = {3e-3, 5, 40, 0.1};
  rc.optim.weight_decay = 0.1;
  const std::string path = (fs::temp_directory_path() / "moelab_acceptance_resume.ckpt").string();
  trainer::Trainer<float> straight(cfg, rc, stream, stream), first(cfg, rc, stream, stream);
  for (int i = 0; i < 12; ++i) {
    straight.step();
    first.step();
  }
  trainer::save_checkpoint(first.checkpoint(), path);
  trainer::Trainer<float> resumed(trainer::load_checkpoint<float>(path, cfg), rc, stream, stream);
  fs::remove(path);
  const auto ms = straight.step();
  const auto mr = resumed.step();
  o.check(ms.step == mr.step && ms.lr == mr.lr, "resumed step counter or learning rate differs");
  o.check(ms.loss.ce == mr.loss.ce && ms.loss.lb == mr.loss.lb && ms.loss.rz == mr.loss.rz &&
              ms.loss.total == mr.loss.total,
          "resumed step loss differs: " + num(ms.loss.total, 17) + " vs " + num(mr.loss.total, 17));
  bool same = straight.params().size() == resumed.params().size();
  for (std::size_t i = 0; same && i < straight.params().size(); ++i)
    same = straight.params().entries()[i].value == resumed.params().entries()[i].value;
  o.check(same, "parameters after the resumed step are not bit-identical");
  const double t = seconds_since(t0);
  o.check(t < 300.0, "runtime " + num(t) + " s >= 300 s");
  return o;
}

// ---- 8 ---------------------------------------------------------------------

Outcome protocol() {
  Outcome o;
  using namespace evalsuite;
  const testing::UniformLM lm(trainer::ByteTokenizer::kVocabSize);
  const double want = std::log(static_cast<double>(trainer::ByteTokenizer::kVocabSize));
  for (const auto& [prompt, answer] : std::vector<std::pair<std::string, std::string>>{
           {"Question: What is the color of Bakedo?\nAnswer:", " mafi"},
           {"x", " a much longer answer with many tokens"},
           {"Question: 3 + 4 * 2?\nAnswer:", " 3 + 4 = 7. 7 * 2 = 14. #### 14"}}) {
    const double l = answer_token_loss(lm, prompt, answer);
    o.check(l == want, "uniform answer loss " + num(l, 17) + " != ln V " + num(want, 17));
  }

  TaskSpec mc;
  mc.name = "uniform_mc";
  mc.kind = TaskKind::multiple_choice;
  Rng rng(404);
  for (std::size_t i = 0; i < 1000; ++i) {
    EvalItem it{"Pick " + std::to_string(i) + ":", "", {"A", "B", "C", "D"}};
    it.answer = it.choices[rng.below(4)];
    mc.items.push_back(std::move(it));
  }
  const EvalResult r = mc_accuracy(lm, mc, 0);
  const double acc = r.accuracy.value_or(-1.0);
  o.check(acc >= 0.20 && acc <= 0.30, "uniform MC accuracy " + num(acc));

  std::ifstream in(std::string(MOELAB_TEST_DATA_DIR) + "/extract_golden.jsonl");
  o.check(in.good(), "golden extraction file missing");
  std::size_t cases = 0, matched = 0;
  std::set<std::string> patterns;
  std::string line;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    const std::string text = j.at("text").get<std::string>();
    std::optional<std::string> expected;
    if (!j.at("expected").is_null()) expected = j.at("expected").get<std::string>();
    for (const char* p : {"####", "The answer is", "Answer:"})
      if (expected && text.find(p) != std::string::npos) patterns.insert(p);
    const auto got = extract_answer(text);
    ++cases;
    if (got == expected) ++matched;
    else o.check(false, "extract_answer mismatch on: " + text);
  }
  o.check(cases == 30, std::to_string(cases) + " golden cases, want 30");
  o.check(patterns.size() == 3, "golden file exercises " + std::to_string(patterns.size()) + " of 3 patterns");
  o.note("MC acc " + num(acc, 4) + ", golden " + std::to_string(matched) + "/" + std::to_string(cases));
  return o;
}

// ---- 9 ---------------------------------------------------------------------

// Monte-Carlo expectation of majority-vote accuracy, independent of the
// decoder: draw n answers, earliest first occurrence breaks ties.
double sc_oracle(const std::vector<double>& probs, std::size_t n, std::size_t trials) {
  std::mt19937_64 gen(99);
  std::discrete_distribution<int> d(probs.begin(), probs.end());
  std::size_t wins = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    std::vector<int> count(probs.size(), 0), first(probs.size(), -1);
    for (std::size_t i = 0; i < n; ++i) {
      const int a = d(gen);
      if (count[a]++ == 0) first[a] = static_cast<int>(i);
    }
    int best = 0;
    for (int a = 1; a < static_cast<int>(probs.size()); ++a)
      if (count[a] > count[best] || (count[a] == count[best] && first[a] < first[best])) best = a;
    wins += best == 0;
  }
  return static_cast<double>(wins) / static_cast<double>(trials);
}

Outcome self_consistency() {
  Outcome o;
  using namespace evalsuite;
  const std::vector<double> probs{0.4, 0.12, 0.12, 0.12, 0.12, 0.12};
  const auto lm = testing::answer_distribution_lm(probs);
  TaskSpec t;
  t.name = "modal_stub";
  for (std::size_t i = 0; i < 500; ++i) t.items.push_back({"q" + std::to_string(i), std::to_string(i % 6), {}});
  EvalOptions pass1;
  pass1.mode = EvalMode::pass1;
  pass1.pass1.greedy = false;
  EvalOptions sc = pass1;
  sc.mode = EvalMode::self_consistency;
  sc.sc = {128, 1.0, 1.0, 16};
  const double p1 = evaluate(lm, t, pass1).accuracy.value_or(-1.0);
  const double acc = evaluate(lm, t, sc).accuracy.value_or(-1.0);
  const double want_p1 = probs[0];
  const double want_sc = sc_oracle(probs, 128, 100000);
  o.check(std::abs(p1 - want_p1) <= 0.05, "pass@1 " + num(p1) + " vs expected " + num(want_p1));
  o.check(std::abs(acc - want_sc) <= 0.05, "SC " + num(acc) + " vs oracle " + num(want_sc));
  o.check(acc - p1 >= 0.25, "SC gain " + num(acc - p1) + " < 0.25");
  o.note("pass@1 " + num(p1, 4) + " (exp " + num(want_p1, 4) + "), SC@128 " + num(acc, 4) + " (exp " +
         num(want_sc, 4) + ")");
  return o;
}

// ---- 10 --------------------------------------------------------------------

const char* kSweepBase = R"(# Base experiment for the acceptance sweep.
[run]
seed = 7

[model]
d_model = 64
n_layers = 2
n_heads = 4
n_experts = 8
top_k = 2
max_seq_len = 256

[train]
seq_len = 128
batch_size = 16
log_every = 200
eval_every = 2000

[schedule]
peak_lr = 3e-3
warmup_steps = 100
total_steps = 1000

[corpus]
kind = mixture
memory_fraction = 0.75
tokens = 20000000
n_facts = 1350
n_probes = 256
n_arith_items = 256

[eval]
tasks = memory_qa, arith
)";

// Synthetic tokens per run.
constexpr std::uint64_t kSweepTokens = 20'000'000;

int cli(const std::vector<std::string>& args, std::ostream& log) {
  std::vector<const char*> argv{"moelab"};
  for (const auto& a : args) argv.push_back(a.c_str());
  log << "$ moelab";
  for (const auto& a : args) log << " " << a;
  log << "\n";
  return cli::run_command(static_cast<int>(argv.size()), argv.data(), log, log);
}

void write(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  out << s;
}

Outcome pipeline() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const char* env = std::getenv("MOELAB_ACCEPTANCE_DIR");
  const fs::path work = env ? fs::path(env) : fs::temp_directory_path() / "moelab_acceptance_sweep";
  fs::remove_all(work);
  fs::create_directories(work);
  std::ofstream log(work / "pipeline.log");
  write(work / "base.cfg", kSweepBase);
  const cli::ExperimentConfig base = cli::parse_config((work / "base.cfg").string());

  // One iso-FLOP contour per top-k; every run gets the same token budget.
  const std::uint64_t per_run = kSweepTokens;
  std::vector<std::string> configs;
  for (std::size_t k : {1u, 2u}) {
    const std::string grid = (work / ("grid_k" + std::to_string(k) + ".cfg")).string();
    write(grid, "[grid]\nd_model = 64\nn_experts = 4, 8, 16\ntop_k = " + std::to_string(k) + "\n");
    ModelConfig ref = base.model;
    ref.n_experts = 8;
    ref.top_k = k;
    const std::string plan_dir = (work / ("plan_k" + std::to_string(k))).string();
    const int rc = cli({"plan", "--grid", grid, "--config", (work / "base.cfg").string(), "--flops-per-token",
                        std::to_string(budget::flops_per_token(ref)), "--tolerance", "0.02", "--tokens",
                        std::to_string(per_run), "--out", plan_dir},
                       log);
    o.check(rc == 0, "plan for k=" + std::to_string(k) + " exited " + std::to_string(rc));
    std::ifstream sweep(fs::path(plan_dir) / "sweep.jsonl");
    std::string line;
    while (std::getline(sweep, line))
      configs.push_back((fs::path(plan_dir) / nlohmann::json::parse(line).at("config_file").get<std::string>()).string());
  }
  o.check(configs.size() == 6, std::to_string(configs.size()) + " planned runs, want 6");
  if (!o.pass) return o;

  const fs::path runs = work / "runs";
  std::vector<std::string> train{"train"};
  for (const auto& c : configs) train.insert(train.end(), {"--config", c});
  train.insert(train.end(), {"--out", runs.string()});
  int rc = cli(train, log);
  o.check(rc == 0, "train exited " + std::to_string(rc));
  if (!o.pass) return o;

  for (const auto& entry : fs::directory_iterator(runs)) {
    if (!entry.is_directory()) continue;
    rc = cli({"eval", "--checkpoint", (entry.path() / "checkpoint.bin").string(), "--task", "memory_qa", "--task",
              "arith"},
             log);
    o.check(rc == 0, "eval of " + entry.path().filename().string() + " exited " + std::to_string(rc));
  }
  const fs::path out = work / "analysis";
  rc = cli({"analyze", "--runs", runs.string(), "--metric", "task_loss", "--out", out.string()}, log);
  o.check(rc == 0, "analyze exited " + std::to_string(rc));
  if (!o.pass) return o;

  // Density curves with a regime label on every point.
  std::ifstream sin(out / "summary.json");
  const auto summary = nlohmann::json::parse(sin);
  std::size_t density_sets = 0;
  for (const auto& name : summary.at("curves")) {
    const std::string n = name.get<std::string>();
    if (n.find("density") == std::string::npos) continue;
    ++density_sets;
    o.check(fs::exists(out / (n + ".csv")) && fs::exists(out / (n + ".json")), "curve files missing for " + n);
    const auto& regimes = summary.at("regimes").at(n);
    o.check(regimes.size() == 6, n + ": " + std::to_string(regimes.size()) + " regime labels, want 6");
    for (const auto& [run, label] : regimes.items())
      o.check(label == "standard" || label == "inverse", n + ": bad regime label for " + run);
  }
  o.check(density_sets >= 2, std::to_string(density_sets) + " density curve sets, want one per task");

  // Memory recall: task loss nonincreasing in E at fixed k, one violation allowed.
  const auto finals = analysis::final_records(analysis::load_runs(runs.string()));
  std::map<std::size_t, std::map<std::size_t, double>> mem, arith;
  for (const auto& r : finals) {
    const auto c = trainer::model_config_of(r.run);
    if (auto v = analysis::metric_of(r, "memory_qa", analysis::Metric::task_loss)) mem[c.top_k][c.n_experts] = *v;
    if (auto v = analysis::metric_of(r, "arith", analysis::Metric::task_loss)) arith[c.top_k][c.n_experts] = *v;
  }
  std::size_t violations = 0, pairs = 0;
  std::string mem_note, arith_note;
  for (const auto& [k, by_e] : mem) {
    mem_note += " k" + std::to_string(k) + ":";
    double prev = 0;
    bool have = false;
    for (const auto& [e, v] : by_e) {
      mem_note += " E" + std::to_string(e) + "=" + num(v, 4);
      if (have) {
        ++pairs;
        violations += v > prev;
      }
      prev = v;
      have = true;
    }
  }
  o.check(pairs == 4, std::to_string(pairs) + " adjacent memory_qa pairs, want 4");
  o.check(violations <= 1, std::to_string(violations) + " increases of memory_qa loss with E:" + mem_note);
  // Reasoning side is reported only.
  for (const auto& [k, by_e] : arith) {
    std::vector<double> v;
    for (const auto& [e, x] : by_e) v.push_back(x);
    const bool u = v.size() == 3 && v[1] < v[0] && v[1] < v[2];
    arith_note += " k" + std::to_string(k) + (u ? " U" : " no-U");
  }
  const double t = seconds_since(t0);
  o.check(t < 7200.0, "runtime " + num(t) + " s >= 7200 s");
  o.note("memory_qa" + mem_note + "; " + std::to_string(violations) + " violation(s); arith U-shape:" + arith_note +
         "; artifacts in " + work.string());
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, routing},           {2, formulas},          {3, gradient},       {4, aux_losses}, {5, budget_oracle},
      {6, curvature_identity}, {7, training_smoke}, {8, protocol},        {9, self_consistency}, {10, pipeline}};
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& [id, run] : criteria) {
    if (!only.empty() && !only.contains(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const double t = seconds_since(t0);
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << " [" << num(t, 3) << " s]";
    for (const auto& n : o.notes) std::cout << " " << n;
    for (const auto& f : o.failures) std::cout << " | " << f;
    std::cout << std::endl;
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
