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
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "moelab/model/loss.hpp"
#include "moelab/trainer/checkpoint.hpp"
#include "moelab/trainer/optim.hpp"
#include "moelab/trainer/run_record.hpp"
#include "moelab/trainer/tokenizer.hpp"

namespace moelab::trainer {

struct TrainConfig {
  std::size_t seq_len = 128;
  std::size_t batch_size = 16;   // sequences per optimizer step
  std::size_t micro_batches = 1;  // batch_size is split evenly across these
  Schedule schedule;
  AdamWConfig optim;
  double alpha = model::kDefaultLbCoef;
  double beta = model::kDefaultRzCoef;
  double grad_clip = 0.0;  // global-norm clip, 0 disables
  std::uint64_t seed = 0;
  std::uint64_t log_every = 10;
  std::uint64_t eval_every = 100;
  std::size_t val_sequences = 16;
  std::string run_id = "run";

  std::uint64_t tokens_per_step() const { return static_cast<std::uint64_t>(seq_len) * batch_size; }

  void validate() const {
    require(seq_len >= 1, Errc::config, "seq_len must be positive");
    require(batch_size >= 1 && micro_batches >= 1 && batch_size % micro_batches == 0, Errc::config,
            "batch_size must be a positive multiple of micro_batches");
    require(alpha >= 0.0 && beta >= 0.0, Errc::config, "auxiliary loss coefficients must be non-negative");
    require(grad_clip >= 0.0, Errc::config, "grad_clip must be non-negative");
    schedule.validate();
  }
};

struct StepMetrics {
  std::uint64_t step = 0;  // index of the update just applied, starting at 1
  double lr = 0.0;
  model::LossBreakdown loss;
  std::vector<std::vector<double>> expert_load;  // [layer][expert], sums to k' per layer
};

/// Single-writer training loop over a packed token stream.
///
/// Each sequence is a window of seq_len + 1 tokens; the cursor advances by
/// seq_len per sequence and wraps at the end of the stream. Update t uses
/// lr_at(t).
template <class T>
class Trainer {
 public:
  Trainer(const model::ModelConfig& cfg, const TrainConfig& tc, const std::vector<TokenId>& train,
          const std::vector<TokenId>& validation)
      : cfg_(cfg), tc_(tc), train_(&train), validation_(&validation) {
    cfg_.validate();
    tc_.validate();
    require(tc_.seq_len <= cfg_.max_seq_len, Errc::config, "seq_len exceeds max_seq_len");
    require(train.size() > tc_.seq_len, Errc::insufficient_data, "training stream shorter than one sequence");
    params_ = model::init_parameters<T>(cfg_, derive_seed(tc_.seed, "model"));
    optim_ = OptimState<T>::zeros_like(params_, tc_.optim);
  }

  Trainer(const Checkpoint<T>& ck, const TrainConfig& tc, const std::vector<TokenId>& train,
          const std::vector<TokenId>& validation)
      : cfg_(ck.config), tc_(tc), train_(&train), validation_(&validation) {
    tc_.schedule = ck.schedule;
    tc_.optim = ck.optim.cfg;
    tc_.validate();
    check_layout(ck, cfg_);
    require(train.size() > tc_.seq_len, Errc::insufficient_data, "training stream shorter than one sequence");
    params_ = ck.params;
    optim_ = ck.optim;
    step_ = ck.step;
    cursor_ = ck.cursor;
  }

  const model::ModelConfig& config() const { return cfg_; }
  const TrainConfig& train_config() const { return tc_; }
  const ParameterStore<T>& params() const { return params_; }
  std::uint64_t step_count() const { return step_; }
  std::uint64_t cursor() const { return cursor_; }
  std::uint64_t tokens_seen() const { return step_ * tc_.tokens_per_step(); }
  bool done() const { return step_ >= tc_.schedule.total_steps; }

  Checkpoint<T> checkpoint() const {
    Checkpoint<T> ck;
    ck.config = cfg_;
    ck.params = params_;
    ck.optim = optim_;
    ck.step = step_;
    ck.cursor = cursor_;
    ck.schedule = tc_.schedule;
    ck.meta = {{"run_id", tc_.run_id}, {"seed", tc_.seed}};
    return ck;
  }

  // Fills `inputs`/`targets` with `n` consecutive windows starting at `cursor`
  // and returns the advanced cursor.
  static std::uint64_t take_windows(const std::vector<TokenId>& stream, std::uint64_t cursor, std::size_t n,
                                    std::size_t seq_len, std::vector<TokenId>& inputs, std::vector<TokenId>& targets) {
    const std::uint64_t len = stream.size();
    for (std::size_t s = 0; s < n; ++s) {
      if (cursor + seq_len + 1 > len) cursor = 0;
      inputs.insert(inputs.end(), stream.begin() + static_cast<std::ptrdiff_t>(cursor),
                    stream.begin() + static_cast<std::ptrdiff_t>(cursor + seq_len));
      targets.insert(targets.end(), stream.begin() + static_cast<std::ptrdiff_t>(cursor + 1),
                     stream.begin() + static_cast<std::ptrdiff_t>(cursor + seq_len + 1));
      cursor += seq_len;
    }
    return cursor;
  }

  /// Gradients of the combined loss over the next batch at the current
  /// parameters. Micro-batch gradients are averaged. Nothing is updated;
  /// the cursor the batch ends at is returned through `next_cursor`.
  std::vector<Tensor<T>> gradients(StepMetrics& m, std::uint64_t* next_cursor = nullptr) const {
    const std::size_t per_micro = tc_.batch_size / tc_.micro_batches;
    const T inv_m = T{1} / static_cast<T>(tc_.micro_batches);
    std::vector<Tensor<T>> grads;
    m.loss.alpha = tc_.alpha;
    m.loss.beta = tc_.beta;

    std::uint64_t cursor = cursor_;
    for (std::size_t mb = 0; mb < tc_.micro_batches; ++mb) {
      std::vector<TokenId> inputs, targets;
      cursor = take_windows(*train_, cursor, per_micro, tc_.seq_len, inputs, targets);
      const std::unique_ptr<bool[]> mask(new bool[targets.size()]);
      std::fill_n(mask.get(), targets.size(), true);

      numerics::Tape<T> tape;
      auto fwd = model::transformer_forward(tape, cfg_, params_, inputs, tc_.seq_len);
      auto loss = model::combined_loss(tape, fwd, targets, std::span<const bool>(mask.get(), targets.size()),
                                       tc_.alpha, tc_.beta);
      if (!std::isfinite(loss.breakdown.total))
        fail(Errc::non_finite, "non-finite loss at step " + std::to_string(step_ + 1) +
                                   " (ce=" + std::to_string(loss.breakdown.ce) + ")");
      tape.backward(tc_.micro_batches == 1 ? loss.total : numerics::scale(tape, loss.total, inv_m));

      if (grads.empty()) {
        for (std::size_t i = 0; i < fwd.params.size(); ++i) {
          const Tensor<T>* g = tape.grad(fwd.params[i]);
          grads.push_back(g ? *g : Tensor<T>(params_.entries()[i].value.shape()));
        }
      } else {
        for (std::size_t i = 0; i < fwd.params.size(); ++i)
          if (const Tensor<T>* g = tape.grad(fwd.params[i]))
            for (std::size_t j = 0; j < g->size(); ++j) grads[i][j] += (*g)[j];
      }
      const double w = 1.0 / static_cast<double>(tc_.micro_batches);
      m.loss.ce += w * loss.breakdown.ce;
      m.loss.lb += w * loss.breakdown.lb;
      m.loss.rz += w * loss.breakdown.rz;
      if (m.expert_load.empty()) m.expert_load.resize(fwd.layers.size());
      for (std::size_t l = 0; l < fwd.layers.size(); ++l) {
        const auto& f = fwd.layers[l].stats.f;
        m.expert_load[l].resize(f.size(), 0.0);
        for (std::size_t e = 0; e < f.size(); ++e) m.expert_load[l][e] += w * f[e];
      }
    }
    m.loss.total = model::LossBreakdown::combine(m.loss.ce, m.loss.lb, m.loss.rz, tc_.alpha, tc_.beta);
    if (next_cursor) *next_cursor = cursor;
    return grads;
  }

  StepMetrics step() {
    require(!done(), Errc::contract, "training already reached total_steps");
    StepMetrics m;
    std::uint64_t cursor = cursor_;
    std::vector<Tensor<T>> grads = gradients(m, &cursor);

    if (tc_.grad_clip > 0.0) {
      double sq = 0.0;
      for (const auto& g : grads)
        for (T v : g.data()) sq += static_cast<double>(v) * static_cast<double>(v);
      const double norm = std::sqrt(sq);
      if (norm > tc_.grad_clip) {
        const T s = static_cast<T>(tc_.grad_clip / norm);
        for (auto& g : grads)
          for (T& v : g.data()) v *= s;
      }
    }

    m.step = step_ + 1;
    m.lr = tc_.schedule.lr_at(m.step);
    std::vector<const Tensor<T>*> gp;
    for (const auto& g : grads) gp.push_back(&g);
    adamw_step(params_, gp, optim_, m.lr);
    step_ = m.step;
    cursor_ = cursor;
    return m;
  }

  // Mean next-token CE over the first `val_sequences` validation windows.
  // Auxiliary losses are excluded.
  double validation_ce() const {
    if (validation_->size() <= tc_.seq_len) return std::nan("");
    std::vector<TokenId> inputs, targets;
    take_windows(*validation_, 0, tc_.val_sequences, tc_.seq_len, inputs, targets);
    numerics::Tape<T> tape;
    model::ForwardOptions opt;
    opt.params_require_grad = false;
    auto fwd = model::transformer_forward(tape, cfg_, params_, inputs, tc_.seq_len, opt);
    return static_cast<double>(tape.value(numerics::cross_entropy(tape, fwd.logits, targets)).item());
  }

  RunRecord record(const StepMetrics& m, std::optional<double> val) const {
    RunRecord r;
    r.run_id = tc_.run_id;
    r.set_model(cfg_);
    r.step = m.step;
    r.tokens_seen = m.step * tc_.tokens_per_step();
    r.lr = m.lr;
    r.train_ce = m.loss.ce;
    r.val_ce = val;
    r.lb_loss = m.loss.lb;
    r.rz_loss = m.loss.rz;
    r.extras["expert_load"] = m.expert_load;
    r.extras["total_loss"] = m.loss.total;
    return r;
  }

  /// Runs to total_steps, emitting a record every log_every steps and on the
  /// last one. Validation CE is attached every eval_every steps and at the end.
  /// A non-finite loss emits a diagnostic record and rethrows.
  void run(const std::function<void(const RunRecord&)>& sink,
           const std::function<void(const Trainer&)>& on_step = {}) {
    while (!done()) {
      StepMetrics m;
      try {
        m = step();
      } catch (const Error& e) {
        if (e.code() == Errc::non_finite && sink) {
          RunRecord r;
          r.run_id = tc_.run_id;
          r.set_model(cfg_);
          r.step = step_ + 1;
          r.tokens_seen = step_ * tc_.tokens_per_step();
          r.train_ce = std::nan("");
          r.extras["status"] = "non_finite";
          r.extras["message"] = e.what();
          sink(r);
        }
        throw;
      }
      const bool last = done();
      const bool log = last || (tc_.log_every && m.step % tc_.log_every == 0);
      const bool eval = last || (tc_.eval_every && m.step % tc_.eval_every == 0);
      if (sink && (log || eval)) sink(record(m, eval ? std::optional<double>(validation_ce()) : std::nullopt));
      if (on_step) on_step(*this);
    }
  }

 private:
  model::ModelConfig cfg_;
  TrainConfig tc_;
  const std::vector<TokenId>* train_;
  const std::vector<TokenId>* validation_;
  ParameterStore<T> params_;
  OptimState<T> optim_;
  std::uint64_t step_ = 0;
  std::uint64_t cursor_ = 0;
};

}  // namespace moelab::trainer
