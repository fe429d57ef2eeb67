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
#include <numbers>
#include <vector>

#include "moelab/model/params.hpp"

namespace moelab::trainer {

using model::ParameterStore;
using numerics::Tensor;

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
};

template <class T>
struct OptimState {
  AdamWConfig cfg;
  std::uint64_t step = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;

  static OptimState zeros_like(const ParameterStore<T>& params, AdamWConfig cfg) {
    OptimState s;
    s.cfg = cfg;
    for (const auto& e : params.entries()) {
      s.m.emplace_back(e.value.shape());
      s.v.emplace_back(e.value.shape());
    }
    return s;
  }
};

// Matrices are decayed; RMSNorm gains are not.
template <class T>
bool decays(const Tensor<T>& p) {
  return p.rank() == 2;
}

/// One AdamW update with bias-corrected moments. Decoupled decay multiplies
/// the parameter by (1 - lr * lambda) before the moment update.
template <class T>
void adamw_step(ParameterStore<T>& params, const std::vector<const Tensor<T>*>& grads, OptimState<T>& state,
                double lr) {
  auto& entries = params.entries();
  require(grads.size() == entries.size() && state.m.size() == entries.size(), Errc::dimension,
          "adamw_step: parameter, gradient and state counts differ");
  ++state.step;
  const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor<T>& p = entries[i].value;
    Tensor<T>& m = state.m[i];
    Tensor<T>& v = state.v[i];
    require(m.shape() == p.shape(), Errc::dimension, "optimizer state shape mismatch for " + entries[i].name);
    const double decay = decays(p) ? 1.0 - lr * state.cfg.weight_decay : 1.0;
    if (decay != 1.0)
      for (T& x : p.data()) x = static_cast<T>(static_cast<double>(x) * decay);
    const Tensor<T>* g = grads[i];
    if (!g) {
      // Missing gradient counts as zero.
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = static_cast<T>(b1 * m[j]);
        v[j] = static_cast<T>(b2 * v[j]);
        const double mh = m[j] / c1, vh = v[j] / c2;
        p[j] = static_cast<T>(p[j] - lr * mh / (std::sqrt(vh) + state.cfg.eps));
      }
      continue;
    }
    require(g->shape() == p.shape(), Errc::dimension, "gradient shape mismatch for " + entries[i].name);
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = (*g)[j];
      m[j] = static_cast<T>(b1 * m[j] + (1.0 - b1) * gj);
      v[j] = static_cast<T>(b2 * v[j] + (1.0 - b2) * gj * gj);
      const double mh = m[j] / c1, vh = v[j] / c2;
      p[j] = static_cast<T>(p[j] - lr * mh / (std::sqrt(vh) + state.cfg.eps));
    }
  }
}

/// Linear warmup to `peak`, then cosine to floor * peak at `total_steps`.
struct Schedule {
  double peak = 4e-4;
  std::uint64_t warmup_steps = 2000;
  std::uint64_t total_steps = 100000;
  double floor = 0.1;

  void validate() const {
    require(peak > 0.0, Errc::config, "schedule peak must be positive");
    require(total_steps > 0 && warmup_steps <= total_steps, Errc::config, "schedule needs warmup_steps <= total_steps");
    require(floor >= 0.0 && floor <= 1.0, Errc::config, "schedule floor must be in [0, 1]");
  }

  // Steps past total clamp to the floor.
  double lr_at(std::uint64_t step) const {
    if (step >= total_steps) return floor * peak;
    if (step < warmup_steps) return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
    const double span = static_cast<double>(total_steps - warmup_steps);
    const double progress = span == 0.0 ? 1.0 : static_cast<double>(step - warmup_steps) / span;
    const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    return peak * (floor + (1.0 - floor) * cosine);
  }
};

}  // namespace moelab::trainer
