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
#include <cstdint>
#include <tuple>
#include <vector>

#include "moelab/budget/budget.hpp"

namespace moelab::budget {

struct GridPoint {
  std::size_t d_model = 0;
  std::size_t n_experts = 0;
  std::size_t top_k = 0;
  std::size_t granularity = 1;

  friend bool operator==(const GridPoint&, const GridPoint&) = default;
};

struct SweepEntry {
  ModelConfig config;
  std::uint64_t tokens = 0;
  std::uint64_t flops_per_token = 0;  // forward

  double train_flops() const { return 3.0 * static_cast<double>(flops_per_token) * static_cast<double>(tokens); }
};

struct SweepPlan {
  std::vector<SweepEntry> entries;
  std::uint64_t target_flops_per_token = 0;
  double tolerance = 0.0;
};

// Applies a grid point on top of the non-swept fields of `base`.
inline ModelConfig apply(const ModelConfig& base, const GridPoint& p) {
  ModelConfig c = base;
  c.d_model = p.d_model;
  c.n_experts = p.n_experts;
  c.top_k = p.top_k;
  c.granularity = p.granularity;
  return c;
}

namespace detail {
// Ascending sparsity, then the grid coordinates, so output order never
// depends on input order.
inline bool plan_order(const SweepEntry& a, const SweepEntry& b) {
  const auto key = [](const SweepEntry& e) {
    const ModelConfig& c = e.config;
    return std::make_tuple(c.d_model, c.n_experts, c.top_k, c.granularity);
  };
  // k'/E_eff compared by cross-multiplication, no rounding.
  const auto& ca = a.config;
  const auto& cb = b.config;
  const auto lhs = static_cast<unsigned __int128>(cb.effective_top_k()) * ca.effective_experts();
  const auto rhs = static_cast<unsigned __int128>(ca.effective_top_k()) * cb.effective_experts();
  if (lhs != rhs) return lhs < rhs;  // density(a) > density(b)
  return key(a) < key(b);
}
}  // namespace detail

// Keeps the grid configs whose forward FLOPs per token lie within
// +-tolerance (relative) of the target. Every entry gets the same token
// budget, so FLOPs-per-token x tokens is held fixed across the plan.
inline SweepPlan plan_isoflop(const ModelConfig& base, std::vector<GridPoint> grid, std::uint64_t target_flops_per_token,
                              double tolerance, std::uint64_t tokens) {
  require(tolerance >= 0.0, Errc::contract, "tolerance must be non-negative");
  SweepPlan plan;
  plan.target_flops_per_token = target_flops_per_token;
  plan.tolerance = tolerance;
  const double target = static_cast<double>(target_flops_per_token);
  for (const GridPoint& p : grid) {
    const ModelConfig c = apply(base, p);
    const std::uint64_t f = flops_per_token(c);
    if (std::abs(static_cast<double>(f) - target) <= tolerance * target) plan.entries.push_back({c, tokens, f});
  }
  std::sort(plan.entries.begin(), plan.entries.end(), detail::plan_order);
  plan.entries.erase(std::unique(plan.entries.begin(), plan.entries.end(),
                                 [](const SweepEntry& a, const SweepEntry& b) { return a.config == b.config; }),
                     plan.entries.end());
  return plan;
}

// Every grid config gets the token count that spends `train_flops` of
// training compute (3 x forward), rounded to the nearest token.
inline SweepPlan plan_fixed_compute(const ModelConfig& base, std::vector<GridPoint> grid, double train_flops) {
  require(train_flops > 0.0, Errc::contract, "training FLOP budget must be positive");
  SweepPlan plan;
  plan.tolerance = 0.0;
  for (const GridPoint& p : grid) {
    const ModelConfig c = apply(base, p);
    const std::uint64_t f = flops_per_token(c);
    const auto tokens = static_cast<std::uint64_t>(std::llround(train_flops / (3.0 * static_cast<double>(f))));
    plan.entries.push_back({c, tokens, f});
  }
  std::sort(plan.entries.begin(), plan.entries.end(), detail::plan_order);
  plan.entries.erase(std::unique(plan.entries.begin(), plan.entries.end(),
                                 [](const SweepEntry& a, const SweepEntry& b) { return a.config == b.config; }),
                     plan.entries.end());
  return plan;
}

}  // namespace moelab::budget
