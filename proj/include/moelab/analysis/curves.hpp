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
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "moelab/analysis/runs.hpp"
#include "moelab/budget/budget.hpp"

namespace moelab::analysis {

enum class Regime { standard, inverse };

inline std::string to_string(Regime r) { return r == Regime::standard ? "standard" : "inverse"; }

inline Regime regime_from_string(const std::string& s) {
  if (s == "standard") return Regime::standard;
  if (s == "inverse") return Regime::inverse;
  fail(Errc::validation, "unknown regime '" + s + "'");
}

struct CurvePoint {
  double x = 0.0;
  double y = 0.0;
  std::string run_id;
  Regime regime = Regime::standard;
  friend bool operator==(const CurvePoint&, const CurvePoint&) = default;
};

struct Series {
  std::string group;
  std::vector<CurvePoint> points;  // strictly increasing x
  friend bool operator==(const Series&, const Series&) = default;
};

struct CurveSet {
  std::string name;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;

  void validate() const {
    for (const auto& s : series)
      for (std::size_t i = 1; i < s.points.size(); ++i)
        require(s.points[i - 1].x < s.points[i].x, Errc::validation,
                "series " + s.group + " of " + name + " has non-increasing x at point " + std::to_string(i));
  }
  friend bool operator==(const CurveSet&, const CurveSet&) = default;
};

enum class Metric { task_loss, accuracy, train_ce, val_ce };

inline std::string to_string(Metric m) {
  switch (m) {
    case Metric::task_loss: return "task_loss";
    case Metric::accuracy: return "accuracy";
    case Metric::train_ce: return "train_ce";
    case Metric::val_ce: return "val_ce";
  }
  return "?";
}

inline Metric metric_from_string(const std::string& s) {
  for (Metric m : {Metric::task_loss, Metric::accuracy, Metric::train_ce, Metric::val_ce})
    if (to_string(m) == s) return m;
  fail(Errc::config, "unknown metric '" + s + "' (task_loss | accuracy | train_ce | val_ce)");
}

inline bool higher_is_better(Metric m) { return m == Metric::accuracy; }

inline std::optional<double> metric_of(const AnalysisRecord& r, const std::string& task, Metric m) {
  switch (m) {
    case Metric::train_ce: return r.run.train_ce;
    case Metric::val_ce: return r.run.val_ce;
    case Metric::task_loss:
    case Metric::accuracy: {
      auto it = r.tasks.find(task);
      if (it == r.tasks.end()) return std::nullopt;
      return m == Metric::task_loss ? it->second.loss : it->second.accuracy;
    }
  }
  return std::nullopt;
}

struct LossPoint {
  double train_loss = 0.0;
  double metric = 0.0;
  std::string run_id;
};

struct RegimeSplit {
  LossPoint minimizer;
  std::vector<LossPoint> standard;  // includes the minimizer
  std::vector<LossPoint> inverse;   // train loss strictly below the minimizer's
};

/// Point-based U-shape split. Points are ordered by train loss descending
/// (growing scale); the minimizer is the best metric value, taking the
/// higher train loss on ties. Accuracy-like metrics are scored as error
/// rate 1 - y.
inline RegimeSplit detect_inverse_scaling(std::vector<LossPoint> pts, bool metric_higher_is_better = false) {
  require(pts.size() >= 3, Errc::insufficient_data,
          "inverse-scaling detection needs at least 3 points, got " + std::to_string(pts.size()));
  std::sort(pts.begin(), pts.end(), [](const LossPoint& a, const LossPoint& b) {
    if (a.train_loss != b.train_loss) return a.train_loss > b.train_loss;
    return std::tie(a.metric, a.run_id) < std::tie(b.metric, b.run_id);
  });
  auto cost = [&](const LossPoint& p) { return metric_higher_is_better ? 1.0 - p.metric : p.metric; };
  std::size_t best = 0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    if (cost(pts[i]) < cost(pts[best])) best = i;
  RegimeSplit s;
  s.minimizer = pts[best];
  for (const auto& p : pts) (p.train_loss < s.minimizer.train_loss ? s.inverse : s.standard).push_back(p);
  return s;
}

inline std::vector<LossPoint> loss_points(const std::vector<AnalysisRecord>& recs, const std::string& task,
                                          Metric m) {
  std::vector<LossPoint> out;
  for (const auto& r : recs)
    if (auto y = metric_of(r, task, m)) out.push_back({r.run.train_ce, *y, r.run.run_id});
  return out;
}

// Regime of every run in `recs`; all standard when there are fewer than 3.
inline std::map<std::string, Regime> regimes_of(const std::vector<AnalysisRecord>& recs, const std::string& task,
                                                Metric m) {
  std::map<std::string, Regime> out;
  const auto pts = loss_points(recs, task, m);
  for (const auto& p : pts) out[p.run_id] = Regime::standard;
  if (pts.size() < 3) return out;
  for (const auto& p : detect_inverse_scaling(pts, higher_is_better(m)).inverse) out[p.run_id] = Regime::inverse;
  return out;
}

/// Clusters records whose active parameter counts agree within a relative
/// tolerance. Iso-FLOP sweeps differ only by router width, so exact equality
/// would split them.
inline std::vector<std::vector<AnalysisRecord>> group_by_active(std::vector<AnalysisRecord> recs,
                                                                double rel_tol = 0.02) {
  std::sort(recs.begin(), recs.end(), [](const AnalysisRecord& a, const AnalysisRecord& b) {
    return std::tie(a.run.active_params, a.run.run_id) < std::tie(b.run.active_params, b.run.run_id);
  });
  std::vector<std::vector<AnalysisRecord>> groups;
  double anchor = 0.0;
  for (auto& r : recs) {
    const double a = static_cast<double>(r.run.active_params);
    if (groups.empty() || a > anchor * (1.0 + rel_tol)) {
      groups.emplace_back();
      anchor = a;
    }
    groups.back().push_back(std::move(r));
  }
  return groups;
}

inline double density_of(const AnalysisRecord& r) { return budget::density_of(trainer::model_config_of(r.run)); }

inline double tpp_of(const AnalysisRecord& r) {
  return budget::tpp(static_cast<double>(r.run.tokens_seen), static_cast<double>(r.run.total_params));
}

inline std::string active_group_label(const std::vector<AnalysisRecord>& g) {
  return "active=" + std::to_string(g.front().run.active_params);
}

struct DensityResult {
  std::string group;
  double optimal_density = 0.0;
  CurvePoint optimum;
  Series curve;  // x = density
};

struct DensityAnalysis {
  std::vector<DensityResult> results;
  std::vector<std::string> notices;  // skipped groups
};

/// Per active-parameter group: metric against density with regime flags,
/// and the density at the best metric value (first in density order on ties).
inline DensityAnalysis optimal_density(const std::vector<AnalysisRecord>& recs, const std::string& task, Metric m,
                                       double rel_tol = 0.02) {
  DensityAnalysis out;
  for (const auto& g : group_by_active(recs, rel_tol)) {
    const std::string label = active_group_label(g);
    std::vector<AnalysisRecord> usable;
    for (const auto& r : g)
      if (metric_of(r, task, m)) usable.push_back(r);
    std::set<double> densities;
    for (const auto& r : usable) densities.insert(density_of(r));
    if (densities.size() < 2) {
      out.notices.push_back("group " + label + " has fewer than 2 densities with " + to_string(m) + " for " + task +
                            "; skipped");
      continue;
    }
    const auto regime = regimes_of(usable, task, m);
    DensityResult res;
    res.group = label;
    res.curve.group = label;
    for (const auto& r : usable)
      res.curve.points.push_back({density_of(r), *metric_of(r, task, m), r.run.run_id, regime.at(r.run.run_id)});
    std::sort(res.curve.points.begin(), res.curve.points.end(),
              [](const CurvePoint& a, const CurvePoint& b) { return std::tie(a.x, a.run_id) < std::tie(b.x, b.run_id); });
    const bool hib = higher_is_better(m);
    std::size_t best = 0;
    for (std::size_t i = 1; i < res.curve.points.size(); ++i) {
      const double yi = res.curve.points[i].y, yb = res.curve.points[best].y;
      if (hib ? yi > yb : yi < yb) best = i;
    }
    res.optimum = res.curve.points[best];
    res.optimal_density = res.optimum.x;
    out.results.push_back(std::move(res));
  }
  return out;
}

inline CurveSet density_curves(const DensityAnalysis& d, const std::string& task, Metric m) {
  CurveSet cs{"density_" + task + "_" + to_string(m), "density", to_string(m), {}};
  for (const auto& r : d.results) cs.series.push_back(r.curve);
  return cs;
}

/// x = tokens / total params, one series per top-k.
inline CurveSet tpp_curve(const std::vector<AnalysisRecord>& recs, const std::string& task, Metric m) {
  CurveSet cs{"tpp_" + task + "_" + to_string(m), "tokens_per_param", to_string(m), {}};
  if (recs.empty()) return cs;
  for (const auto& r : recs)
    require(r.run.tokens_seen == recs.front().run.tokens_seen, Errc::contract,
            "tpp_curve needs records with one shared token budget");
  std::map<std::size_t, std::vector<AnalysisRecord>> by_k;
  for (const auto& r : recs)
    if (metric_of(r, task, m)) by_k[trainer::model_config_of(r.run).effective_top_k()].push_back(r);
  for (const auto& [k, group] : by_k) {
    const auto regime = regimes_of(group, task, m);
    Series s{"k=" + std::to_string(k), {}};
    for (const auto& r : group) s.points.push_back({tpp_of(r), *metric_of(r, task, m), r.run.run_id, regime.at(r.run.run_id)});
    std::sort(s.points.begin(), s.points.end(),
              [](const CurvePoint& a, const CurvePoint& b) { return std::tie(a.x, a.run_id) < std::tie(b.x, b.run_id); });
    cs.series.push_back(std::move(s));
  }
  return cs;
}

/// Final train loss against a task metric, one series per top-k, with the
/// inverse-scaling regime marked.
inline CurveSet loss_task_curve(const std::vector<AnalysisRecord>& recs, const std::string& task, Metric m) {
  CurveSet cs{"loss_vs_" + task + "_" + to_string(m), "train_ce", to_string(m), {}};
  std::map<std::size_t, std::vector<AnalysisRecord>> by_k;
  for (const auto& r : recs)
    if (metric_of(r, task, m)) by_k[trainer::model_config_of(r.run).effective_top_k()].push_back(r);
  for (const auto& [k, group] : by_k) {
    const auto regime = regimes_of(group, task, m);
    Series s{"k=" + std::to_string(k), {}};
    for (const auto& r : group)
      s.points.push_back({r.run.train_ce, *metric_of(r, task, m), r.run.run_id, regime.at(r.run.run_id)});
    std::sort(s.points.begin(), s.points.end(),
              [](const CurvePoint& a, const CurvePoint& b) { return std::tie(a.x, a.run_id) < std::tie(b.x, b.run_id); });
    cs.series.push_back(std::move(s));
  }
  return cs;
}

}  // namespace moelab::analysis
