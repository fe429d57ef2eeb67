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

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "moelab/analysis/curves.hpp"

namespace moelab::analysis {

inline constexpr int kCurveSchemaVersion = 1;
inline constexpr const char* kCsvHeader = "group,x,y,run_id,regime";

namespace detail {

// Shortest text that parses back to the same double.
inline std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  require(ec == std::errc{}, Errc::contract, "cannot format number");
  return {buf, end};
}

inline void check_field(const std::string& s, const std::string& what) {
  require(s.find_first_of(",\"\n\r") == std::string::npos, Errc::validation,
          what + " '" + s + "' contains a CSV delimiter");
}

inline std::ofstream open_out(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  std::error_code ec;
  if (!parent.empty()) std::filesystem::create_directories(parent, ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), Errc::io, "cannot write " + path);
  return out;
}

}  // namespace detail

inline std::string to_csv(const CurveSet& cs) {
  cs.validate();
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& s : cs.series) {
    detail::check_field(s.group, "group");
    for (const auto& p : s.points) {
      detail::check_field(p.run_id, "run_id");
      out += s.group + "," + detail::fmt_double(p.x) + "," + detail::fmt_double(p.y) + "," + p.run_id + "," +
             to_string(p.regime) + "\n";
    }
  }
  return out;
}

/// Parses rows back into series, in first-appearance order of groups.
inline CurveSet curves_from_csv(const std::string& text, const std::string& name = {}) {
  std::istringstream in(text);
  std::string line;
  require(std::getline(in, line) && line == kCsvHeader, Errc::validation, "missing CSV header '" + std::string(kCsvHeader) + "'");
  CurveSet cs;
  cs.name = name;
  std::map<std::string, std::size_t> index;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = line.find(',', start);
      f.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    require(f.size() == 5, Errc::validation, "CSV line " + std::to_string(lineno) + ": expected 5 fields");
    auto num = [&](const std::string& s) {
      double v = 0;
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      require(ec == std::errc{} && ptr == s.data() + s.size(), Errc::validation,
              "CSV line " + std::to_string(lineno) + ": bad number '" + s + "'");
      return v;
    };
    auto [it, fresh] = index.try_emplace(f[0], cs.series.size());
    if (fresh) cs.series.push_back({f[0], {}});
    cs.series[it->second].points.push_back({num(f[1]), num(f[2]), f[3], regime_from_string(f[4])});
  }
  cs.validate();
  return cs;
}

/// Plot-ready form: series with labels, and per point the run's config with
/// its density, sparsity and tokens-per-parameter when the run is known.
inline nlohmann::json to_plot_json(const CurveSet& cs, const std::vector<AnalysisRecord>& recs = {}) {
  cs.validate();
  std::map<std::string, const AnalysisRecord*> by_run;
  for (const auto& r : recs) by_run[r.run.run_id] = &r;
  nlohmann::json series = nlohmann::json::array();
  for (const auto& s : cs.series) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : s.points) {
      nlohmann::json jp{{"x", p.x}, {"y", p.y}, {"run_id", p.run_id}, {"regime", to_string(p.regime)}};
      if (auto it = by_run.find(p.run_id); it != by_run.end()) {
        const auto& r = it->second->run;
        jp["config"] = {{"d", r.d}, {"L", r.L}, {"E", r.E}, {"k", r.k}, {"g", r.g}};
        jp["density"] = density_of(*it->second);
        jp["sparsity"] = r.sparsity;
        jp["tpp"] = tpp_of(*it->second);
        jp["tokens_seen"] = r.tokens_seen;
        jp["total_params"] = r.total_params;
        jp["active_params"] = r.active_params;
      }
      pts.push_back(std::move(jp));
    }
    series.push_back({{"group", s.group}, {"points", std::move(pts)}});
  }
  return {{"schema_version", kCurveSchemaVersion},
          {"name", cs.name},
          {"x_label", cs.x_label},
          {"y_label", cs.y_label},
          {"series", std::move(series)}};
}

/// Writes <dir>/<name>.csv and <dir>/<name>.json.
inline void export_curves(const CurveSet& cs, const std::string& dir, const std::vector<AnalysisRecord>& recs = {}) {
  require(!cs.name.empty(), Errc::contract, "curve set needs a name to export");
  const std::string base = (std::filesystem::path(dir) / cs.name).string();
  {
    auto out = detail::open_out(base + ".csv");
    out << to_csv(cs);
    require(out.good(), Errc::io, "write failed: " + base + ".csv");
  }
  auto out = detail::open_out(base + ".json");
  out << to_plot_json(cs, recs).dump(2) << "\n";
  require(out.good(), Errc::io, "write failed: " + base + ".json");
}

}  // namespace moelab::analysis
