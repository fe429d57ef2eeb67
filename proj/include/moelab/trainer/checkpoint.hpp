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
#include <bit>
#include <cstdio>
#include <iterator>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "moelab/core/rng.hpp"
#include "moelab/model/params.hpp"
#include "moelab/trainer/optim.hpp"

namespace moelab::trainer {

using model::ModelConfig;

// File layout, all integers little-endian:
//   8 bytes  magic "MOELABCK"
//   u32      format version
//   u32      dtype (0 = f32, 1 = f64)
//   u64      header length H
//   H bytes  UTF-8 JSON header: config, counters, optimizer settings and the
//            tensor table [{name, shape, offset}] with offsets in elements
//   u64      payload element count N
//   N values little-endian IEEE-754 of the declared dtype
//   u64      FNV-1a of the payload bytes
inline constexpr char kCheckpointMagic[8] = {'M', 'O', 'E', 'L', 'A', 'B', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
struct Checkpoint {
  ModelConfig config;
  ParameterStore<T> params;
  OptimState<T> optim;
  std::uint64_t step = 0;
  std::uint64_t cursor = 0;  // position in the training token stream
  Schedule schedule;
  nlohmann::json meta = nlohmann::json::object();
};

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},
          {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},
          {"n_experts", c.n_experts},
          {"top_k", c.top_k},
          {"granularity", c.granularity},
          {"ffn_expansion", c.ffn_expansion},
          {"vocab_size", c.vocab_size},
          {"max_seq_len", c.max_seq_len},
          {"rope_base", c.rope_base},
          {"scale_top_k_with_granularity", c.scale_top_k_with_granularity},
          {"precision", c.precision == numerics::Precision::f64 ? "f64" : "f32"},
          {"init_std", c.init_std},
          {"lm_head_init", model::to_string(c.lm_head_init)},
          {"norm_eps", c.norm_eps}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model");
  c.n_layers = j.at("n_layers");
  c.n_heads = j.at("n_heads");
  c.n_experts = j.at("n_experts");
  c.top_k = j.at("top_k");
  c.granularity = j.at("granularity");
  c.ffn_expansion = j.at("ffn_expansion");
  c.vocab_size = j.at("vocab_size");
  c.max_seq_len = j.at("max_seq_len");
  c.rope_base = j.at("rope_base");
  c.scale_top_k_with_granularity = j.at("scale_top_k_with_granularity");
  c.precision = j.at("precision").get<std::string>() == "f64" ? numerics::Precision::f64 : numerics::Precision::f32;
  c.init_std = j.at("init_std");
  c.lm_head_init = model::lm_head_init_from_string(j.at("lm_head_init"));
  c.norm_eps = j.at("norm_eps");
  return c;
}

namespace detail {

template <class U>
void put_le(std::string& out, U v) {
  static_assert(std::is_trivially_copyable_v<U>);
  unsigned char b[sizeof(U)];
  std::memcpy(b, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
  out.append(reinterpret_cast<const char*>(b), sizeof(U));
}

template <class U>
U get_le(const char* p) {
  unsigned char b[sizeof(U)];
  std::memcpy(b, p, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
  U v;
  std::memcpy(&v, b, sizeof(U));
  return v;
}

template <class T>
constexpr std::uint32_t dtype_code() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? 0u : 1u;
}

inline std::uint64_t fnv1a_bytes(const char* p, std::size_t n) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(p[i]);
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace detail

template <class T>
std::string serialize_checkpoint(const Checkpoint<T>& ck) {
  nlohmann::json table = nlohmann::json::array();
  std::string payload;
  std::uint64_t offset = 0;
  auto add = [&](const std::string& name, const Tensor<T>& t) {
    table.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    for (T v : t.data()) detail::put_le(payload, v);
    offset += t.size();
  };
  const auto& entries = ck.params.entries();
  for (const auto& e : entries) add(e.name, e.value);
  require(ck.optim.m.size() == entries.size() && ck.optim.v.size() == entries.size(), Errc::contract,
          "optimizer state does not match the parameter list");
  for (std::size_t i = 0; i < entries.size(); ++i) add("optim.m." + entries[i].name, ck.optim.m[i]);
  for (std::size_t i = 0; i < entries.size(); ++i) add("optim.v." + entries[i].name, ck.optim.v[i]);

  const nlohmann::json header{
      {"config", config_to_json(ck.config)},
      {"step", ck.step},
      {"cursor", ck.cursor},
      {"optim",
       {{"step", ck.optim.step},
        {"beta1", ck.optim.cfg.beta1},
        {"beta2", ck.optim.cfg.beta2},
        {"eps", ck.optim.cfg.eps},
        {"weight_decay", ck.optim.cfg.weight_decay}}},
      {"schedule",
       {{"peak", ck.schedule.peak},
        {"warmup_steps", ck.schedule.warmup_steps},
        {"total_steps", ck.schedule.total_steps},
        {"floor", ck.schedule.floor}}},
      {"meta", ck.meta},
      {"tensors", table}};
  const std::string hdr = header.dump();

  std::string out(kCheckpointMagic, 8);
  detail::put_le(out, kCheckpointVersion);
  detail::put_le(out, detail::dtype_code<T>());
  detail::put_le(out, static_cast<std::uint64_t>(hdr.size()));
  out += hdr;
  detail::put_le(out, offset);
  out += payload;
  detail::put_le(out, detail::fnv1a_bytes(payload.data(), payload.size()));
  return out;
}

// Writes to a sibling temp file and renames, so a crash never leaves a
// half-written checkpoint under the final name.
template <class T>
void save_checkpoint(const Checkpoint<T>& ck, const std::string& path) {
  const std::string bytes = serialize_checkpoint(ck);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), Errc::io, "cannot open " + tmp + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(out.good(), Errc::io, "write failed for " + tmp);
  }
  require(std::rename(tmp.c_str(), path.c_str()) == 0, Errc::io, "cannot move checkpoint into place at " + path);
}

template <class T>
Checkpoint<T> parse_checkpoint(const std::string& bytes) {
  const char* p = bytes.data();
  const std::size_t n = bytes.size();
  require(n >= 8 && std::memcmp(p, kCheckpointMagic, 8) == 0, Errc::checkpoint_header, "bad magic bytes");
  require(n >= 24, Errc::checkpoint_header, "truncated header");
  const auto version = detail::get_le<std::uint32_t>(p + 8);
  require(version == kCheckpointVersion, Errc::checkpoint_version,
          "unsupported checkpoint version " + std::to_string(version) + " (expected " +
              std::to_string(kCheckpointVersion) + ")");
  const auto dtype = detail::get_le<std::uint32_t>(p + 12);
  require(dtype <= 1, Errc::checkpoint_header, "unknown dtype code " + std::to_string(dtype));
  require(dtype == detail::dtype_code<T>(), Errc::checkpoint_header,
          std::string("checkpoint stores ") + (dtype ? "f64" : "f32") + " values");
  const auto hlen = detail::get_le<std::uint64_t>(p + 16);
  require(hlen <= n - 24, Errc::checkpoint_header, "truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(std::string_view(p + 24, hlen));
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::checkpoint_header, std::string("unreadable header: ") + e.what());
  }

  std::size_t pos = 24 + hlen;
  require(n - pos >= 8, Errc::checkpoint_payload, "truncated payload");
  const auto count = detail::get_le<std::uint64_t>(p + pos);
  pos += 8;
  const std::uint64_t need = count * sizeof(T) + 8;
  require(count <= (n - pos) / sizeof(T) && n - pos >= need, Errc::checkpoint_payload,
          "truncated payload: expected " + std::to_string(count) + " values");
  require(n - pos == need, Errc::checkpoint_payload, "trailing bytes after payload");
  const char* data = p + pos;
  const auto checksum = detail::get_le<std::uint64_t>(data + count * sizeof(T));
  require(checksum == detail::fnv1a_bytes(data, count * sizeof(T)), Errc::checkpoint_payload,
          "payload checksum mismatch");

  Checkpoint<T> ck;
  try {
    ck.config = config_from_json(header.at("config"));
    ck.step = header.at("step");
    ck.cursor = header.at("cursor");
    const auto& o = header.at("optim");
    ck.optim.step = o.at("step");
    ck.optim.cfg.beta1 = o.at("beta1");
    ck.optim.cfg.beta2 = o.at("beta2");
    ck.optim.cfg.eps = o.at("eps");
    ck.optim.cfg.weight_decay = o.at("weight_decay");
    const auto& s = header.at("schedule");
    ck.schedule.peak = s.at("peak");
    ck.schedule.warmup_steps = s.at("warmup_steps");
    ck.schedule.total_steps = s.at("total_steps");
    ck.schedule.floor = s.at("floor");
    ck.meta = header.value("meta", nlohmann::json::object());

    const auto& table = header.at("tensors");
    std::vector<std::pair<std::string, Tensor<T>>> tensors;
    for (const auto& t : table) {
      const auto shape = t.at("shape").get<numerics::Shape>();
      const std::uint64_t off = t.at("offset");
      const std::uint64_t len = numerics::shape_size(shape);
      require(!shape.empty() && off <= count && len <= count - off, Errc::checkpoint_payload,
              "tensor " + t.at("name").get<std::string>() + " lies outside the payload");
      std::vector<T> vals(len);
      for (std::uint64_t i = 0; i < len; ++i) vals[i] = detail::get_le<T>(data + (off + i) * sizeof(T));
      tensors.emplace_back(t.at("name").get<std::string>(), Tensor<T>(shape, std::move(vals)));
    }
    require(tensors.size() % 3 == 0, Errc::checkpoint_header, "tensor table is not params + two moments");
    const std::size_t np = tensors.size() / 3;
    for (std::size_t i = 0; i < np; ++i) {
      require(tensors[np + i].first == "optim.m." + tensors[i].first &&
                  tensors[2 * np + i].first == "optim.v." + tensors[i].first,
              Errc::checkpoint_header, "optimizer tensors out of order at " + tensors[i].first);
      ck.params.add(tensors[i].first, std::move(tensors[i].second));
      ck.optim.m.push_back(std::move(tensors[np + i].second));
      ck.optim.v.push_back(std::move(tensors[2 * np + i].second));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::checkpoint_header, std::string("malformed header: ") + e.what());
  }
  return ck;
}

// Value precision recorded in a checkpoint file's header.
inline numerics::Precision checkpoint_precision(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::io, "cannot open checkpoint " + path);
  char h[16] = {};
  in.read(h, sizeof h);
  require(in.gcount() == 16 && std::memcmp(h, kCheckpointMagic, 8) == 0, Errc::checkpoint_header,
          "bad magic bytes in " + path);
  require(detail::get_le<std::uint32_t>(h + 8) == kCheckpointVersion, Errc::checkpoint_version,
          "unsupported checkpoint version in " + path);
  const auto dtype = detail::get_le<std::uint32_t>(h + 12);
  require(dtype <= 1, Errc::checkpoint_header, "unknown dtype code " + std::to_string(dtype));
  return dtype ? numerics::Precision::f64 : numerics::Precision::f32;
}

template <class T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::io, "cannot open checkpoint " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint<T>(bytes);
}

// Checks the stored tensors against the layout `cfg` expects and reports the
// first tensor that differs.
template <class T>
void check_layout(const Checkpoint<T>& ck, const ModelConfig& cfg) {
  const auto specs = model::parameter_specs(cfg);
  const auto& entries = ck.params.entries();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    require(i < entries.size(), Errc::checkpoint_shape, "checkpoint is missing tensor " + specs[i].name);
    require(entries[i].name == specs[i].name, Errc::checkpoint_shape,
            "tensor " + specs[i].name + " expected, found " + entries[i].name);
    require(entries[i].value.shape() == specs[i].shape, Errc::checkpoint_shape,
            "tensor " + specs[i].name + " has shape " + numerics::shape_str(entries[i].value.shape()) +
                ", config expects " + numerics::shape_str(specs[i].shape));
  }
  require(entries.size() == specs.size(), Errc::checkpoint_shape,
          "checkpoint has extra tensor " + (entries.size() > specs.size() ? entries[specs.size()].name : std::string{}));
}

template <class T>
Checkpoint<T> load_checkpoint(const std::string& path, const ModelConfig& expected) {
  Checkpoint<T> ck = load_checkpoint<T>(path);
  check_layout(ck, expected);
  return ck;
}

}  // namespace moelab::trainer
