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

#include <stdexcept>
#include <string>
#include <string_view>

namespace moelab {

enum class Errc {
  dimension,
  contract,
  non_finite,
  empty_mask,
  config,
  validation,
  input,
  truncation,
  io,
  checkpoint_header,
  checkpoint_payload,
  checkpoint_version,
  checkpoint_shape,
  insufficient_data,
};

constexpr std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::dimension: return "dimension";
    case Errc::contract: return "contract";
    case Errc::non_finite: return "non_finite";
    case Errc::empty_mask: return "empty_mask";
    case Errc::config: return "config";
    case Errc::validation: return "validation";
    case Errc::input: return "input";
    case Errc::truncation: return "truncation";
    case Errc::io: return "io";
    case Errc::checkpoint_header: return "checkpoint_header";
    case Errc::checkpoint_payload: return "checkpoint_payload";
    case Errc::checkpoint_version: return "checkpoint_version";
    case Errc::checkpoint_shape: return "checkpoint_shape";
    case Errc::insufficient_data: return "insufficient_data";
  }
  return "unknown";
}

// Single exception type for the library; callers switch on code().
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code), message_(what) {}

  Errc code() const noexcept { return code_; }
  // what() without the code prefix
  const std::string& message() const noexcept { return message_; }

 private:
  Errc code_;
  std::string message_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace moelab
