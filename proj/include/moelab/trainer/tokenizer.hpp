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

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "moelab/core/error.hpp"
#include "moelab/numerics/ops.hpp"

namespace moelab::trainer {

using numerics::TokenId;

// Byte-level vocabulary: ids 0..255 are raw bytes, followed by three specials.
struct ByteTokenizer {
  static constexpr TokenId kBos = 256;
  static constexpr TokenId kEos = 257;
  static constexpr TokenId kPad = 258;
  static constexpr std::size_t kVocabSize = 259;

  static std::vector<TokenId> encode(std::string_view text) {
    std::vector<TokenId> out;
    out.reserve(text.size());
    for (unsigned char c : text) out.push_back(c);
    return out;
  }

  static void append(std::vector<TokenId>& out, std::string_view text) {
    for (unsigned char c : text) out.push_back(c);
  }

  // Specials are dropped.
  static std::string decode(std::span<const TokenId> ids) {
    std::string s;
    s.reserve(ids.size());
    for (TokenId t : ids)
      if (t < 256) s.push_back(static_cast<char>(t));
    return s;
  }

  static bool is_special(TokenId t) { return t >= 256; }
};

}  // namespace moelab::trainer
