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

#include <optional>
#include <span>
#include <vector>

#include "moelab/model/transformer.hpp"
#include "moelab/trainer/tokenizer.hpp"

namespace moelab::evalsuite {

using numerics::Tensor;
using numerics::TokenId;
using trainer::ByteTokenizer;

// Anything that maps a token sequence to next-token logits.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t max_seq_len() const = 0;
  // Token prepended to every scored or sampled context, if any.
  virtual std::optional<TokenId> boundary_token() const { return std::nullopt; }
  // Row i holds the logits predicting token i + 1.
  virtual Tensor<double> logits(std::span<const TokenId> tokens) const = 0;
  virtual std::vector<double> next_logits(std::span<const TokenId> tokens) const {
    const Tensor<double> all = logits(tokens);
    const auto last = all.row(all.rows() - 1);
    return {last.begin(), last.end()};
  }
};

template <class T>
class TransformerLM final : public LanguageModel {
 public:
  TransformerLM(model::ModelConfig cfg, model::ParameterStore<T> params)
      : cfg_(std::move(cfg)), params_(std::move(params)) {}

  std::size_t vocab_size() const override { return cfg_.vocab_size; }
  std::size_t max_seq_len() const override { return cfg_.max_seq_len; }
  // Training documents are separated by EOS, so contexts open with one.
  std::optional<TokenId> boundary_token() const override {
    if (cfg_.vocab_size > ByteTokenizer::kEos) return ByteTokenizer::kEos;
    return std::nullopt;
  }
  Tensor<double> logits(std::span<const TokenId> tokens) const override {
    return model::transformer_logits(cfg_, params_, tokens).template cast<double>();
  }

 private:
  model::ModelConfig cfg_;
  model::ParameterStore<T> params_;
};

}  // namespace moelab::evalsuite
