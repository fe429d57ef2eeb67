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
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "moelab/core/rng.hpp"
#include "moelab/evalsuite/task.hpp"
#include "moelab/trainer/tokenizer.hpp"

namespace moelab::trainer {

using evalsuite::EvalItem;
using evalsuite::TaskKind;
using evalsuite::TaskSpec;

enum class CorpusKind { memory_recall, chain_arithmetic, mixture };

inline std::string to_string(CorpusKind k) {
  switch (k) {
    case CorpusKind::memory_recall: return "memory-recall";
    case CorpusKind::chain_arithmetic: return "chain-arithmetic";
    case CorpusKind::mixture: return "mixture";
  }
  return "mixture";
}

inline CorpusKind corpus_kind_from_string(const std::string& s) {
  if (s == "memory-recall") return CorpusKind::memory_recall;
  if (s == "chain-arithmetic") return CorpusKind::chain_arithmetic;
  if (s == "mixture") return CorpusKind::mixture;
  fail(Errc::config, "unknown corpus kind '" + s + "' (expected memory-recall|chain-arithmetic|mixture)");
}

struct CorpusSpec {
  CorpusKind kind = CorpusKind::mixture;
  std::uint64_t seed = 0;
  std::uint64_t tokens = 1'000'000;  // target length of the training stream
  std::uint32_t split_train = 99;
  std::uint32_t split_validation = 1;

  std::size_t n_facts = 2000;
  std::size_t n_probes = 256;
  std::size_t n_arith_items = 256;
  std::size_t arith_min_ops = 2;
  std::size_t arith_max_ops = 4;
  std::size_t arith_max_start = 20;
  double memory_fraction = 0.5;  // mixture only

  void validate() const {
    require(tokens > 0, Errc::config, "corpus token count must be positive");
    require(split_train > 0 && split_validation > 0, Errc::config, "both split parts must be positive");
    require(arith_min_ops >= 1 && arith_min_ops <= arith_max_ops, Errc::config, "need 1 <= arith_min_ops <= arith_max_ops");
    require(arith_max_start >= 1, Errc::config, "arith_max_start must be positive");
    require(memory_fraction >= 0.0 && memory_fraction <= 1.0, Errc::config, "memory_fraction must be in [0, 1]");
    if (kind != CorpusKind::chain_arithmetic) require(n_facts >= 1, Errc::config, "memory corpus needs facts");
  }
};

struct Corpus {
  std::vector<TokenId> train;       // documents joined with EOS separators
  std::vector<TokenId> validation;
  std::uint64_t train_documents = 0;
  std::uint64_t validation_documents = 0;
  std::vector<TaskSpec> tasks;  // memory_qa, memory_mc, arith (as applicable)
};

// Validation membership is a pure function of the document text, so the two
// streams can never share a document.
inline bool in_validation(const std::string& text, const CorpusSpec& spec) {
  const std::uint64_t h = splitmix64(fnv1a(text));
  return h % (spec.split_train + spec.split_validation) < spec.split_validation;
}

namespace detail {

inline std::string syllables(Rng& rng, std::size_t n, bool capital) {
  static constexpr char kCons[] = "bdfgklmnprstvz";
  static constexpr char kVow[] = "aeiou";
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    s.push_back(kCons[rng.below(sizeof(kCons) - 1)]);
    s.push_back(kVow[rng.below(sizeof(kVow) - 1)]);
  }
  if (capital) s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

}  // namespace detail

/// One key -> value fact about a made-up entity.
struct Fact {
  std::string entity;
  std::string attribute;
  std::string value;

  std::string question() const { return "What is the " + attribute + " of " + entity + "?"; }
  EvalItem item() const { return {question(), value, {}}; }
};

inline std::vector<Fact> make_facts(std::uint64_t seed, std::size_t n) {
  static const char* kAttributes[] = {"code", "color", "home", "pet"};
  Rng rng(derive_seed(seed, "facts"));
  std::vector<Fact> facts;
  std::unordered_set<std::string> seen;
  while (facts.size() < n) {
    Fact f;
    f.entity = detail::syllables(rng, 3, true);
    f.attribute = kAttributes[rng.below(4)];
    f.value = detail::syllables(rng, 2, false);
    if (seen.insert(f.question()).second) facts.push_back(std::move(f));
  }
  return facts;
}

enum class ArithOp { add, subtract, multiply };

/// Integer word problem: a start value and a chain of operations.
struct ArithProblem {
  std::int64_t start = 0;
  std::vector<std::pair<ArithOp, std::int64_t>> ops;

  std::string question() const {
    std::string q = "Start with " + std::to_string(start) + ".";
    for (const auto& [op, v] : ops) {
      switch (op) {
        case ArithOp::add: q += " Add " + std::to_string(v) + "."; break;
        case ArithOp::subtract: q += " Take away " + std::to_string(v) + "."; break;
        case ArithOp::multiply: q += " Multiply by " + std::to_string(v) + "."; break;
      }
    }
    return q + " What is the result?";
  }

  std::int64_t evaluate() const {
    std::int64_t acc = start;
    for (const auto& [op, v] : ops) acc = op == ArithOp::add ? acc + v : op == ArithOp::subtract ? acc - v : acc * v;
    return acc;
  }

  // "a + b = c." per step, then "#### n".
  std::string solution() const {
    std::string s;
    std::int64_t acc = start;
    for (const auto& [op, v] : ops) {
      const char sym = op == ArithOp::add ? '+' : op == ArithOp::subtract ? '-' : '*';
      const std::int64_t next = op == ArithOp::add ? acc + v : op == ArithOp::subtract ? acc - v : acc * v;
      s += std::to_string(acc) + " " + sym + " " + std::to_string(v) + " = " + std::to_string(next) + ". ";
      acc = next;
    }
    return s + "#### " + std::to_string(acc);
  }

  EvalItem item() const { return {question(), solution(), {}}; }
};

// Results stay within [0, 999].
inline ArithProblem make_arith_problem(Rng& rng, const CorpusSpec& spec) {
  ArithProblem p;
  p.start = static_cast<std::int64_t>(1 + rng.below(spec.arith_max_start));
  const std::size_t n = spec.arith_min_ops + rng.below(spec.arith_max_ops - spec.arith_min_ops + 1);
  std::int64_t acc = p.start;
  while (p.ops.size() < n) {
    const auto op = static_cast<ArithOp>(rng.below(3));
    std::int64_t v = 0;
    if (op == ArithOp::add) {
      v = static_cast<std::int64_t>(1 + rng.below(20));
      if (acc + v > 999) continue;
      acc += v;
    } else if (op == ArithOp::subtract) {
      if (acc < 1) continue;
      v = static_cast<std::int64_t>(1 + rng.below(static_cast<std::uint64_t>(std::min<std::int64_t>(acc, 20))));
      acc -= v;
    } else {
      v = static_cast<std::int64_t>(2 + rng.below(3));
      if (acc * v > 999) continue;
      acc *= v;
    }
    p.ops.emplace_back(op, v);
  }
  require(p.evaluate() == acc, Errc::contract, "arithmetic generator disagrees with its evaluator");
  return p;
}

/// Builds the training/validation token streams and the paired eval tasks.
///
/// Memory facts are split at the fact level; the training stream cycles over
/// the training facts in freshly shuffled passes. Memory probes ask about
/// training facts. Arithmetic problems are drawn fresh; those that hash into
/// the validation side feed the validation stream and the arithmetic task.
inline Corpus make_corpus(const CorpusSpec& spec) {
  spec.validate();
  Corpus c;
  const bool use_memory = spec.kind != CorpusKind::chain_arithmetic;
  const bool use_arith = spec.kind != CorpusKind::memory_recall;
  const double mem_fraction =
      spec.kind == CorpusKind::mixture ? spec.memory_fraction : (use_memory ? 1.0 : 0.0);

  auto append_doc = [](std::vector<TokenId>& stream, const std::string& text) {
    ByteTokenizer::append(stream, text);
    stream.push_back(ByteTokenizer::kEos);
  };

  std::vector<Fact> train_facts;
  if (use_memory) {
    for (Fact& f : make_facts(spec.seed, spec.n_facts)) {
      const std::string doc = evalsuite::render_document(TaskKind::open_ended, f.item());
      if (in_validation(doc, spec)) {
        append_doc(c.validation, doc);
        ++c.validation_documents;
      } else {
        train_facts.push_back(std::move(f));
      }
    }
    require(!train_facts.empty(), Errc::config, "every memory fact landed in validation; raise n_facts");
  }

  Rng mix_rng(derive_seed(spec.seed, "mix"));
  Rng shuffle_rng(derive_seed(spec.seed, "shuffle"));
  Rng arith_rng(derive_seed(spec.seed, "arith"));
  std::vector<std::size_t> order;
  std::size_t next_fact = 0;
  std::vector<EvalItem> arith_items;
  std::unordered_set<std::string> arith_seen;

  auto next_arith_train_doc = [&]() {
    for (;;) {
      const ArithProblem p = make_arith_problem(arith_rng, spec);
      const std::string doc = evalsuite::render_document(TaskKind::open_ended, p.item());
      if (!in_validation(doc, spec)) return doc;
      append_doc(c.validation, doc);
      ++c.validation_documents;
      if (arith_items.size() < spec.n_arith_items && arith_seen.insert(doc).second) arith_items.push_back(p.item());
    }
  };

  c.train.reserve(spec.tokens + 256);
  while (c.train.size() < spec.tokens) {
    const bool memory = use_memory && (!use_arith || mix_rng.uniform() < mem_fraction);
    if (memory) {
      if (next_fact == order.size()) {
        order.resize(train_facts.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        shuffle_rng.shuffle(order);
        next_fact = 0;
      }
      append_doc(c.train, evalsuite::render_document(TaskKind::open_ended, train_facts[order[next_fact++]].item()));
    } else {
      append_doc(c.train, next_arith_train_doc());
    }
    ++c.train_documents;
  }

  if (use_arith) {
    // Top up the held-out problem pool without touching the training stream.
    std::size_t guard = 0;
    while (arith_items.size() < spec.n_arith_items && guard++ < 10'000'000) {
      const ArithProblem p = make_arith_problem(arith_rng, spec);
      const std::string doc = evalsuite::render_document(TaskKind::open_ended, p.item());
      if (in_validation(doc, spec) && arith_seen.insert(doc).second) arith_items.push_back(p.item());
    }
    TaskSpec t;
    t.name = "arith";
    t.kind = TaskKind::open_ended;
    t.items = std::move(arith_items);
    c.tasks.push_back(std::move(t));
  }

  if (use_memory) {
    Rng probe_rng(derive_seed(spec.seed, "probes"));
    std::vector<std::size_t> idx(train_facts.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[probe_rng.below(i)]);
    idx.resize(std::min(spec.n_probes, idx.size()));

    TaskSpec qa, mc;
    qa.name = "memory_qa";
    qa.kind = TaskKind::open_ended;
    mc.name = "memory_mc";
    mc.kind = TaskKind::multiple_choice;
    for (std::size_t i : idx) {
      const Fact& f = train_facts[i];
      qa.items.push_back(f.item());
      // Distractors are values of other training facts, all distinct.
      EvalItem m{evalsuite::render_question(TaskKind::open_ended, f.question()), f.value, {f.value}};
      while (m.choices.size() < 4 && train_facts.size() > 4) {
        const std::string& v = train_facts[probe_rng.below(train_facts.size())].value;
        if (std::find(m.choices.begin(), m.choices.end(), v) == m.choices.end()) m.choices.push_back(v);
      }
      if (m.choices.size() < 2) continue;
      std::swap(m.choices[0], m.choices[probe_rng.below(m.choices.size())]);
      mc.items.push_back(std::move(m));
    }
    c.tasks.push_back(std::move(qa));
    if (!mc.items.empty()) c.tasks.push_back(std::move(mc));
  }
  for (const auto& t : c.tasks) t.validate();
  return c;
}

}  // namespace moelab::trainer
