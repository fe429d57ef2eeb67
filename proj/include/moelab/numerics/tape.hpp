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
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "moelab/numerics/tensor.hpp"

namespace moelab::numerics {

/// Handle to a node on a Tape. Only meaningful for the tape that issued it.
struct Var {
  std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
  bool valid() const noexcept { return id != std::numeric_limits<std::uint32_t>::max(); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// sequence is already a topological order and backward is a reverse sweep.
///
/// A Tape is single-threaded. Independent tapes share nothing and can run
/// concurrently, as long as referenced external tensors are not mutated.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor<T> value, bool requires_grad) {
    Node n;
    n.owned = std::move(value);
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }

  Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  // Leaf that reads an external tensor without copying; the tensor must
  // outlive the tape and stay unmodified until the tape is discarded.
  Var ref(const Tensor<T>& external, bool requires_grad) {
    Node n;
    n.external = &external;
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }

  // Records an op output. The backward rule is kept only when some input
  // requires a gradient.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
  }

  Var record(Tensor<T> value, std::span<const Var> inputs, BackwardFn fn) {
    check_finite(value, "tape op");
    Node n;
    n.owned = std::move(value);
    for (Var v : inputs) n.requires_grad = n.requires_grad || node(v).requires_grad;
    if (n.requires_grad) n.backward = std::move(fn);
    return push(std::move(n));
  }

  const Tensor<T>& value(Var v) const { return node(v).value(); }
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  // Gradient buffer for v, or nullptr when no gradient reached it.
  const Tensor<T>* grad(Var v) const {
    const Node& n = node(v);
    return n.grad ? &*n.grad : nullptr;
  }

  // Backward rules accumulate through this; returns nullptr for nodes that
  // do not require a gradient so rules can skip the work.
  Tensor<T>* grad_sink(Var v) {
    Node& n = node(v);
    if (!n.requires_grad) return nullptr;
    if (!n.grad) n.grad.emplace(n.value().shape(), T{0});
    return &*n.grad;
  }

  void backward(Var root) {
    require(!backward_done_, Errc::contract, "backward already ran on this tape; call reset_grads() first");
    const Node& r = node(root);
    require(r.value().is_scalar(), Errc::contract,
            "backward root must be scalar, got " + shape_str(r.value().shape()));
    backward_done_ = true;
    if (!r.requires_grad) return;
    grad_sink(root)->fill(T{1});
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && n.grad) n.backward(*this, *n.grad);
    }
  }

  void reset_grads() {
    for (Node& n : nodes_) n.grad.reset();
    backward_done_ = false;
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    std::optional<Tensor<T>> grad;
    BackwardFn backward;
    bool requires_grad = false;

    const Tensor<T>& value() const { return external ? *external : owned; }
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  Node& node(Var v) {
    require(v.valid() && v.id < nodes_.size(), Errc::contract, "variable does not belong to this tape");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    require(v.valid() && v.id < nodes_.size(), Errc::contract, "variable does not belong to this tape");
    return nodes_[v.id];
  }

  // deque keeps value references stable while later ops append nodes.
  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace moelab::numerics
