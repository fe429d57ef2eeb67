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
#include <functional>
#include <vector>

#include "moelab/numerics/tensor.hpp"

namespace moelab::numerics {

// ||a - b|| / max(||a||, ||b||), with 0 when both are exactly zero.
// A norm-wise ratio avoids blowing up on individual near-zero entries.
inline double relative_error(const Tensor<double>& a, const Tensor<double>& b) {
  require(a.shape() == b.shape(), Errc::dimension, "relative_error shape mismatch");
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? std::sqrt(diff) : std::sqrt(diff) / denom;
}

/// Central finite differences of a scalar function of several tensors.
/// `f` is evaluated on perturbed copies; inputs are restored afterwards.
/// `accept`, when given, is consulted after each perturbed evaluation and
/// may veto the element (e.g. when a discrete decision flipped); vetoed
/// elements are reported through `rejected` and left at zero.
struct FiniteDifference {
  double step = 1e-5;

  std::vector<Tensor<double>> gradient(const std::function<double(const std::vector<Tensor<double>>&)>& f,
                                       std::vector<Tensor<double>> inputs,
                                       const std::function<bool()>& accept = {},
                                       std::size_t* rejected = nullptr) const {
    std::vector<Tensor<double>> grads;
    grads.reserve(inputs.size());
    if (rejected) *rejected = 0;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      Tensor<double> g(inputs[t].shape());
      for (std::size_t i = 0; i < inputs[t].size(); ++i) {
        const double orig = inputs[t][i];
        inputs[t][i] = orig + step;
        const double fp = f(inputs);
        const bool ok_p = !accept || accept();
        inputs[t][i] = orig - step;
        const double fm = f(inputs);
        const bool ok_m = !accept || accept();
        inputs[t][i] = orig;
        if (ok_p && ok_m) {
          g[i] = (fp - fm) / (2.0 * step);
        } else if (rejected) {
          ++*rejected;
        }
      }
      grads.push_back(std::move(g));
    }
    return grads;
  }
};

}  // namespace moelab::numerics
