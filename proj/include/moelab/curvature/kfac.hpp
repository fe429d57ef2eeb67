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

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "moelab/core/error.hpp"
#include "moelab/core/rng.hpp"
#include "moelab/numerics/tensor.hpp"

namespace moelab::curvature {

/// Kronecker factors of one dense layer's Fisher block, F ~ A (x) G.
/// A and G hold sums of per-batch token means until finalized.
struct KroneckerFactorPair {
  Eigen::MatrixXd A;  // in x in
  Eigen::MatrixXd G;  // out x out
  std::size_t samples = 0;  // batches accumulated
  std::size_t tokens = 0;

  KroneckerFactorPair() = default;
  KroneckerFactorPair(std::size_t in, std::size_t out)
      : A(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(in))),
        G(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(out))) {}

  KroneckerFactorPair finalized() const {
    require(samples > 0, Errc::contract, "factor pair has no samples");
    KroneckerFactorPair f = *this;
    f.A /= static_cast<double>(samples);
    f.G /= static_cast<double>(samples);
    f.samples = 1;
    return f;
  }
};

template <class T>
Eigen::MatrixXd to_eigen(const numerics::Tensor<T>& t) {
  require(t.rank() == 2, Errc::dimension, "expected a matrix");
  Eigen::MatrixXd m(t.rows(), t.cols());
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m(r, c) = static_cast<double>(t(r, c));
  return m;
}

/// Adds the token means of a a^T and g g^T for one batch of rows.
inline void accumulate_factors(const Eigen::MatrixXd& activations, const Eigen::MatrixXd& output_grads,
                               KroneckerFactorPair& pair) {
  require(activations.rows() == output_grads.rows(), Errc::contract, "activation and gradient token counts differ");
  require(activations.cols() == pair.A.rows() && output_grads.cols() == pair.G.rows(), Errc::contract,
          "factor shapes do not match the layer: A is " + std::to_string(pair.A.rows()) + ", G is " +
              std::to_string(pair.G.rows()) + ", got " + std::to_string(activations.cols()) + " and " +
              std::to_string(output_grads.cols()));
  const auto n = activations.rows();
  if (n == 0) return;
  pair.A.noalias() += activations.transpose() * activations / static_cast<double>(n);
  pair.G.noalias() += output_grads.transpose() * output_grads / static_cast<double>(n);
  ++pair.samples;
  pair.tokens += static_cast<std::size_t>(n);
}

struct PowerResult {
  double value = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
  std::vector<double> history;  // Rayleigh quotient per iteration
};

/// Largest eigenvalue of a symmetric PSD matrix. Starts from a fixed seeded
/// vector and stops once successive Rayleigh quotients move by less than
/// tol * max(1, |lambda|).
inline PowerResult max_eig_power(const Eigen::MatrixXd& m, std::size_t max_iters = 10000, double tol = 1e-12,
                                 std::uint64_t seed = 0x5eed) {
  require(m.rows() == m.cols(), Errc::dimension, "power iteration needs a square matrix");
  PowerResult r;
  const auto n = m.rows();
  if (n == 0) {
    r.converged = true;
    return r;
  }
  Rng rng(seed);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.normal();
  v.normalize();
  double prev = 0.0;
  for (std::size_t it = 0; it < max_iters; ++it) {
    const Eigen::VectorXd w = m * v;
    const double norm = w.norm();
    r.iterations = it + 1;
    if (norm == 0.0) {
      r.value = 0.0;
      r.converged = true;
      r.history.push_back(0.0);
      return r;
    }
    const double rq = v.dot(w);
    r.history.push_back(rq);
    r.value = rq;
    if (it > 0 && std::abs(rq - prev) < tol * std::max(1.0, std::abs(rq))) {
      r.converged = true;
      return r;
    }
    prev = rq;
    v = w / norm;
  }
  return r;
}

struct LayerEig {
  double lambda_max = 0.0;
  double lambda_a = 0.0;
  double lambda_g = 0.0;
  bool converged = false;
};

// lambda_max(A (x) G) = lambda_max(A) * lambda_max(G) for PSD factors.
inline LayerEig kfac_layer_max_eig(const KroneckerFactorPair& finalized, std::size_t max_iters = 10000,
                                   double tol = 1e-12) {
  const PowerResult a = max_eig_power(finalized.A, max_iters, tol);
  const PowerResult g = max_eig_power(finalized.G, max_iters, tol);
  return {a.value * g.value, a.value, g.value, a.converged && g.converged};
}

}  // namespace moelab::curvature
