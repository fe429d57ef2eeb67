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


#include <gtest/gtest.h>

#include <algorithm>

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/KroneckerProduct>

#include "moelab/curvature/probe.hpp"
#include "moelab/trainer/corpus.hpp"

namespace {

using namespace moelab;
using namespace moelab::curvature;
using Eigen::MatrixXd;

MatrixXd random_psd(Rng& rng, int n, int rank = -1) {
  if (rank < 0) rank = n;
  MatrixXd b(n, rank);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < rank; ++j) b(i, j) = rng.normal();
  return b * b.transpose();
}

double dense_max_eig(const MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(m);
  return es.eigenvalues().maxCoeff();
}

TEST(Factors, SingleTokenOuterProduct) {
  KroneckerFactorPair p(2, 1);
  MatrixXd a(1, 2), g(1, 1);
  a << 1, 0;
  g << 3;
  accumulate_factors(a, g, p);
  MatrixXd expect(2, 2);
  expect << 1, 0, 0, 0;
  EXPECT_EQ(p.A, expect);
  EXPECT_EQ(p.G(0, 0), 9.0);
  EXPECT_EQ(p.samples, 1u);
}

TEST(Factors, TwoEqualBatchesDouble) {
  Rng rng(1);
  MatrixXd a = MatrixXd::NullaryExpr(5, 3, [&] { return rng.normal(); });
  MatrixXd g = MatrixXd::NullaryExpr(5, 4, [&] { return rng.normal(); });
  KroneckerFactorPair one(3, 4), two(3, 4);
  accumulate_factors(a, g, one);
  accumulate_factors(a, g, two);
  accumulate_factors(a, g, two);
  EXPECT_TRUE(two.A.isApprox(2.0 * one.A, 1e-14));
  EXPECT_TRUE(two.G.isApprox(2.0 * one.G, 1e-14));
  EXPECT_TRUE(two.finalized().A.isApprox(one.A, 1e-14));
  EXPECT_EQ(two.tokens, 10u);
}

TEST(Factors, SymmetricPsdOnRandomData) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(6));
    MatrixXd a = MatrixXd::NullaryExpr(n, 6, [&] { return rng.normal(); });
    MatrixXd g = MatrixXd::NullaryExpr(n, 5, [&] { return rng.normal(); });
    KroneckerFactorPair p(6, 5);
    accumulate_factors(a, g, p);
    EXPECT_LE((p.A - p.A.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<MatrixXd>(p.A).eigenvalues().minCoeff(), -1e-8);
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<MatrixXd>(p.G).eigenvalues().minCoeff(), -1e-8);
  }
}

TEST(Factors, ShapeMismatchIsContractError) {
  KroneckerFactorPair p(3, 2);
  try {
    accumulate_factors(MatrixXd::Zero(4, 2), MatrixXd::Zero(4, 2), p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::contract);
  }
  EXPECT_THROW(accumulate_factors(MatrixXd::Zero(4, 3), MatrixXd::Zero(5, 2), p), Error);
  EXPECT_THROW(KroneckerFactorPair(3, 2).finalized(), Error);
}

TEST(Power, HandExamples) {
  EXPECT_NEAR(max_eig_power(MatrixXd::Identity(4, 4)).value, 1.0, 1e-12);
  MatrixXd m(2, 2);
  m << 2, 1, 1, 2;
  const auto r = max_eig_power(m);
  EXPECT_NEAR(r.value, 3.0, 1e-10);
  EXPECT_TRUE(r.converged);
  const auto z = max_eig_power(MatrixXd::Zero(3, 3));
  EXPECT_EQ(z.value, 0.0);
  EXPECT_TRUE(z.converged);
}

TEST(Power, MatchesDenseSolverOnRandomPsd) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const MatrixXd m = random_psd(rng, 8);
    EXPECT_NEAR(max_eig_power(m, 100000, 1e-14).value, dense_max_eig(m), 1e-4);
  }
}

TEST(Power, RayleighQuotientsNondecreasing) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const MatrixXd m = random_psd(rng, 8, 3);
    const auto r = max_eig_power(m, 2000, 1e-14);
    for (std::size_t i = 1; i < r.history.size(); ++i)
      ASSERT_GE(r.history[i], r.history[i - 1] - 1e-12 * std::abs(r.history[i]));
  }
}

TEST(Kfac, KroneckerSpectrumIdentity) {
  KroneckerFactorPair p(2, 2);
  p.A = Eigen::Vector2d(2, 1).asDiagonal();
  p.G = Eigen::Vector2d(3, 1).asDiagonal();
  p.samples = 1;
  EXPECT_NEAR(kfac_layer_max_eig(p).lambda_max, 6.0, 1e-10);
  p.A = MatrixXd::Identity(2, 2);
  p.G = MatrixXd::Identity(2, 2);
  EXPECT_NEAR(kfac_layer_max_eig(p).lambda_max, 1.0, 1e-12);
}

TEST(Kfac, MatchesExplicitKroneckerProduct) {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    KroneckerFactorPair p(3, 3);
    p.A = random_psd(rng, 3);
    p.G = random_psd(rng, 3);
    p.samples = 1;
    const MatrixXd k = Eigen::kroneckerProduct(p.A, p.G).eval();
    EXPECT_NEAR(kfac_layer_max_eig(p, 100000, 1e-15).lambda_max, dense_max_eig(k), 1e-6);
  }
}

model::ModelConfig probe_model() {
  model::ModelConfig c;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.n_experts = 4;
  c.top_k = 2;
  c.max_seq_len = 32;
  return c;
}

std::vector<numerics::TokenId> probe_stream() {
  trainer::CorpusSpec s;
  s.kind = trainer::CorpusKind::mixture;
  s.tokens = 20'000;
  s.n_facts = 100;
  return trainer::make_corpus(s).train;
}

TEST(Probe, OneRowPerDenseMatrix) {
  const auto cfg = probe_model();
  const auto params = model::init_parameters<float>(cfg, 1);
  ProbeConfig pc;
  pc.probe_tokens = 256;
  pc.seq_len = 32;
  const auto rep = model_max_eig(cfg, params, probe_windows(probe_stream(), pc), pc);
  std::size_t dense = 0;
  for (const auto& e : params.entries()) dense += e.value.rank() == 2 && e.name != "embed";
  ASSERT_EQ(rep.layers.size(), dense);
  EXPECT_EQ(rep.layers.size(), 2u * (4 + 1 + 3 * 4) + 1);
  double mx = 0;
  for (const auto& l : rep.layers) {
    EXPECT_GE(l.lambda_max, 0.0);
    EXPECT_TRUE(l.converged) << l.name;
    mx = std::max(mx, l.lambda_max);
  }
  EXPECT_EQ(rep.max_lambda, mx);
  EXPECT_GT(mx, 0.0);
  pc.include_router = false;
  const auto no_router = model_max_eig(cfg, params, probe_windows(probe_stream(), pc), pc);
  EXPECT_EQ(no_router.layers.size(), dense - 2);
  const auto rows = to_json_rows(rep, "r1");
  EXPECT_EQ(rows.size(), dense);
  for (const char* key : {"run_id", "layer_name", "lambda_max", "converged"}) EXPECT_TRUE(rows[0].contains(key));
}

TEST(Probe, ZeroOutputLayerSilencesUpstreamCurvature) {
  auto cfg = probe_model();
  cfg.lm_head_init = model::LmHeadInit::zero;
  const auto params = model::init_parameters<float>(cfg, 2);
  ProbeConfig pc;
  pc.probe_tokens = 128;
  pc.seq_len = 32;
  const auto rep = model_max_eig(cfg, params, probe_windows(probe_stream(), pc), pc);
  for (const auto& l : rep.layers) {
    if (l.name == "lm_head")
      EXPECT_GT(l.lambda_max, 0.0);
    else
      EXPECT_LT(l.lambda_max, 1e-20) << l.name;
  }
  EXPECT_EQ(rep.argmax_layer, "lm_head");
}

TEST(Probe, InvariantToWindowOrder) {
  const auto cfg = probe_model();
  const auto params = model::init_parameters<float>(cfg, 3);
  ProbeConfig pc;
  pc.probe_tokens = 256;
  pc.seq_len = 32;
  auto windows = probe_windows(probe_stream(), pc);
  const auto a = model_max_eig(cfg, params, windows, pc);
  std::reverse(windows.begin(), windows.end());
  const auto b = model_max_eig(cfg, params, windows, pc);
  for (std::size_t i = 0; i < a.layers.size(); ++i)
    EXPECT_NEAR(a.layers[i].lambda_max, b.layers[i].lambda_max, 1e-9 * std::max(1.0, a.layers[i].lambda_max))
        << a.layers[i].name;
}

}  // namespace
