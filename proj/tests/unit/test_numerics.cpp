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

#include <cmath>
#include <functional>
#include <vector>

#include "moelab/core/rng.hpp"
#include "moelab/model/attention.hpp"
#include "moelab/numerics/gradcheck.hpp"
#include "moelab/numerics/ops.hpp"

namespace {

using namespace moelab;
using namespace moelab::numerics;

Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

using Builder = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

// Reduces the op output to a scalar with fixed random weights so every
// output element contributes a distinct gradient.
double check_op(const Builder& op, const std::vector<Tensor<double>>& inputs, std::uint64_t seed = 7) {
  auto scalarize = [seed](Tape<double>& t, Var y) {
    if (t.value(y).is_scalar()) return y;
    Rng rng(seed);
    std::vector<double> w(t.value(y).size());
    for (double& v : w) v = rng.normal();
    return weighted_sum(t, y, std::move(w));
  };
  Tape<double> tape;
  std::vector<Var> vars;
  for (const auto& in : inputs) vars.push_back(tape.leaf(in, true));
  Var root = scalarize(tape, op(tape, vars));
  tape.backward(root);

  FiniteDifference fd;
  auto numeric = fd.gradient(
      [&](const std::vector<Tensor<double>>& xs) {
        Tape<double> t;
        std::vector<Var> vs;
        for (const auto& x : xs) vs.push_back(t.leaf(x, false));
        return t.value(scalarize(t, op(t, vs))).item();
      },
      inputs);
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor<double>* g = tape.grad(vars[i]);
    Tensor<double> analytic = g ? *g : Tensor<double>(inputs[i].shape());
    worst = std::max(worst, relative_error(analytic, numeric[i]));
  }
  return worst;
}

constexpr double kGradTol = 1e-5;

TEST(Tensor, ElementCountMatchesShape) {
  EXPECT_THROW(Tensor<float>({2, 3}, std::vector<float>(5)), Error);
  EXPECT_THROW(Tensor<float>(Shape{0, 3}), Error);
  Tensor<float> t({2, 3});
  EXPECT_EQ(t.size(), 6u);
}

TEST(Matmul, IdentityIsNeutral) {
  Tape<double> tape;
  auto m = Tensor<double>::matrix({{1, 2, 3}, {4, 5, 6}});
  auto eye = Tensor<double>::matrix({{1, 0}, {0, 1}});
  Var y = matmul(tape, tape.constant(eye), tape.constant(m));
  EXPECT_EQ(tape.value(y), m);
}

TEST(Matmul, HandExample) {
  Tape<double> tape;
  Var y = matmul(tape, tape.constant(Tensor<double>::matrix({{1, 2}, {3, 4}})),
                 tape.constant(Tensor<double>::matrix({{1}, {1}})));
  EXPECT_EQ(tape.value(y), Tensor<double>::matrix({{3}, {7}}));
}

TEST(Matmul, ShapeMismatchIsDimensionError) {
  Tape<double> tape;
  try {
    matmul(tape, tape.constant(Tensor<double>({2, 3})), tape.constant(Tensor<double>({2, 3})));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::dimension);
  }
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
  Rng rng(1);
  const double err = check_op([](Tape<double>& t, const std::vector<Var>& v) { return sum(t, matmul(t, v[0], v[1])); },
                              {random_tensor({3, 4}, rng), random_tensor({4, 5}, rng)});
  EXPECT_LE(err, kGradTol);
}

TEST(Softmax, UniformInput) {
  auto y = softmax_value(Tensor<double>::vector({0, 0, 0}), 0);
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Softmax, HandComputedPair) {
  const double e2 = std::exp(2.0), e1 = std::exp(1.0);
  auto y = softmax_value(Tensor<double>::vector({2, 1}), 0);
  EXPECT_NEAR(y[0], e2 / (e2 + e1), 1e-15);
  EXPECT_NEAR(y[1], e1 / (e2 + e1), 1e-15);
  EXPECT_NEAR(y[0], 0.731059, 1e-6);
  EXPECT_NEAR(y[1], 0.268941, 1e-6);
}

TEST(Softmax, ShiftInvariance) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    auto x = random_tensor({7}, rng, 3.0);
    auto shifted = x;
    const double c = rng.uniform(-50, 50);
    for (double& v : shifted.data()) v += c;
    auto a = softmax_value(x, 0), b = softmax_value(shifted, 0);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  }
}

TEST(Softmax, RowsSumToOneOnTenThousandInputs) {
  Rng rng(3);
  Tensor<float> x({10000, 16});
  for (float& v : x.data()) v = static_cast<float>(10.0 * rng.normal());
  auto y = softmax_value(x, 1);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    double s = 0;
    for (float v : y.row(r)) {
      EXPECT_GE(v, 0.0f);
      s += v;
    }
    ASSERT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Softmax, AlongLeadingAxis) {
  auto y = softmax_value(Tensor<double>::matrix({{2, 0}, {1, 0}}), 0);
  EXPECT_NEAR(y(0, 0), 0.731059, 1e-6);
  EXPECT_NEAR(y(0, 1), 0.5, 1e-15);
  EXPECT_THROW(softmax_value(Tensor<double>::vector({1, 2}), 1), Error);
}

TEST(RmsNorm, HandComputed) {
  Tape<double> tape;
  Var y = rmsnorm(tape, tape.constant(Tensor<double>::matrix({{3, 4}})), tape.constant(Tensor<double>::vector({1, 1})),
                  0.0);
  const double rms = std::sqrt((9.0 + 16.0) / 2.0);
  EXPECT_NEAR(tape.value(y)[0], 3.0 / rms, 1e-15);
  EXPECT_NEAR(tape.value(y)[1], 4.0 / rms, 1e-15);
  EXPECT_NEAR(tape.value(y)[0], 0.848528, 1e-6);
  EXPECT_NEAR(tape.value(y)[1], 1.131371, 1e-6);
}

TEST(RmsNorm, ZerosStayZero) {
  Tape<double> tape;
  Var y = rmsnorm(tape, tape.constant(Tensor<double>({2, 4})), tape.constant(Tensor<double>({4}, 1.0)), 1e-5);
  for (double v : tape.value(y).data()) EXPECT_EQ(v, 0.0);
}

TEST(RmsNorm, ScaleInvariant) {
  Rng rng(4);
  auto x = random_tensor({3, 6}, rng);
  auto gain = random_tensor({6}, rng);
  for (double alpha : {0.01, 0.5, 3.0, 1000.0}) {
    auto scaled = x;
    for (double& v : scaled.data()) v *= alpha;
    Tape<double> tape;
    Var a = rmsnorm(tape, tape.constant(x), tape.constant(gain), 0.0);
    Var b = rmsnorm(tape, tape.constant(scaled), tape.constant(gain), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(tape.value(a)[i], tape.value(b)[i], 1e-12);
  }
}

TEST(RmsNorm, GainMustMatchLastDimension) {
  Tape<double> tape;
  EXPECT_THROW(rmsnorm(tape, tape.constant(Tensor<double>({2, 4})), tape.constant(Tensor<double>({3})), 0.0), Error);
}

TEST(CrossEntropy, UniformLogitsGiveLogVocab) {
  Tape<double> tape;
  std::vector<TokenId> targets{0, 3, 7, 5};
  bool mask[] = {true, true, true, true};
  Var l = cross_entropy_masked(tape, tape.constant(Tensor<double>({4, 8})), targets, mask);
  EXPECT_EQ(tape.value(l).item(), std::log(8.0));
  EXPECT_NEAR(tape.value(l).item(), 2.0794, 1e-4);
}

TEST(CrossEntropy, PerfectPredictionIsZero) {
  Tensor<double> z({3, 5}, -1e4);
  std::vector<TokenId> targets{1, 4, 0};
  for (std::size_t r = 0; r < 3; ++r) z(r, targets[r]) = 0.0;
  bool mask[] = {true, true, true};
  Tape<double> tape;
  EXPECT_EQ(tape.value(cross_entropy_masked(tape, tape.constant(z), targets, mask)).item(), 0.0);
}

TEST(CrossEntropy, MaskedOutTargetsDoNotMatter) {
  Rng rng(5);
  auto z = random_tensor({6, 10}, rng);
  std::vector<TokenId> a{1, 2, 3, 4, 5, 6}, b{9, 2, 0, 4, 8, 6};
  bool mask[] = {false, true, false, true, false, true};
  Tape<double> tape;
  const double la = tape.value(cross_entropy_masked(tape, tape.constant(z), a, mask)).item();
  const double lb = tape.value(cross_entropy_masked(tape, tape.constant(z), b, mask)).item();
  EXPECT_EQ(la, lb);
}

TEST(CrossEntropy, EmptyMaskIsAnError) {
  Tape<double> tape;
  std::vector<TokenId> t{0, 1};
  bool mask[] = {false, false};
  try {
    cross_entropy_masked(tape, tape.constant(Tensor<double>({2, 4})), t, mask);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::empty_mask);
  }
}

TEST(Backward, SquareAtThree) {
  Tape<double> tape;
  Var x = tape.leaf(Tensor<double>::scalar(3.0), true);
  tape.backward(square(tape, x));
  EXPECT_EQ(tape.grad(x)->item(), 6.0);
}

TEST(Backward, NonScalarRootIsContractError) {
  Tape<double> tape;
  Var x = tape.leaf(Tensor<double>({2}), true);
  try {
    tape.backward(scale(tape, x, 2.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::contract);
  }
}

TEST(Backward, FrozenLeafGetsNoGradient) {
  Tape<double> tape;
  Var x = tape.leaf(Tensor<double>::scalar(2.0), true);
  Var c = tape.leaf(Tensor<double>::scalar(5.0), false);
  tape.backward(mul(tape, x, c));
  EXPECT_EQ(tape.grad(x)->item(), 5.0);
  EXPECT_EQ(tape.grad(c), nullptr);
}

TEST(Backward, SecondCallWithoutResetFails) {
  Tape<double> tape;
  Var x = tape.leaf(Tensor<double>::scalar(3.0), true);
  Var y = square(tape, x);
  tape.backward(y);
  EXPECT_THROW(tape.backward(y), Error);
  tape.reset_grads();
  tape.backward(y);
  EXPECT_EQ(tape.grad(x)->item(), 6.0);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  Tape<double> tape;
  Var x = tape.leaf(Tensor<double>::scalar(2.0), true);
  Var y = add(tape, mul(tape, x, x), scale(tape, x, 3.0));  // x^2 + 3x
  tape.backward(y);
  EXPECT_EQ(tape.grad(x)->item(), 7.0);
}

TEST(FiniteChecks, NonFiniteOutputRaisesWhenEnabled) {
  const bool before = finite_checks_enabled();
  set_finite_checks(true);
  Tape<double> tape;
  Var x = tape.constant(Tensor<double>::scalar(1e300));
  try {
    scale(tape, x, 1e300);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::non_finite);
  }
  set_finite_checks(before);
}

TEST(Determinism, ForwardIsBitwiseRepeatable) {
  Rng rng(6);
  auto a = random_tensor({17, 33}, rng).cast<float>();
  auto b = random_tensor({33, 9}, rng).cast<float>();
  auto g = random_tensor({9}, rng).cast<float>();
  auto run = [&] {
    Tape<float> t;
    Var y = rmsnorm(t, matmul(t, t.constant(a), t.constant(b)), t.constant(g), 1e-5f);
    return t.value(softmax(t, y, 1));
  };
  EXPECT_EQ(run(), run());
}

// Every differentiable op against central differences, 64-bit, step 1e-5.
class OpGradients : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(OpGradients, MatchFiniteDifferences) {
  Rng rng(GetParam());
  const std::size_t m = 2 + rng.below(4), n = 2 + rng.below(5), k = 2 + rng.below(4);

  EXPECT_LE(check_op([](auto& t, auto& v) { return matmul(t, v[0], v[1]); },
                     {random_tensor({m, k}, rng), random_tensor({k, n}, rng)}),
            kGradTol)
      << "matmul";
  EXPECT_LE(check_op([](auto& t, auto& v) { return add(t, v[0], v[1]); },
                     {random_tensor({m, n}, rng), random_tensor({m, n}, rng)}),
            kGradTol)
      << "add";
  EXPECT_LE(check_op([](auto& t, auto& v) { return mul(t, v[0], v[1]); },
                     {random_tensor({m, n}, rng), random_tensor({m, n}, rng)}),
            kGradTol)
      << "mul";
  EXPECT_LE(check_op([](auto& t, auto& v) { return scale(t, v[0], -1.7); }, {random_tensor({m, n}, rng)}), kGradTol)
      << "scale";
  EXPECT_LE(check_op([](auto& t, auto& v) { return mean(t, v[0]); }, {random_tensor({m, n}, rng)}), kGradTol)
      << "mean";
  EXPECT_LE(check_op([](auto& t, auto& v) { return softmax(t, v[0], 1); }, {random_tensor({m, n}, rng)}), kGradTol)
      << "softmax axis 1";
  EXPECT_LE(check_op([](auto& t, auto& v) { return softmax(t, v[0], 0); }, {random_tensor({m, n}, rng)}), kGradTol)
      << "softmax axis 0";
  EXPECT_LE(check_op([](auto& t, auto& v) { return rmsnorm(t, v[0], v[1], 1e-5); },
                     {random_tensor({m, n}, rng), random_tensor({n}, rng)}),
            kGradTol)
      << "rmsnorm";
  EXPECT_LE(check_op([](auto& t, auto& v) { return swiglu(t, v[0], v[1]); },
                     {random_tensor({m, n}, rng), random_tensor({m, n}, rng)}),
            kGradTol)
      << "swiglu";
  EXPECT_LE(check_op([](auto& t, auto& v) { return logsumexp_rows(t, v[0]); }, {random_tensor({m, n}, rng)}),
            kGradTol)
      << "logsumexp_rows";
  EXPECT_LE(check_op([](auto& t, auto& v) { return column_mean(t, v[0]); }, {random_tensor({m, n}, rng)}), kGradTol)
      << "column_mean";

  std::vector<TokenId> targets(m);
  for (auto& x : targets) x = static_cast<TokenId>(rng.below(n));
  EXPECT_LE(check_op(
                [&](auto& t, auto& v) {
                  bool mask[8] = {true, false, true, true, false, true, true, true};
                  return cross_entropy_masked(t, v[0], targets, std::span<const bool>(mask, m));
                },
                {random_tensor({m, n}, rng)}),
            kGradTol)
      << "cross_entropy_masked";

  std::vector<TokenId> ids{1, 0, 3, 1};
  EXPECT_LE(check_op([&](auto& t, auto& v) { return embedding(t, v[0], ids); }, {random_tensor({4, n}, rng)}),
            kGradTol)
      << "embedding";

  std::vector<std::uint32_t> rows{2, 0, 2};
  EXPECT_LE(check_op([&](auto& t, auto& v) { return gather_rows(t, v[0], rows); }, {random_tensor({3, n}, rng)}),
            kGradTol)
      << "gather_rows";
  EXPECT_LE(check_op(
                [&](auto& t, auto& v) {
                  std::vector<RowScatter> parts{{v[0], {0, 2}}, {v[1], {2, 1, 3}}};
                  return scatter_add_rows(t, 4, n, std::move(parts));
                },
                {random_tensor({2, n}, rng), random_tensor({3, n}, rng)}),
            kGradTol)
      << "scatter_add_rows";
  EXPECT_LE(check_op([&](auto& t, auto& v) { return scale_rows_by(t, v[0], v[1], rows, 1); },
                     {random_tensor({3, n}, rng), random_tensor({3, 2}, rng)}),
            kGradTol)
      << "scale_rows_by";

  std::vector<std::uint32_t> sel{0, 2, 3, 1, 1, 0};
  EXPECT_LE(check_op([&](auto& t, auto& v) { return restricted_softmax(t, v[0], sel, 2); },
                     {random_tensor({3, 4}, rng)}),
            kGradTol)
      << "restricted_softmax";
}

TEST_P(OpGradients, AttentionAndRotaryMatchFiniteDifferences) {
  Rng rng(GetParam() + 100);
  const std::size_t seq = 3 + rng.below(3), heads = 2, d = 8;
  EXPECT_LE(check_op([&](auto& t, auto& v) { return model::rope(t, v[0], seq, heads, 10000.0); },
                     {random_tensor({2 * seq, d}, rng)}),
            kGradTol)
      << "rope";
  EXPECT_LE(check_op([&](auto& t, auto& v) { return model::causal_attention(t, v[0], v[1], v[2], seq, heads); },
                     {random_tensor({2 * seq, d}, rng), random_tensor({2 * seq, d}, rng),
                      random_tensor({2 * seq, d}, rng)}),
            kGradTol)
      << "causal_attention";
}

INSTANTIATE_TEST_SUITE_P(RandomShapes, OpGradients, ::testing::Values(11u, 12u, 13u, 14u, 15u));

TEST(Rotary, PositionZeroIsIdentity) {
  Rng rng(8);
  auto x = random_tensor({1, 8}, rng);
  Tape<double> tape;
  Var y = model::rope(tape, tape.constant(x), 1, 2, 10000.0);
  EXPECT_EQ(tape.value(y), x);
}

TEST(Rotary, PreservesNormPerHead) {
  Rng rng(9);
  auto x = random_tensor({5, 8}, rng);
  Tape<double> tape;
  Var y = model::rope(tape, tape.constant(x), 5, 2, 10000.0);
  for (std::size_t r = 0; r < 5; ++r) {
    double a = 0, b = 0;
    for (std::size_t j = 0; j < 8; ++j) {
      a += x(r, j) * x(r, j);
      b += tape.value(y)(r, j) * tape.value(y)(r, j);
    }
    EXPECT_NEAR(a, b, 1e-12);
  }
}

}  // namespace
