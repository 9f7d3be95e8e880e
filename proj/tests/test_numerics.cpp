// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "icfcp/numerics/ops.hpp"
#include "support/gradcheck.hpp"

using icfcp::num::Tensor;
namespace num = icfcp::num;
using icfcp::testing::grad_check;

namespace {

Tensor<double> random_tensor(num::Shape shape, std::mt19937_64& rng, bool requires_grad = true,
                             double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> d(num::numel(shape));
  for (auto& v : d) v = u(rng);
  return Tensor<double>::from(std::move(shape), std::move(d), requires_grad);
}

Tensor<double> mat(std::size_t r, std::size_t c, std::vector<double> v) {
  return Tensor<double>::from({r, c}, std::move(v));
}

}  // namespace

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  auto a = mat(2, 2, {0.3, -1.2, 4.5, 2.0});
  auto c = num::matmul(mat(2, 2, {1, 0, 0, 1}), a);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(c[i], a[i]);
}

TEST(Matmul, HandComputedProduct) {
  auto c = num::matmul(mat(2, 2, {1, 2, 3, 4}), mat(2, 1, {1, 1}));
  ASSERT_EQ(c.shape(), (num::Shape{2, 1}));
  EXPECT_DOUBLE_EQ(c[0], 3.0);
  EXPECT_DOUBLE_EQ(c[1], 7.0);
}

TEST(Matmul, ZeroAnnihilates) {
  std::mt19937_64 rng(1);
  auto c = num::matmul(Tensor<double>::zeros({3, 4}), random_tensor({4, 5}, rng, false));
  for (const double v : c.data()) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(num::matmul(Tensor<double>::zeros({2, 3}), Tensor<double>::zeros({2, 3})),
               num::DimensionError);
}

TEST(Softmax, UniformRow) {
  auto p = num::softmax_rows(mat(1, 4, {0, 0, 0, 0}));
  for (const double v : p.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Softmax, LogThreeGapGivesQuarterAndThreeQuarters) {
  const double c = 2.7;
  auto p = num::softmax_rows(mat(1, 2, {c, c + std::log(3.0)}));
  EXPECT_NEAR(p[0], 0.25, 1e-15);
  EXPECT_NEAR(p[1], 0.75, 1e-15);
}

TEST(Softmax, ShiftInvariantAndNormalized) {
  std::mt19937_64 rng(7);
  auto x = random_tensor({5, 6}, rng, false, -30, 30);
  auto p = num::softmax_rows(x);
  auto q = num::softmax_rows(num::add_scalar(x, 123.0));
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 6; ++j) {
      EXPECT_GE(p.at(i, j), 0.0);
      EXPECT_NEAR(p.at(i, j), q.at(i, j), 1e-12);
      s += p.at(i, j);
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(MaskedAttention, SingleTokenReturnsValue) {
  auto v = mat(1, 3, {0.5, -2.0, 1.0});
  auto out = num::masked_attention(mat(1, 3, {1, 2, 3}), mat(1, 3, {3, 2, 1}), v, mat(1, 1, {0}));
  for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(out[j], v[j]);
}

TEST(MaskedAttention, SelfOnlyMaskReturnsOwnValues) {
  std::mt19937_64 rng(3);
  const double B = num::blocked_value<double>();
  auto mask = mat(3, 3, {0, B, B, B, 0, B, B, B, 0});
  auto v = random_tensor({3, 4}, rng, false);
  auto out = num::masked_attention(random_tensor({3, 4}, rng, false), random_tensor({3, 4}, rng, false), v,
                                   mask, 2);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_DOUBLE_EQ(out[i], v[i]);
}

TEST(MaskedAttention, BlockedColumnGetsExactlyZeroWeight) {
  std::mt19937_64 rng(5);
  const double B = num::blocked_value<double>();
  // Row 0 may not see column 2.
  auto mask = mat(3, 3, {0, 0, B, 0, 0, 0, 0, 0, 0});
  auto q = random_tensor({3, 2}, rng, false, -5, 5);
  auto k = random_tensor({3, 2}, rng, false, -5, 5);
  std::vector<double> eye(9, 0.0);
  eye[0] = eye[4] = eye[8] = 1.0;
  auto weights = num::masked_attention(q, k, mat(3, 3, eye), mask);
  EXPECT_EQ(weights.at(0, 2), 0.0);

  // Perturbation oracle: changing v[2] leaves row 0 untouched.
  auto v1 = random_tensor({3, 2}, rng, false);
  auto v2data = std::vector<double>(v1.data().begin(), v1.data().end());
  v2data[4] += 10.0;
  v2data[5] -= 7.0;
  auto o1 = num::masked_attention(q, k, v1, mask);
  auto o2 = num::masked_attention(q, k, Tensor<double>::from({3, 2}, v2data), mask);
  EXPECT_EQ(o1.at(0, 0), o2.at(0, 0));
  EXPECT_EQ(o1.at(0, 1), o2.at(0, 1));
  EXPECT_NE(o1.at(1, 0), o2.at(1, 0));
}

TEST(MaskedAttention, FullyBlockedRowIsContractViolation) {
  const double B = num::blocked_value<double>();
  auto z = Tensor<double>::zeros({2, 2});
  EXPECT_THROW(num::masked_attention(z, z, z, mat(2, 2, {B, B, 0, 0})), num::ContractError);
  EXPECT_THROW(num::masked_attention(z, z, z, mat(2, 2, {0.5, 0, 0, 0})), num::ContractError);
  EXPECT_THROW(num::masked_attention(z, z, z, Tensor<double>::zeros({3, 3})), num::DimensionError);
}

TEST(Backward, SumGivesOnes) {
  auto x = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  num::backward(num::sum(x));
  for (const double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SquareGivesTwiceInput) {
  auto x = Tensor<double>::from({4}, {1.5, -2.0, 0.0, 3.25}, true);
  num::backward(num::sum(num::mul(x, x)));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * x[i]);
}

TEST(Backward, NonScalarLossIsRejected) {
  auto x = Tensor<double>::from({2}, {1, 2}, true);
  EXPECT_THROW(num::backward(num::scale(x, 2.0)), num::ContractError);
}

TEST(Backward, SharedSubexpressionVisitedOnce) {
  // y = x·x reused twice: d/dx sum(y + y) = 4x.
  auto x = Tensor<double>::from({3}, {1, -2, 0.5}, true);
  auto y = num::mul(x, x);
  num::backward(num::sum(num::add(y, y)));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 4.0 * x[i]);
}

TEST(Backward, DeterministicAcrossRuns) {
  std::mt19937_64 rng(11);
  auto a = random_tensor({4, 6}, rng);
  auto b = random_tensor({6, 5}, rng);
  auto run = [&] {
    a.zero_grad();
    b.zero_grad();
    num::backward(num::sum(num::gelu(num::softmax_rows(num::matmul(a, b)))));
    return std::vector<double>(a.grad().begin(), a.grad().end());
  };
  const auto g1 = run();
  const auto g2 = run();
  ASSERT_EQ(g1.size(), g2.size());
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_EQ(g1[i], g2[i]);
}

TEST(Numeric, NanIsDetected) {
  EXPECT_THROW(num::log(Tensor<double>::from({2}, {1.0, -1.0})), num::NumericError);
  EXPECT_THROW(num::log(Tensor<double>::from({1}, {0.0})), num::NumericError);
}

// Finite-difference agreement for every differentiable op.
class GradCheck : public ::testing::Test {
 protected:
  std::mt19937_64 rng{2024};
  void expect_ok(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> leaves) {
    const auto r = grad_check(f, std::move(leaves));
    EXPECT_LT(r.norm_rel_error, 1e-4);
    EXPECT_LT(r.max_rel_error, 1e-4);
  }
};

TEST_F(GradCheck, Matmul) {
  auto a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  auto w = random_tensor({3, 2}, rng, false);
  expect_ok([&] { return num::sum(num::mul(num::matmul(a, b), w)); }, {a, b});
}

TEST_F(GradCheck, ElementwiseChain) {
  auto a = random_tensor({2, 5}, rng), b = random_tensor({2, 5}, rng, true, 0.5, 2.0);
  auto bias = random_tensor({5}, rng);
  expect_ok(
      [&] {
        auto x = num::add_bias(num::sub(num::mul(a, b), num::scale(a, 0.3)), bias);
        return num::sum(num::add(num::sigmoid(x), num::add(num::gelu(x), num::log(b))));
      },
      {a, b, bias});
}

TEST_F(GradCheck, ReluAndMinimumAwayFromKinks) {
  auto a = Tensor<double>::from({1, 6}, {-1.2, -0.3, 0.4, 0.9, 2.5, 3.1}, true);
  expect_ok([&] { return num::sum(num::mul(num::relu(a), num::minimum(a, 1.0))); }, {a});
}

TEST_F(GradCheck, SoftmaxAndLogSoftmax) {
  auto a = random_tensor({3, 4}, rng, true, -3, 3);
  auto w = random_tensor({3, 4}, rng, false);
  expect_ok([&] { return num::sum(num::mul(num::softmax_rows(a), w)); }, {a});
  expect_ok([&] { return num::sum(num::mul(num::log_softmax_rows(a), w)); }, {a});
}

TEST_F(GradCheck, LayerNorm) {
  auto x = random_tensor({3, 5}, rng, true, -2, 2);
  auto g = random_tensor({5}, rng, true, 0.5, 1.5), b = random_tensor({5}, rng);
  auto w = random_tensor({3, 5}, rng, false);
  expect_ok([&] { return num::sum(num::mul(num::layer_norm(x, g, b), w)); }, {x, g, b});
}

TEST_F(GradCheck, MaskedAttentionMultiHead) {
  const double B = num::blocked_value<double>();
  auto q = random_tensor({4, 4}, rng), k = random_tensor({4, 4}, rng), v = random_tensor({4, 6}, rng);
  auto mask = mat(4, 4, {0, 0, B, B, 0, 0, B, B, 0, 0, 0, B, 0, 0, B, 0});
  auto w = random_tensor({4, 6}, rng, false);
  expect_ok([&] { return num::sum(num::mul(num::masked_attention(q, k, v, mask, 2), w)); }, {q, k, v});
}

TEST_F(GradCheck, ShapeOps) {
  auto a = random_tensor({3, 2}, rng), b = random_tensor({2, 2}, rng);
  auto w = random_tensor({1, 9}, rng, false);
  expect_ok(
      [&] {
        auto c = num::concat_rows(std::vector<Tensor<double>>{a, b});
        auto s = num::slice_rows(c, 1, 3);
        auto g = num::gather(c, {0, 3, 5, 9});
        auto p = num::pairwise_diff(g);
        auto r = num::reshape(num::sum_rows(num::mul(p, p)), {4});
        return num::add(num::add(num::sum(num::mul(num::reshape(p, {1, 16}), num::reshape(p, {1, 16}))),
                                 num::sum(r)),
                        num::mean(num::exp(s)));
      },
      {a, b});
  (void)w;
}
