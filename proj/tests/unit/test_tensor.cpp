#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "retina/tensor.hpp"
#include "test_util.hpp"

namespace retina {
namespace {

using testing::naive_matmul;
using testing::random_tensor;

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Tensor a = random_tensor({3, 5}, 1);
  EXPECT_EQ(matmul(Tensor::identity(3), a), a);
}

TEST(Matmul, HandComputedProduct) {
  const Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  const Tensor b = Tensor::matrix(2, 1, {0, 1});
  EXPECT_EQ(matmul(a, b), Tensor::matrix(2, 1, {2, 4}));
}

TEST(Matmul, ZeroMatrixGivesZero) {
  const Tensor a = random_tensor({4, 3}, 2);
  EXPECT_EQ(matmul(a, Tensor({3, 6})), Tensor({4, 6}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor({2, 3}), Tensor({4, 5}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x5]"), std::string::npos) << msg;
  }
}

// Tile and panel boundaries of the blocked kernel sit at multiples of 4 rows
// and 4/12 columns; odd sizes exercise every tail path.
TEST(Matmul, BitIdenticalToAscendingTripleLoop) {
  const std::size_t sizes[][3] = {{1, 1, 1}, {5, 7, 13}, {4, 300, 12}, {9, 1100, 29}, {17, 64, 3}};
  std::uint64_t seed = 10;
  for (const auto& s : sizes) {
    const Tensor a = random_tensor({s[0], s[1]}, ++seed), b = random_tensor({s[1], s[2]}, ++seed);
    EXPECT_EQ(matmul(a, b), naive_matmul(a, b)) << s[0] << "x" << s[1] << "x" << s[2];
  }
}

TEST(Matmul, TransposedVariantsMatchExplicitTranspose) {
  const Tensor a = random_tensor({6, 9}, 3), b = random_tensor({7, 9}, 4), c = random_tensor({6, 5}, 5);
  EXPECT_EQ(matmul_nt(a, b), naive_matmul(a, transpose(b)));
  EXPECT_EQ(matmul_tn(a, c), naive_matmul(transpose(a), c));
}

TEST(Matmul, RightIdentityAndDistributivityOnRandomShapes) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 20; ++t) {
    const std::size_t m = 1 + rng() % 9, k = 1 + rng() % 9, n = 1 + rng() % 9;
    const Tensor a = random_tensor({m, k}, rng()), b = random_tensor({k, n}, rng()),
                 c = random_tensor({k, n}, rng());
    EXPECT_LT(max_abs_diff(matmul(a, Tensor::identity(k)), a), 1e-12);
    EXPECT_LT(max_abs_diff(matmul(a, add(b, c)), add(matmul(a, b), matmul(a, c))), 1e-12);
  }
}

TEST(SoftmaxWithBias, SymmetricLogitsSplitEvenly) {
  const Tensor p = softmax_with_bias(Tensor::matrix(1, 2, {0, 0}), Tensor::matrix(1, 2, {0, 0}));
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(SoftmaxWithBias, LogCountBiasActsAsThreeCopies) {
  const Tensor p = softmax_with_bias(Tensor::matrix(1, 2, {0, 0}), Tensor::matrix(1, 2, {0, std::log(3.0)}));
  EXPECT_NEAR(p[0], 0.25, 1e-15);
  EXPECT_NEAR(p[1], 0.75, 1e-15);
}

TEST(SoftmaxWithBias, LargeLogitsDoNotOverflow) {
  const Tensor p = softmax_with_bias(Tensor::matrix(1, 2, {1000, 1000}));
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(SoftmaxWithBias, NegativeInfinityBiasExcludesColumn) {
  const double inf = std::numeric_limits<double>::infinity();
  const Tensor p = softmax_with_bias(Tensor::matrix(1, 3, {1, 2, 3}), Tensor::matrix(1, 3, {0, 0, -inf}));
  EXPECT_EQ(p[2], 0.0);
  EXPECT_NEAR(p[0] + p[1], 1.0, 1e-15);
}

TEST(SoftmaxWithBias, RowsSumToOneOnRandomInputs) {
  const Tensor logits = random_tensor({50, 17}, 9, -50.0, 50.0);
  const Tensor bias = random_tensor({1, 17}, 10, -50.0, 50.0);
  const Tensor p = softmax_with_bias(logits, bias);
  ASSERT_TRUE(p.all_finite());
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double s = 0.0;
    for (double v : p.row_span(r)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(SoftmaxWithBias, RejectsUnbroadcastableBias) {
  EXPECT_THROW(softmax_with_bias(Tensor({2, 3}), Tensor({1, 4})), DimensionError);
}

TEST(LayerNorm, ConstantRowBecomesZero) {
  const Tensor y = layer_norm(Tensor({1, 4}, 3.0), Tensor({1, 4}, 1.0), Tensor({1, 4}), 1e-6);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, UnitVarianceRowIsUnchanged) {
  const Tensor y = layer_norm(Tensor::matrix(1, 2, {-1, 1}), Tensor({1, 2}, 1.0), Tensor({1, 2}), 1e-300);
  EXPECT_NEAR(y[0], -1.0, 1e-15);
  EXPECT_NEAR(y[1], 1.0, 1e-15);
}

TEST(LayerNorm, ZeroGainGivesShift) {
  const Tensor shift = Tensor::matrix(1, 3, {0.5, -2, 7});
  const Tensor y = layer_norm(random_tensor({4, 3}, 11), Tensor({1, 3}), shift, 1e-6);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(y.at(r, c), shift[c]);
}

TEST(LayerNorm, RowsHaveZeroMeanUnitVarianceBeforeAffine) {
  const Tensor y = layer_norm(random_tensor({6, 32}, 12, -5, 5), Tensor({1, 32}, 1.0), Tensor({1, 32}), 1e-12);
  for (std::size_t r = 0; r < 6; ++r) {
    double m = 0.0, v = 0.0;
    for (double x : y.row_span(r)) m += x / 32.0;
    for (double x : y.row_span(r)) v += (x - m) * (x - m) / 32.0;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-9);
  }
}

// Independent scalar bilinear formula on the u·(W−1) mapping.
double bilinear_oracle(const Tensor& f, std::size_t c, double x, double y) {
  const double px = x * static_cast<double>(f.dim(2) - 1), py = y * static_cast<double>(f.dim(1) - 1);
  const auto x0 = static_cast<std::size_t>(std::floor(px)), y0 = static_cast<std::size_t>(std::floor(py));
  const std::size_t x1 = std::min(x0 + 1, f.dim(2) - 1), y1 = std::min(y0 + 1, f.dim(1) - 1);
  const double ax = px - static_cast<double>(x0), ay = py - static_cast<double>(y0);
  return (1 - ax) * (1 - ay) * f.at(c, y0, x0) + ax * (1 - ay) * f.at(c, y0, x1) +
         (1 - ax) * ay * f.at(c, y1, x0) + ax * ay * f.at(c, y1, x1);
}

TEST(BilinearSample, GridNodeReturnsFieldValue) {
  const Tensor f = random_tensor({3, 4, 5}, 13);
  const Tensor s = bilinear_sample(f, Tensor::matrix(1, 2, {2.0 / 4.0, 1.0 / 3.0}));
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(s.at(0, c), f.at(c, 1, 2));
}

TEST(BilinearSample, MidpointAveragesNeighbours) {
  const Tensor f({1, 1, 2}, std::vector<double>{2, 4});
  EXPECT_DOUBLE_EQ(bilinear_sample(f, Tensor::matrix(1, 2, {0.5, 0.0}))[0], 3.0);
}

TEST(BilinearSample, QuarterPointOnTwoByTwoField) {
  const Tensor f({1, 2, 2}, std::vector<double>{0, 1, 2, 3});
  const double got = bilinear_sample(f, Tensor::matrix(1, 2, {0.25, 0.25}))[0];
  EXPECT_NEAR(got, bilinear_oracle(f, 0, 0.25, 0.25), 1e-15);
  EXPECT_NEAR(got, 0.75, 1e-15);
}

TEST(BilinearSample, RandomPointsMatchScalarOracle) {
  const Tensor f = random_tensor({2, 5, 7}, 14);
  const Tensor pts = random_tensor({40, 2}, 15, 0.0, 1.0);
  const Tensor s = bilinear_sample(f, pts);
  for (std::size_t i = 0; i < 40; ++i)
    for (std::size_t c = 0; c < 2; ++c)
      EXPECT_NEAR(s.at(i, c), bilinear_oracle(f, c, pts.at(i, 0), pts.at(i, 1)), 1e-14);
}

TEST(BilinearSample, ReconstructsFieldAtAllNodes) {
  const std::size_t H = 6, W = 9;
  const Tensor f = random_tensor({4, H, W}, 16);
  Tensor pts({H * W, 2});
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      pts.at(i * W + j, 0) = static_cast<double>(j) / static_cast<double>(W - 1);
      pts.at(i * W + j, 1) = static_cast<double>(i) / static_cast<double>(H - 1);
    }
  const Tensor s = bilinear_sample(f, pts);
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(s.at(i * W + j, c), f.at(c, i, j), 1e-14);
}

TEST(BilinearSample, OutOfRangePointsAreClamped) {
  const Tensor f = random_tensor({1, 3, 3}, 17);
  const Tensor s = bilinear_sample(f, Tensor::matrix(2, 2, {-0.5, -2.0, 1.5, 3.0}));
  EXPECT_EQ(s.at(0, 0), f.at(0, 0, 0));
  EXPECT_EQ(s.at(1, 0), f.at(0, 2, 2));
}

TEST(BilinearSample, EmptyPointListGivesEmptyOutput) {
  const Tensor s = bilinear_sample(random_tensor({2, 3, 3}, 18), Tensor({0, 2}));
  EXPECT_EQ(s.size(), 0u);
}

TEST(ParamLeaf, GradientMatchesValueShapeAndResets) {
  ParamLeaf p("w", random_tensor({3, 4}, 19));
  EXPECT_EQ(p.grad.shape(), p.value.shape());
  p.grad.fill(2.0);
  p.zero_grad();
  for (double v : p.grad.data()) EXPECT_EQ(v, 0.0);
}

TEST(Tensor, ReshapeRejectsWrongElementCount) {
  EXPECT_THROW(Tensor({2, 3}).reshaped({4, 2}), DimensionError);
  EXPECT_EQ(Tensor({2, 3}).reshaped({3, 2}).shape(), (Shape{3, 2}));
}

}  // namespace
}  // namespace retina
