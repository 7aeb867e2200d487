#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "retina/masked_attention.hpp"
#include "test_util.hpp"

namespace retina {
namespace {

using testing::random_tensor;

Tensor drop_last_row(const Tensor& t) {
  Tensor out({t.rows() - 1, t.cols()});
  std::copy_n(t.ptr(), out.size(), out.ptr());
  return out;
}

TEST(SampleKeepCount, ZeroDrawKeepsEverything) {
  EXPECT_EQ(sample_keep_count(MaskSampler{112, 432, 4.0, {}}, 0.0), 432u);
}

TEST(SampleKeepCount, UpperDrawApproachesFloor) {
  const MaskSampler s{112, 432, 4.0, {}};
  EXPECT_EQ(sample_keep_count(s, std::nextafter(1.0, 0.0)), 117u);
  EXPECT_NEAR(112 + 320 * std::exp(-4.0), 117.86, 0.01);
}

TEST(SampleKeepCount, CapBoundsTheRange) {
  const MaskSampler s{112, 432, 4.0, 345};
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t lo = 1000, hi = 0;
  for (int i = 0; i < 100000; ++i) {
    const std::size_t k = sample_keep_count(s, u(rng));
    lo = std::min(lo, k);
    hi = std::max(hi, k);
  }
  EXPECT_GE(lo, 112u);
  EXPECT_EQ(hi, 345u);
  EXPECT_EQ(sample_keep_count(s, 0.0), 345u);
}

TEST(SampleKeepCount, DrawOutsideUnitIntervalIsRejected) {
  const MaskSampler s;
  EXPECT_THROW(sample_keep_count(s, 1.0), std::invalid_argument);
  EXPECT_THROW(sample_keep_count(s, -0.1), std::invalid_argument);
}

TEST(SampleKeepCount, EmpiricalMeanMatchesClosedForm) {
  const MaskSampler s{112, 432, 4.0, {}};
  const double expected = 112.0 + 320.0 * (1.0 - std::exp(-4.0)) / 4.0;
  EXPECT_NEAR(expected_keep_count(s), expected, 1e-12);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double sum = 0.0;
  constexpr int kDraws = 1000000;
  for (int i = 0; i < kDraws; ++i) sum += static_cast<double>(sample_keep_count(s, u(rng)));
  EXPECT_LT(std::abs(sum / kDraws - expected) / expected, 0.01);
}

TEST(ApplyMasking, KeepingAllIsIdentity) {
  const Tensor x = random_tensor({6, 4}, 1);
  const ParamLeaf mask("mask", random_tensor({1, 4}, 2));
  const TokenSequence s = apply_masking(x, 6, mask, 3);
  EXPECT_EQ(s.mask_repeats, 0u);
  EXPECT_EQ(s.total, 6u);
  ASSERT_EQ(s.tokens.rows(), 7u);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(s.tokens.at(r, c), x.at(r, c));
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(s.tokens.at(6, c), mask.value[c]);
}

TEST(ApplyMasking, SingleKeptToken) {
  const TokenSequence s = apply_masking(random_tensor({3, 2}, 1), 1, ParamLeaf("m", Tensor({1, 2})), 4);
  EXPECT_EQ(s.kept(), 1u);
  EXPECT_EQ(s.mask_repeats, 2u);
  EXPECT_EQ(s.tokens.rows(), 2u);
}

TEST(ApplyMasking, SeededAndOrdered) {
  const Tensor x = random_tensor({50, 3}, 1);
  const ParamLeaf mask("m", Tensor({1, 3}));
  const TokenSequence a = apply_masking(x, 20, mask, 99), b = apply_masking(x, 20, mask, 99);
  EXPECT_EQ(a.kept_indices, b.kept_indices);
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_TRUE(std::is_sorted(a.kept_indices.begin(), a.kept_indices.end()));
  EXPECT_EQ(std::adjacent_find(a.kept_indices.begin(), a.kept_indices.end()), a.kept_indices.end());
  EXPECT_NE(a.kept_indices, apply_masking(x, 20, mask, 100).kept_indices);
  for (std::size_t r = 0; r < 20; ++r)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(a.tokens.at(r, c), x.at(a.kept_indices[r], c));
}

TEST(ApplyMasking, KeepOutOfRangeIsRejected) {
  const Tensor x = random_tensor({3, 2}, 1);
  const ParamLeaf mask("m", Tensor({1, 2}));
  EXPECT_THROW(apply_masking(x, 4, mask, 1), std::invalid_argument);
  EXPECT_THROW(apply_masking(x, 0, mask, 1), std::invalid_argument);
}

TEST(ScaledAttention, UnitRepeatMatchesPlainAttention) {
  const Tensor q = random_tensor({5, 8}, 1), k = random_tensor({5, 8}, 2), v = random_tensor({5, 8}, 3);
  const Tensor plain = attention_kernel(q, k, v, 1.0 / std::sqrt(8.0)).out;
  EXPECT_LT(max_abs_diff(scaled_attention(q, k, v, 1), plain), 1e-15);
}

TEST(ScaledAttention, ThreeRepeatsWeighQuarterAndThreeQuarters) {
  const Tensor q({1, 2}), k = random_tensor({2, 2}, 1), v = Tensor::identity(2);
  const Tensor out = scaled_attention(q, k, v, 3);
  EXPECT_NEAR(out.at(0, 0), 0.25, 1e-15);
  EXPECT_NEAR(out.at(0, 1), 0.75, 1e-15);
}

TEST(ScaledAttention, NoRepeatsExcludesTheMaskSlot) {
  const Tensor q = random_tensor({6, 8}, 1), k = random_tensor({6, 8}, 2), v = random_tensor({6, 8}, 3);
  const Tensor without =
      attention_kernel(q, drop_last_row(k), drop_last_row(v), 1.0 / std::sqrt(8.0)).out;
  EXPECT_LT(max_abs_diff(scaled_attention(q, k, v, 0), without), 1e-15);
  EXPECT_TRUE(std::isinf(mask_column_bias(0)));
  EXPECT_DOUBLE_EQ(mask_column_bias(1), 0.0);
  EXPECT_DOUBLE_EQ(mask_column_bias(5), std::log(5.0));
}

TEST(ScaledAttention, HugeRepeatCountMatchesClosedForm) {
  const Tensor q = random_tensor({3, 4}, 1), k = random_tensor({4, 4}, 2), v = random_tensor({4, 4}, 3);
  const double nm = 1e6;
  const Tensor out = scaled_attention(q, k, v, 1000000);
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<double> w(4);
    for (std::size_t j = 0; j < 4; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < 4; ++c) dot += q.at(i, c) * k.at(j, c);
      w[j] = std::exp(dot / 2.0) * (j == 3 ? nm : 1.0);
    }
    const double z = std::accumulate(w.begin(), w.end(), 0.0);
    EXPECT_LT(w[0] / z + w[1] / z + w[2] / z, 1e-5);
    for (std::size_t c = 0; c < 4; ++c) {
      double expected = 0.0;
      for (std::size_t j = 0; j < 4; ++j) expected += w[j] / z * v.at(j, c);
      EXPECT_NEAR(out.at(i, c), expected, 1e-12);
      EXPECT_NEAR(out.at(i, c), v.at(3, c), 1e-4);
    }
  }
}

TEST(DuplicationOracle, NoRepeatsIsPlainAttention) {
  const Tensor q = random_tensor({4, 8}, 1), k = random_tensor({5, 8}, 2), v = random_tensor({5, 8}, 3);
  const Tensor plain =
      attention_kernel(q, drop_last_row(k), drop_last_row(v), 1.0 / std::sqrt(8.0)).out;
  EXPECT_LT(max_abs_diff(duplication_oracle(q, k, v, 0), plain), 1e-14);
}

TEST(DuplicationOracle, AgreesWithLogCountBiasOnRandomConfigs) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> len(4, 64), dim(8, 32), reps(0, 50);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = len(rng), d = dim(rng), nm = reps(rng);
    // Entries in [-a, a] keep every scaled logit inside [-10, 10].
    const double a = std::sqrt(10.0 / std::sqrt(static_cast<double>(d)));
    const auto seed = static_cast<std::uint64_t>(trial) * 3;
    const Tensor q = random_tensor({n, d}, seed, -a, a);
    const Tensor k = random_tensor({n, d}, seed + 1, -a, a);
    const Tensor v = random_tensor({n, d}, seed + 2);
    worst = std::max(worst, max_abs_diff(scaled_attention(q, k, v, nm), duplication_oracle(q, k, v, nm)));
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(ScaledAttention, PermutingKeptRowsPermutesOutputs) {
  const std::size_t n = 9, d = 8;
  const Tensor q = random_tensor({n, d}, 1), k = random_tensor({n, d}, 2), v = random_tensor({n, d}, 3);
  std::vector<std::size_t> perm(n - 1);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(4);
  std::shuffle(perm.begin(), perm.end(), rng);
  perm.push_back(n - 1);
  auto permute = [&](const Tensor& t) {
    Tensor out(t.shape());
    for (std::size_t r = 0; r < n; ++r) std::copy_n(t.ptr() + perm[r] * d, d, out.ptr() + r * d);
    return out;
  };
  const Tensor base = scaled_attention(q, k, v, 7);
  const Tensor moved = scaled_attention(permute(q), permute(k), permute(v), 7);
  EXPECT_LT(max_abs_diff(moved, permute(base)), 1e-14);
}

TEST(AdjustBatchAndLr, BaseKeepIsIdentity) {
  const BatchAdjustment a = adjust_batch_and_lr(112, 112, 64, 0.1);
  EXPECT_EQ(a.batch, 64u);
  EXPECT_DOUBLE_EQ(a.lr, 0.1);
}

TEST(AdjustBatchAndLr, DoubleKeepQuartersBatchAndLr) {
  const BatchAdjustment a = adjust_batch_and_lr(224, 112, 64, 0.1);
  EXPECT_EQ(a.batch, 16u);
  EXPECT_DOUBLE_EQ(a.lr, 0.025);
}

TEST(AdjustBatchAndLr, BatchFloorsAtOne) {
  const BatchAdjustment a = adjust_batch_and_lr(100000, 10, 1, 0.5);
  EXPECT_EQ(a.batch, 1u);
  EXPECT_DOUBLE_EQ(a.lr, 0.5);
  EXPECT_THROW(adjust_batch_and_lr(0, 10, 1, 0.5), std::invalid_argument);
}

TEST(AttentionFlops, QuadraticInLength) {
  EXPECT_EQ(attention_flops(200, 64), 4 * attention_flops(100, 64));
  EXPECT_GE(static_cast<double>(attention_flops(432, 64)) / static_cast<double>(attention_flops(145, 64)),
            8.0);
}

}  // namespace
}  // namespace retina
