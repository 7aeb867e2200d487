#include <gtest/gtest.h>

#include <random>

#include "retina/backbone.hpp"
#include "retina/grad_check.hpp"
#include "test_util.hpp"

namespace retina {
namespace {

using testing::random_tensor;

TokenSequence plain_sequence(Tensor tokens) {
  TokenSequence s;
  s.total = tokens.rows();
  for (std::size_t i = 0; i < s.total; ++i) s.kept_indices.push_back(i);
  s.tokens = std::move(tokens);
  s.has_mask_slot = false;
  return s;
}

TokenBatch masked_batch(std::size_t dim, std::uint64_t seed) {
  const ParamLeaf mask("mask", random_tensor({1, dim}, seed));
  TokenBatch b;
  b.items.push_back(apply_masking(random_tensor({12, dim}, seed + 1), 5, mask, seed + 2));
  b.items.push_back(apply_masking(random_tensor({9, dim}, seed + 3), 9, mask, seed + 4));
  return b;
}

TEST(BackboneConfig, RejectsIndivisibleHeads) {
  EXPECT_NO_THROW((BackboneConfig{64, 4, 2, 4, 6}.validate()));
  EXPECT_THROW((BackboneConfig{10, 4, 2, 4, 6}.validate()), std::invalid_argument);
  EXPECT_THROW((BackboneConfig{0, 1, 2, 4, 6}.validate()), std::invalid_argument);
}

TEST(EncoderBlock, ZeroWeightsAreIdentity) {
  const BackboneConfig cfg{16, 4, 1, 4, 6};
  std::mt19937_64 rng(1);
  BlockParams p = make_block(cfg, 0, rng);
  for (ParamLeaf* leaf : p.leaves()) leaf->value.fill(0.0);
  const TokenBatch in = masked_batch(16, 3);
  const TokenBatch out = encoder_block(in, p, cfg.heads);
  ASSERT_EQ(out.items.size(), in.items.size());
  for (std::size_t i = 0; i < in.items.size(); ++i) EXPECT_EQ(out.items[i].tokens, in.items[i].tokens);
}

TEST(EncoderBlock, EmptyMaskSlotMatchesNoSlot) {
  const BackboneConfig cfg{16, 4, 1, 4, 6};
  std::mt19937_64 rng(2);
  BlockParams p = make_block(cfg, 0, rng);
  const Tensor x = random_tensor({7, 16}, 4);
  const ParamLeaf mask("mask", random_tensor({1, 16}, 5));

  TokenBatch with_slot;
  with_slot.items.push_back(apply_masking(x, 7, mask, 6));
  TokenBatch without;
  without.items.push_back(plain_sequence(x));

  const Tensor a = encoder_block(with_slot, p, cfg.heads).items[0].tokens;
  const Tensor b = encoder_block(without, p, cfg.heads).items[0].tokens;
  for (std::size_t r = 0; r < 7; ++r)
    for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(a.at(r, c), b.at(r, c));
}

TEST(EncoderBlock, ImagesDoNotInteract) {
  const BackboneConfig cfg{16, 2, 1, 4, 6};
  std::mt19937_64 rng(3);
  BlockParams p = make_block(cfg, 0, rng);
  const TokenBatch both = masked_batch(16, 7);
  const TokenBatch out = encoder_block(both, p, cfg.heads);
  for (std::size_t i = 0; i < 2; ++i) {
    TokenBatch alone;
    alone.items.push_back(both.items[i]);
    EXPECT_LT(max_abs_diff(encoder_block(alone, p, cfg.heads).items[0].tokens, out.items[i].tokens),
              1e-14);
  }
}

TEST(EncoderBlock, GradientsMatchFiniteDifferences) {
  const BackboneConfig cfg{8, 2, 1, 2, 6};
  std::mt19937_64 rng(4);
  BlockParams p = make_block(cfg, 0, rng);
  for (ParamLeaf* leaf : p.leaves())
    for (double& v : leaf->value.data()) v += std::uniform_real_distribution<double>(-0.1, 0.1)(rng);
  const TokenBatch batch = masked_batch(8, 11);
  const auto segs = segments_of(batch);
  const Tensor x = stack_tokens(batch);
  const Tensor target = random_tensor(x.shape(), 12);
  const auto report = grad_check(
      [&](ag::Tape& tape) {
        ag::Var y = encoder_block(tape.constant(x), segs, bind(tape, p), cfg.heads);
        return ag::sum(ag::mul(y, tape.constant(target)));
      },
      p.leaves());
  EXPECT_LT(report.max_rel_error, 1e-4) << report.worst_leaf << '[' << report.worst_index << ']';
  EXPECT_GT(report.entries_checked, 0u);
}

TEST(Forward, DepthZeroIsFinalLayerNorm) {
  const BackboneConfig cfg{16, 4, 0, 4, 6};
  std::mt19937_64 rng(5);
  BackboneParams params = make_backbone(cfg, rng);
  params.final_gain.value = random_tensor({1, 16}, 6);
  params.final_shift.value = random_tensor({1, 16}, 7);
  const TokenBatch batch = masked_batch(16, 8);
  const auto out = forward(batch, cfg, params);
  for (std::size_t i = 0; i < batch.items.size(); ++i) {
    const Tensor expected =
        layer_norm(batch.items[i].tokens, params.final_gain.value, params.final_shift.value, 1e-6);
    EXPECT_LT(max_abs_diff(out[i], expected), 1e-14);
  }
}

TEST(Forward, ZeroOutputProjectionsLeaveLayerNormedInput) {
  const BackboneConfig cfg{16, 4, 3, 4, 6};
  std::mt19937_64 rng(6);
  BackboneParams params = make_backbone(cfg, rng);
  for (BlockParams& b : params.blocks) {
    for (ParamLeaf* leaf : {&b.out_w, &b.out_b, &b.ff2_w, &b.ff2_b}) leaf->value.fill(0.0);
  }
  const TokenBatch batch = masked_batch(16, 9);
  const auto out = forward(batch, cfg, params);
  for (std::size_t i = 0; i < batch.items.size(); ++i) {
    const Tensor expected =
        layer_norm(batch.items[i].tokens, params.final_gain.value, params.final_shift.value, 1e-6);
    EXPECT_LT(max_abs_diff(out[i], expected), 1e-12);
  }
}

TEST(Forward, DeterministicAndShaped) {
  std::mt19937_64 cfg_rng(7);
  for (int trial = 0; trial < 8; ++trial) {
    const std::size_t heads = 1 + cfg_rng() % 4;
    const BackboneConfig cfg{heads * (2 + cfg_rng() % 4), heads, 1 + cfg_rng() % 3, 2, 6};
    std::mt19937_64 rng(trial);
    BackboneParams params = make_backbone(cfg, rng);
    const TokenBatch batch = masked_batch(cfg.dim, 20 + static_cast<std::uint64_t>(trial));
    const auto a = forward(batch, cfg, params);
    const auto b = forward(batch, cfg, params);
    ASSERT_EQ(a.size(), batch.items.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].rows(), batch.items[i].kept() + 1);
      EXPECT_EQ(a[i].cols(), cfg.dim);
      EXPECT_EQ(a[i], b[i]);
    }
  }
}

PreparedImage grid_image(std::size_t n) {
  PreparedImage img;
  img.centers = Tensor({n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    img.centers.at(i, 0) = (static_cast<double>(i % 4) + 0.5) / 4.0;
    img.centers.at(i, 1) = (static_cast<double>(i / 4) + 0.5) / 4.0;
    img.levels.push_back(0);
    img.cells.emplace_back(i / 4, i % 4);
  }
  return img;
}

TEST(ScatterToMap, NoMaskingCoversEveryCentre) {
  const PreparedImage img = grid_image(16);
  const Tensor feats = random_tensor({17, 3}, 1);
  std::vector<std::size_t> kept(16);
  for (std::size_t i = 0; i < 16; ++i) kept[i] = i;
  const SparseFeatureMap m = scatter_to_map(feats, img, kept);
  ASSERT_EQ(m.size(), 16u);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_EQ(m.lookup(img.centers.at(i, 0), img.centers.at(i, 1)), std::optional<std::size_t>{i});
  }
}

TEST(ScatterToMap, SingleKeptToken) {
  const PreparedImage img = grid_image(16);
  const Tensor feats = random_tensor({2, 3}, 2);
  const std::vector<std::size_t> kept{9};
  const SparseFeatureMap m = scatter_to_map(feats, img, kept);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m.patch_index[0], 9u);
  EXPECT_FALSE(m.lookup(img.centers.at(0, 0), img.centers.at(0, 1)).has_value());
}

TEST(ScatterToMap, LookupReturnsTheKeptToken) {
  const PreparedImage img = grid_image(16);
  const std::vector<std::size_t> kept{1, 4, 6, 13};
  const Tensor feats = random_tensor({5, 3}, 3);
  const SparseFeatureMap m = scatter_to_map(feats, img, kept);
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const auto hit = m.lookup(img.centers.at(kept[i], 0), img.centers.at(kept[i], 1));
    ASSERT_TRUE(hit.has_value());
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(m.values.at(*hit, c), feats.at(i, c));
  }
}

TEST(ScatterToMap, MisalignedIndicesAreRejected) {
  const PreparedImage img = grid_image(16);
  const Tensor feats = random_tensor({4, 3}, 4);
  EXPECT_THROW(scatter_to_map(feats, img, std::vector<std::size_t>{3, 2}), std::runtime_error);
  EXPECT_THROW(scatter_to_map(feats, img, std::vector<std::size_t>{1, 16}), std::runtime_error);
  EXPECT_THROW(scatter_to_map(feats, img, std::vector<std::size_t>{1, 2, 3, 4, 5}), std::runtime_error);
}

}  // namespace
}  // namespace retina
