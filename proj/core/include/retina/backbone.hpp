#pragma once

// Pre-norm transformer encoder over stacked per-image token segments.

#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "retina/autograd.hpp"
#include "retina/masked_attention.hpp"
#include "retina/retina_patch.hpp"
#include "retina/tensor.hpp"

namespace retina {

struct BackboneConfig {
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t depth = 4;
  std::size_t ffn_ratio = 4;
  std::size_t grid = 6;

  void validate() const;
};

struct BlockParams {
  ParamLeaf ln1_gain, ln1_shift;
  ParamLeaf qkv_w, qkv_b;
  ParamLeaf out_w, out_b;
  ParamLeaf ln2_gain, ln2_shift;
  ParamLeaf ff1_w, ff1_b;
  ParamLeaf ff2_w, ff2_b;

  std::vector<ParamLeaf*> leaves();
};

/// Random init: normal weights scaled by 1/sqrt(fan_in), zero biases, unit gains.
BlockParams make_block(const BackboneConfig& cfg, std::size_t index, std::mt19937_64& rng);

struct BlockVars {
  ag::Var ln1_gain, ln1_shift, qkv_w, qkv_b, out_w, out_b;
  ag::Var ln2_gain, ln2_shift, ff1_w, ff1_b, ff2_w, ff2_b;
};

BlockVars bind(ag::Tape& tape, BlockParams& p);

/// x + MHA(LN(x)), then + FFN(LN(·)). x is the stacked [N x D] token matrix.
ag::Var encoder_block(ag::Var x, std::span<const Segment> segments, const BlockVars& p,
                      std::size_t heads);

/// Segment table for a token batch stacked in item order.
std::vector<Segment> segments_of(const TokenBatch& batch);
Tensor stack_tokens(const TokenBatch& batch);

/// Pure convenience wrappers (build a private tape).
TokenBatch encoder_block(const TokenBatch& batch, BlockParams& p, std::size_t heads);

struct BackboneParams {
  std::vector<BlockParams> blocks;
  ParamLeaf final_gain, final_shift;

  std::vector<ParamLeaf*> leaves();
};

BackboneParams make_backbone(const BackboneConfig& cfg, std::mt19937_64& rng);

/// Stack of blocks plus final layer norm. The mask slot stays in the output.
ag::Var backbone_forward(ag::Var x, std::span<const Segment> segments, const BackboneConfig& cfg,
                         BackboneParams& params);
/// One output tensor per batch item, [(kept + slot) x D].
std::vector<Tensor> forward(const TokenBatch& batch, const BackboneConfig& cfg,
                            BackboneParams& params);

/// Backbone output for one image keyed by kept-patch centre.
struct SparseFeatureMap {
  Tensor centers;                       // [n x 2] normalised
  Tensor values;                        // [n x D]
  std::vector<std::size_t> patch_index; // position in the patch set

  std::size_t size() const { return patch_index.size(); }
  std::optional<std::size_t> lookup(double x, double y, double tol = 1e-9) const;
};

/// Drops the mask slot and tags each kept token with its patch centre.
SparseFeatureMap scatter_to_map(const Tensor& features, const PreparedImage& image,
                                std::span<const std::size_t> kept);

}  // namespace retina
