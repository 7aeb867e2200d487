#pragma once

// Masked recognition: a single learnable mask token stands in for every
// removed token. Adding ln(n_m) to the mask column's logits reproduces
// attention over n_m identical copies of that token.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "retina/autograd.hpp"
#include "retina/tensor.hpp"

namespace retina {

/// Exponential-decay keep-count sampler. Draws peak at `keep_min` and decay
/// towards `total_max`.
struct MaskSampler {
  std::size_t keep_min = 112;
  std::size_t total_max = 432;
  double lambda = 4.0;
  std::optional<std::size_t> keep_cap;
};

/// floor(keep_min + (total_max - keep_min) * exp(-lambda * u)), then capped.
std::size_t sample_keep_count(const MaskSampler& sampler, double u);
/// Expectation of the un-floored, un-capped draw over u ~ U(0,1).
double expected_keep_count(const MaskSampler& sampler);

/// One image's token sequence as the encoder sees it: kept tokens in original
/// order, optionally followed by one mask slot standing for `mask_repeats`
/// copies of the mask token.
struct TokenSequence {
  Tensor tokens;                      // [(kept + has_mask_slot) x D]
  std::vector<std::size_t> kept_indices;
  std::size_t total = 0;              // n_i (or padded length at inference)
  std::size_t mask_repeats = 0;       // n_m = total - kept
  bool has_mask_slot = true;

  std::size_t kept() const { return kept_indices.size(); }
};

struct TokenBatch {
  std::vector<TokenSequence> items;
};

/// Uniformly chooses `keep` of `total` indices without replacement; the result
/// is sorted ascending.
std::vector<std::size_t> choose_kept_indices(std::size_t total, std::size_t keep,
                                             std::mt19937_64& rng);

/// Keeps `keep` randomly chosen rows of `tokens` and appends the mask token.
TokenSequence apply_masking(const Tensor& tokens, std::size_t keep, const ParamLeaf& mask_token,
                            std::uint64_t seed);

/// Bias on the mask column: ln(n_m), or -inf when n_m == 0 (column excluded).
double mask_column_bias(std::size_t mask_repeats);

struct AttentionOutput {
  Tensor out;      // [nq x dv]
  Tensor weights;  // [nq x nk]
};

/// softmax(q kᵀ · scale + key_bias) v. `key_bias` is empty or one entry per key.
AttentionOutput attention_kernel(const Tensor& q, const Tensor& k, const Tensor& v, double scale,
                                 std::span<const double> key_bias = {});

/// Single-head attention where the last row of k/v is the mask slot standing
/// for `mask_repeats` copies. Scale is 1/sqrt(d).
Tensor scaled_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        std::size_t mask_repeats);

/// Reference path: materialises the mask key/value `mask_repeats` times and
/// runs plain attention. Test and benchmark use only.
Tensor duplication_oracle(const Tensor& q, const Tensor& k, const Tensor& v,
                          std::size_t mask_repeats);

struct BatchAdjustment {
  std::size_t batch = 0;
  double lr = 0.0;
};

/// Batch size scales with 1/keep² and the learning rate follows the batch.
BatchAdjustment adjust_batch_and_lr(std::size_t keep, std::size_t base_keep,
                                    std::size_t base_batch, double base_lr);

/// Counted FLOPs of one attention stage (logits, softmax, weighted sum) for
/// `tokens` queries and keys of width `dim`.
std::uint64_t attention_flops(std::size_t tokens, std::size_t dim);

// ---------------------------------------------------------------------------
// Differentiable multi-head attention over a stacked batch.

/// Rows [offset, offset + length) of the stacked token matrix belong to one
/// image. When `has_mask_slot`, the last of those rows is the mask slot.
struct Segment {
  std::size_t offset = 0;
  std::size_t length = 0;
  bool has_mask_slot = false;
  std::size_t mask_repeats = 0;
};

/// qkv: [N x 3D] with query, key and value blocks side by side. Each head
/// attends within its segment; returns [N x D].
ag::Var segmented_attention(ag::Var qkv, std::span<const Segment> segments, std::size_t heads);

}  // namespace retina
