#pragma once

// Keypoint-anchored attention pooling. Queries are position-table samples at
// keypoints plus learned offsets; keys are the table at kept-patch centres and
// values are backbone tokens. A projected branch learns the pooling extent, an
// unprojected branch stays peaked at the keypoint.

#include <cstddef>
#include <iosfwd>
#include <random>
#include <span>
#include <vector>

#include "retina/autograd.hpp"
#include "retina/backbone.hpp"
#include "retina/geometry.hpp"
#include "retina/retina_patch.hpp"
#include "retina/tensor.hpp"

namespace retina {

struct HeadConfig {
  std::size_t channels = 64;   // = backbone dim
  std::size_t repeats = 4;     // offsets per keypoint
  std::size_t keypoints = kNumKeypoints;
  std::size_t attn_dim = 32;   // projected-branch width
  std::size_t embed_dim = 64;
  std::size_t hidden = 256;
  std::size_t datasets = 2;

  std::size_t query_rows() const { return repeats * keypoints; }
  std::size_t part_features() const { return 2 * query_rows(); }
};

/// Dataset selector for part gating; `kAverageDataset` averages the rows.
inline constexpr int kAverageDataset = -1;

struct HeadParams {
  ParamLeaf offsets;       // [repeats*keypoints x C], row = keypoint*repeats + repeat
  ParamLeaf w_q, w_k;      // [C x attn_dim]
  ParamLeaf w_v;           // [C x C]
  ParamLeaf part_weights;  // [datasets x keypoints]
  ParamLeaf mlp_w1, mlp_b1, mlp_w2, mlp_b2;

  std::vector<ParamLeaf*> leaves();
};

HeadParams make_head(const HeadConfig& cfg, std::mt19937_64& rng);

struct QuerySet {
  Tensor queries;             // [repeats*keypoints x C]
  std::vector<bool> visible;  // per keypoint
};

/// Keypoints in normalised image coordinates; (-1,-1) marks invisible.
KeypointSet normalize_keypoints(const KeypointSet& pixels, double image_w, double image_h);

/// Table samples at the keypoints, repeated, plus offsets. Invisible rows are zero.
QuerySet build_queries(const PositionField& field, const KeypointSet& normalized,
                       const HeadParams& params, const HeadConfig& cfg);

struct PartFeatures {
  Tensor part;                // [repeats*keypoints x C]
  Tensor peak;                // [repeats*keypoints x C]
  std::vector<bool> visible;  // per keypoint
};

PartFeatures part_attention(const QuerySet& q, const PositionField& field,
                            const SparseFeatureMap& features, const HeadParams& params,
                            const HeadConfig& cfg);

/// Gated, concatenated part features through the MLP; L2-normalised [E].
Tensor gate_and_embed(const PartFeatures& pf, int dataset, HeadParams& params,
                      const HeadConfig& cfg);

/// Zeroes every row (both branches, all repeats) of the listed keypoints.
PartFeatures part_zeroing(const PartFeatures& pf, std::span<const std::size_t> zero_set,
                          const HeadConfig& cfg);

/// Projected-branch attention weights for export:
/// `keypoint,repeat,level,patch_row,patch_col,weight`.
void write_attention_csv(std::ostream& os, const QuerySet& q, const PositionField& field,
                         const SparseFeatureMap& features, const PreparedImage& image,
                         const HeadParams& params, const HeadConfig& cfg);

// ---------------------------------------------------------------------------
// Differentiable path.

struct HeadVars {
  ag::Var offsets, w_q, w_k, w_v, part_weights, mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

HeadVars bind(ag::Tape& tape, HeadParams& p);

/// Keypoint table samples repeated to [repeats*keypoints x C]; invisible rows zero.
Tensor keypoint_positions(const Tensor& table, const KeypointSet& normalized,
                          const HeadConfig& cfg, std::vector<bool>* visible = nullptr);

struct PartVars {
  ag::Var part, peak;
  std::vector<bool> visible;
};

/// keys: table samples at kept-patch centres; values: matching backbone rows.
PartVars part_attention(const Tensor& keypoint_pe, std::vector<bool> visible, const Tensor& keys,
                        ag::Var values, const HeadVars& h, const HeadConfig& cfg);

/// Row gating by sigmoid(part_weights[dataset]) (or of the row mean).
ag::Var gate_parts(ag::Var features, ag::Var part_weights, int dataset, std::size_t repeats);

/// Batched gate → concat → flatten → MLP → L2 normalise; one row per item.
ag::Var embed(std::span<const PartVars> items, std::span<const int> datasets, const HeadVars& h,
              const HeadConfig& cfg);

/// Plain single-head attention softmax(q kᵀ · scale) v.
ag::Var attention(ag::Var q, ag::Var k, ag::Var v, double scale);

}  // namespace retina
