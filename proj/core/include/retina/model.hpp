#pragma once

// Whole recognition model: patch projection and region-sampled positions,
// masked encoder, semantic head and the margin classifier.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "retina/autograd.hpp"
#include "retina/backbone.hpp"
#include "retina/geometry.hpp"
#include "retina/loss.hpp"
#include "retina/retina_patch.hpp"
#include "retina/semantic_head.hpp"
#include "retina/tensor.hpp"

namespace retina {

struct ModelConfig {
  std::size_t image_size = 96;
  std::size_t image_channels = 3;
  std::size_t levels = 3;
  double roi_padding = 0.3;
  bool torso_includes_hips = false;
  /// Patch pixels enter the projection as (x - pixel_mean) / pixel_std.
  double pixel_mean = 0.5;
  double pixel_std = 0.25;
  BackboneConfig backbone;
  HeadConfig head;
  std::size_t classes = 32;
  MarginLoss loss;

  void validate() const;
  RoiConfig roi_config() const;
  std::size_t patch_size() const { return image_size / backbone.grid; }
  std::size_t patch_features() const { return image_channels * patch_size() * patch_size(); }
  /// Upper bound on tokens per image (every ROI grid fully present).
  std::size_t max_tokens() const { return levels * backbone.grid * backbone.grid; }
};

struct ModelParams {
  ParamLeaf patch_proj;  // [C*P*P x D]
  PositionField position;
  ParamLeaf mask_token;  // [1 x D]
  BackboneParams backbone;
  HeadParams head;
  ParamLeaf classifier;  // [classes x E]

  std::vector<ParamLeaf*> leaves();
};

ModelParams make_model(const ModelConfig& cfg, std::uint64_t seed);

/// One image reduced to what the model consumes; independent of learnable state.
struct Example {
  PreparedImage image;
  Tensor keypoint_pe;          // [repeats*keypoints x D]
  std::vector<bool> visible;   // per keypoint
  std::size_t label = 0;
  int dataset = 0;
};

Example prepare_example(const Tensor& image, const KeypointSet& pixel_keypoints, std::size_t label,
                        int dataset, const ModelConfig& cfg, const Tensor& pe_table);

/// Which tokens of an example enter the encoder.
struct ModelInput {
  const Example* example = nullptr;
  std::vector<std::size_t> kept;  // ascending patch indices
  bool mask_slot = true;
  std::size_t mask_repeats = 0;
};

/// Masked training input: kept tokens plus a slot standing for the rest.
ModelInput masked_input(const Example& ex, std::vector<std::size_t> kept, bool mask_slot);
/// Unmasked inference input padded to `pad_to` tokens through the mask slot.
ModelInput padded_input(const Example& ex, std::size_t pad_to);

/// Encoder plus part attention for every input, stacked on one tape.
std::vector<PartVars> forward_parts(ag::Tape& tape, ModelParams& params, const ModelConfig& cfg,
                                    std::span<const ModelInput> inputs, const HeadVars& head);

/// Mean margin loss over the batch; dataset gates follow each example's tag.
ag::Var training_loss(ag::Tape& tape, ModelParams& params, const ModelConfig& cfg,
                      std::span<const ModelInput> inputs);

/// Unmasked part features, processed in chunks of `chunk` images.
std::vector<PartFeatures> infer_parts(ModelParams& params, const ModelConfig& cfg,
                                      std::span<const Example> examples, std::size_t chunk);

/// Gated MLP embeddings [B x E] of part features, one row each.
Tensor embed_parts(ModelParams& params, const ModelConfig& cfg,
                   std::span<const PartFeatures> parts, int dataset = kAverageDataset);

}  // namespace retina
