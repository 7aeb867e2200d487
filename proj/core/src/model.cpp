#include "retina/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace retina {

void ModelConfig::validate() const {
  backbone.validate();
  if (image_size == 0 || image_channels == 0 || levels == 0 || classes == 0) {
    throw std::invalid_argument("model config: sizes must be positive");
  }
  if (!(pixel_std > 0.0) || !std::isfinite(pixel_mean)) {
    throw std::invalid_argument("model config: pixel_std must be positive");
  }
  if (image_size % backbone.grid != 0) {
    throw std::invalid_argument("model config: image size " + std::to_string(image_size) +
                                " not divisible by grid " + std::to_string(backbone.grid));
  }
  if (head.channels != backbone.dim) {
    throw std::invalid_argument("model config: head channels " + std::to_string(head.channels) +
                                " differ from backbone dim " + std::to_string(backbone.dim));
  }
  if (backbone.dim % 4 != 0) {
    throw std::invalid_argument("model config: dim must be a multiple of 4 for the position table");
  }
  loss.validate();
}

RoiConfig ModelConfig::roi_config() const {
  RoiConfig r;
  r.image_w = static_cast<double>(image_size);
  r.image_h = static_cast<double>(image_size);
  r.grid_rows = backbone.grid;
  r.grid_cols = backbone.grid;
  r.levels = levels;
  r.padding = roi_padding;
  r.torso_includes_hips = torso_includes_hips;
  return r;
}

std::vector<ParamLeaf*> ModelParams::leaves() {
  std::vector<ParamLeaf*> out{&patch_proj, &position.level_offsets, &mask_token};
  for (auto* l : backbone.leaves()) out.push_back(l);
  for (auto* l : head.leaves()) out.push_back(l);
  out.push_back(&classifier);
  return out;
}

ModelParams make_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const std::size_t D = cfg.backbone.dim;
  const std::size_t F = cfg.patch_features();
  ModelParams p;
  std::normal_distribution<double> proj(0.0, 1.0 / std::sqrt(static_cast<double>(F)));
  p.patch_proj = ParamLeaf("patch.proj", Tensor({F, D}));
  for (auto& v : p.patch_proj.value.data()) v = proj(rng);
  p.position = make_position_field(D, cfg.backbone.grid, cfg.backbone.grid, cfg.levels);
  std::normal_distribution<double> small(0.0, 0.02);
  p.mask_token = ParamLeaf("mask_token", Tensor({1, D}));
  for (auto& v : p.mask_token.value.data()) v = small(rng);
  p.backbone = make_backbone(cfg.backbone, rng);
  p.head = make_head(cfg.head, rng);
  std::normal_distribution<double> unit(0.0, 1.0);
  p.classifier = ParamLeaf("classifier", Tensor({cfg.classes, cfg.head.embed_dim}));
  for (auto& v : p.classifier.value.data()) v = unit(rng);
  return p;
}

Example prepare_example(const Tensor& image, const KeypointSet& pixel_keypoints, std::size_t label,
                        int dataset, const ModelConfig& cfg, const Tensor& pe_table) {
  const RoiConfig rc = cfg.roi_config();
  if (image.rank() != 3 || image.dim(0) != cfg.image_channels || image.dim(1) != cfg.image_size ||
      image.dim(2) != cfg.image_size) {
    throw DimensionError("prepare_example: image " + shape_str(image.shape()) +
                         " does not match the model input");
  }
  Example ex;
  ex.image = prepare_image(image, build_roi_set(pixel_keypoints, rc), pe_table);
  for (double& v : ex.image.pixels.data()) v = (v - cfg.pixel_mean) / cfg.pixel_std;
  const KeypointSet norm = normalize_keypoints(pixel_keypoints, rc.image_w, rc.image_h);
  ex.keypoint_pe = keypoint_positions(pe_table, norm, cfg.head, &ex.visible);
  ex.label = label;
  ex.dataset = dataset;
  return ex;
}

ModelInput masked_input(const Example& ex, std::vector<std::size_t> kept, bool mask_slot) {
  const std::size_t n = ex.image.count();
  if (kept.empty() || kept.size() > n) {
    throw std::invalid_argument("masked_input: keep " + std::to_string(kept.size()) + " of " +
                                std::to_string(n) + " tokens");
  }
  ModelInput in;
  in.example = &ex;
  in.mask_repeats = n - kept.size();
  in.kept = std::move(kept);
  in.mask_slot = mask_slot;
  return in;
}

ModelInput padded_input(const Example& ex, std::size_t pad_to) {
  const std::size_t n = ex.image.count();
  if (pad_to < n) {
    throw std::invalid_argument("padded_input: pad length " + std::to_string(pad_to) +
                                " below token count " + std::to_string(n));
  }
  ModelInput in;
  in.example = &ex;
  in.kept.resize(n);
  for (std::size_t i = 0; i < n; ++i) in.kept[i] = i;
  in.mask_slot = true;
  in.mask_repeats = pad_to - n;
  return in;
}

std::vector<PartVars> forward_parts(ag::Tape& tape, ModelParams& params, const ModelConfig& cfg,
                                    std::span<const ModelInput> inputs, const HeadVars& head) {
  if (inputs.empty()) throw std::invalid_argument("forward_parts: empty batch");
  const std::size_t F = cfg.patch_features();
  const std::size_t D = cfg.backbone.dim;
  std::size_t total = 0;
  for (const auto& in : inputs) total += in.kept.size();

  Tensor pixels({total, F});
  Tensor positions({total, D});
  std::vector<std::size_t> levels;
  levels.reserve(total);
  std::size_t row = 0;
  for (const auto& in : inputs) {
    const PreparedImage& img = in.example->image;
    if (img.pixels.cols() != F || img.positions.cols() != D) {
      throw DimensionError("forward_parts: prepared image does not match the model config");
    }
    for (std::size_t k : in.kept) {
      std::copy_n(img.pixels.ptr() + k * F, F, pixels.ptr() + row * F);
      std::copy_n(img.positions.ptr() + k * D, D, positions.ptr() + row * D);
      levels.push_back(static_cast<std::size_t>(img.levels[k]));
      ++row;
    }
  }

  ag::Var tokens = ag::matmul(tape.constant(std::move(pixels)), tape.param(params.patch_proj));
  tokens = ag::add(tokens, tape.constant(positions));
  tokens = ag::add(tokens, ag::gather_rows(tape.param(params.position.level_offsets), levels));

  // Interleave one mask slot after each image's kept tokens.
  std::vector<Segment> segments;
  std::vector<std::size_t> order;
  std::size_t src = 0;
  bool any_slot = false;
  for (const auto& in : inputs) {
    Segment s;
    s.offset = order.size();
    for (std::size_t i = 0; i < in.kept.size(); ++i) order.push_back(src++);
    if (in.mask_slot) {
      order.push_back(total);
      any_slot = true;
    }
    s.length = order.size() - s.offset;
    s.has_mask_slot = in.mask_slot;
    s.mask_repeats = in.mask_repeats;
    segments.push_back(s);
  }
  ag::Var x = tokens;
  if (any_slot) {
    const std::array<ag::Var, 2> both{tokens, tape.param(params.mask_token)};
    x = ag::gather_rows(ag::concat_rows(both), order);
  }

  ag::Var y = backbone_forward(x, segments, cfg.backbone, params.backbone);

  std::vector<PartVars> out;
  out.reserve(inputs.size());
  std::size_t p = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& in = inputs[i];
    const std::size_t k = in.kept.size();
    std::vector<std::size_t> rows(k);
    for (std::size_t j = 0; j < k; ++j) rows[j] = segments[i].offset + j;
    Tensor keys({k, D});
    std::copy_n(positions.ptr() + p * D, k * D, keys.ptr());
    p += k;
    out.push_back(part_attention(in.example->keypoint_pe, in.example->visible, keys,
                                 ag::gather_rows(y, rows), head, cfg.head));
  }
  return out;
}

ag::Var training_loss(ag::Tape& tape, ModelParams& params, const ModelConfig& cfg,
                      std::span<const ModelInput> inputs) {
  const HeadVars head = bind(tape, params.head);
  const std::vector<PartVars> parts = forward_parts(tape, params, cfg, inputs, head);
  std::vector<int> datasets;
  std::vector<std::size_t> labels;
  for (const auto& in : inputs) {
    datasets.push_back(in.example->dataset);
    labels.push_back(in.example->label);
  }
  ag::Var emb = embed(parts, datasets, head, cfg.head);
  return ag::margin_softmax_loss(emb, tape.param(params.classifier), labels, cfg.loss);
}

std::vector<PartFeatures> infer_parts(ModelParams& params, const ModelConfig& cfg,
                                      std::span<const Example> examples, std::size_t chunk) {
  if (chunk == 0) throw std::invalid_argument("infer_parts: chunk must be positive");
  std::vector<PartFeatures> out;
  out.reserve(examples.size());
  for (std::size_t start = 0; start < examples.size(); start += chunk) {
    const std::size_t end = std::min(examples.size(), start + chunk);
    std::vector<ModelInput> inputs;
    for (std::size_t i = start; i < end; ++i)
      inputs.push_back(padded_input(examples[i], cfg.max_tokens()));
    ag::Tape tape;
    const HeadVars head = bind(tape, params.head);
    for (const PartVars& pv : forward_parts(tape, params, cfg, inputs, head))
      out.push_back({pv.part.value(), pv.peak.value(), pv.visible});
  }
  return out;
}

Tensor embed_parts(ModelParams& params, const ModelConfig& cfg,
                   std::span<const PartFeatures> parts, int dataset) {
  if (parts.empty()) return Tensor({0, cfg.head.embed_dim});
  ag::Tape tape;
  HeadVars head;
  head.part_weights = tape.constant(params.head.part_weights.value);
  head.mlp_w1 = tape.constant(params.head.mlp_w1.value);
  head.mlp_b1 = tape.constant(params.head.mlp_b1.value);
  head.mlp_w2 = tape.constant(params.head.mlp_w2.value);
  head.mlp_b2 = tape.constant(params.head.mlp_b2.value);
  std::vector<PartVars> items;
  items.reserve(parts.size());
  for (const auto& pf : parts)
    items.push_back({tape.constant(pf.part), tape.constant(pf.peak), pf.visible});
  const std::vector<int> datasets(parts.size(), dataset);
  return embed(items, datasets, head, cfg.head).value();
}

}  // namespace retina
