#include "retina/backbone.hpp"

#include <cmath>
#include <stdexcept>

namespace retina {

namespace {

Tensor randn(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, stddev);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = nd(rng);
  return t;
}

ParamLeaf weight(std::string name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return ParamLeaf(std::move(name), randn({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng));
}

ParamLeaf filled(std::string name, std::size_t n, double v) {
  return ParamLeaf(std::move(name), Tensor({1, n}, v));
}

}  // namespace

void BackboneConfig::validate() const {
  if (dim == 0 || heads == 0 || ffn_ratio == 0 || grid == 0) {
    throw std::invalid_argument("backbone config: sizes must be positive");
  }
  if (dim % heads != 0) {
    throw std::invalid_argument("backbone config: dim " + std::to_string(dim) +
                                " not divisible by " + std::to_string(heads) + " heads");
  }
}

std::vector<ParamLeaf*> BlockParams::leaves() {
  return {&ln1_gain, &ln1_shift, &qkv_w, &qkv_b, &out_w, &out_b,
          &ln2_gain, &ln2_shift, &ff1_w, &ff1_b, &ff2_w, &ff2_b};
}

BlockParams make_block(const BackboneConfig& cfg, std::size_t index, std::mt19937_64& rng) {
  const std::size_t D = cfg.dim, F = cfg.dim * cfg.ffn_ratio;
  const std::string p = "block" + std::to_string(index) + ".";
  BlockParams b;
  b.ln1_gain = filled(p + "ln1_gain", D, 1.0);
  b.ln1_shift = filled(p + "ln1_shift", D, 0.0);
  b.qkv_w = weight(p + "qkv_w", D, 3 * D, rng);
  b.qkv_b = filled(p + "qkv_b", 3 * D, 0.0);
  b.out_w = weight(p + "out_w", D, D, rng);
  b.out_b = filled(p + "out_b", D, 0.0);
  b.ln2_gain = filled(p + "ln2_gain", D, 1.0);
  b.ln2_shift = filled(p + "ln2_shift", D, 0.0);
  b.ff1_w = weight(p + "ff1_w", D, F, rng);
  b.ff1_b = filled(p + "ff1_b", F, 0.0);
  b.ff2_w = weight(p + "ff2_w", F, D, rng);
  b.ff2_b = filled(p + "ff2_b", D, 0.0);
  return b;
}

BlockVars bind(ag::Tape& t, BlockParams& p) {
  return {t.param(p.ln1_gain), t.param(p.ln1_shift), t.param(p.qkv_w), t.param(p.qkv_b),
          t.param(p.out_w),    t.param(p.out_b),     t.param(p.ln2_gain), t.param(p.ln2_shift),
          t.param(p.ff1_w),    t.param(p.ff1_b),     t.param(p.ff2_w),  t.param(p.ff2_b)};
}

constexpr double kLayerNormEps = 1e-6;

ag::Var encoder_block(ag::Var x, std::span<const Segment> segments, const BlockVars& p,
                      std::size_t heads) {
  ag::Var h = ag::layer_norm(x, p.ln1_gain, p.ln1_shift, kLayerNormEps);
  ag::Var qkv = ag::add_row(ag::matmul(h, p.qkv_w), p.qkv_b);
  ag::Var attn = segmented_attention(qkv, segments, heads);
  x = ag::add(x, ag::add_row(ag::matmul(attn, p.out_w), p.out_b));
  h = ag::layer_norm(x, p.ln2_gain, p.ln2_shift, kLayerNormEps);
  ag::Var ff = ag::gelu(ag::add_row(ag::matmul(h, p.ff1_w), p.ff1_b));
  return ag::add(x, ag::add_row(ag::matmul(ff, p.ff2_w), p.ff2_b));
}

std::vector<Segment> segments_of(const TokenBatch& batch) {
  std::vector<Segment> segs;
  std::size_t off = 0;
  for (const auto& item : batch.items) {
    Segment s;
    s.offset = off;
    s.length = item.tokens.rows();
    s.has_mask_slot = item.has_mask_slot;
    s.mask_repeats = item.mask_repeats;
    segs.push_back(s);
    off += s.length;
  }
  return segs;
}

Tensor stack_tokens(const TokenBatch& batch) {
  if (batch.items.empty()) throw std::invalid_argument("stack_tokens: empty batch");
  const std::size_t d = batch.items.front().tokens.cols();
  std::size_t n = 0;
  for (const auto& item : batch.items) {
    if (item.tokens.cols() != d) throw DimensionError("stack_tokens: ragged token width");
    n += item.tokens.rows();
  }
  Tensor out({n, d});
  std::size_t off = 0;
  for (const auto& item : batch.items) {
    std::copy(item.tokens.data().begin(), item.tokens.data().end(), out.ptr() + off * d);
    off += item.tokens.rows();
  }
  return out;
}

namespace {

TokenBatch unstack(const Tensor& stacked, const TokenBatch& like) {
  TokenBatch out = like;
  std::size_t off = 0;
  const std::size_t d = stacked.cols();
  for (auto& item : out.items) {
    const std::size_t n = item.tokens.rows();
    item.tokens = Tensor({n, d});
    std::copy_n(stacked.ptr() + off * d, n * d, item.tokens.ptr());
    off += n;
  }
  return out;
}

}  // namespace

TokenBatch encoder_block(const TokenBatch& batch, BlockParams& p, std::size_t heads) {
  ag::Tape tape;
  const auto segs = segments_of(batch);
  ag::Var x = tape.constant(stack_tokens(batch));
  ag::Var y = encoder_block(x, segs, bind(tape, p), heads);
  return unstack(y.value(), batch);
}

std::vector<ParamLeaf*> BackboneParams::leaves() {
  std::vector<ParamLeaf*> out;
  for (auto& b : blocks)
    for (auto* l : b.leaves()) out.push_back(l);
  out.push_back(&final_gain);
  out.push_back(&final_shift);
  return out;
}

BackboneParams make_backbone(const BackboneConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  BackboneParams p;
  for (std::size_t i = 0; i < cfg.depth; ++i) p.blocks.push_back(make_block(cfg, i, rng));
  p.final_gain = filled("backbone.final_gain", cfg.dim, 1.0);
  p.final_shift = filled("backbone.final_shift", cfg.dim, 0.0);
  return p;
}

ag::Var backbone_forward(ag::Var x, std::span<const Segment> segments, const BackboneConfig& cfg,
                         BackboneParams& params) {
  ag::Tape& t = *x.tape;
  for (auto& block : params.blocks) x = encoder_block(x, segments, bind(t, block), cfg.heads);
  return ag::layer_norm(x, t.param(params.final_gain), t.param(params.final_shift),
                        kLayerNormEps);
}

std::vector<Tensor> forward(const TokenBatch& batch, const BackboneConfig& cfg,
                            BackboneParams& params) {
  ag::Tape tape;
  const auto segs = segments_of(batch);
  ag::Var y = backbone_forward(tape.constant(stack_tokens(batch)), segs, cfg, params);
  const TokenBatch out = unstack(y.value(), batch);
  std::vector<Tensor> res;
  for (const auto& item : out.items) res.push_back(item.tokens);
  return res;
}

std::optional<std::size_t> SparseFeatureMap::lookup(double x, double y, double tol) const {
  for (std::size_t i = 0; i < size(); ++i) {
    if (std::abs(centers.at(i, 0) - x) <= tol && std::abs(centers.at(i, 1) - y) <= tol) return i;
  }
  return std::nullopt;
}

SparseFeatureMap scatter_to_map(const Tensor& features, const PreparedImage& image,
                                std::span<const std::size_t> kept) {
  if (features.rows() < kept.size()) {
    throw std::runtime_error("scatter_to_map: " + std::to_string(kept.size()) +
                             " kept indices but only " + std::to_string(features.rows()) +
                             " feature rows");
  }
  const std::size_t d = features.cols();
  SparseFeatureMap m;
  m.centers = Tensor({kept.size(), 2});
  m.values = Tensor({kept.size(), d});
  std::size_t prev = 0;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const std::size_t k = kept[i];
    if (k >= image.count() || (i > 0 && k <= prev)) {
      throw std::runtime_error("scatter_to_map: kept index " + std::to_string(k) +
                               " misaligned with the patch set");
    }
    prev = k;
    m.centers.at(i, 0) = image.centers.at(k, 0);
    m.centers.at(i, 1) = image.centers.at(k, 1);
    std::copy_n(features.ptr() + i * d, d, m.values.ptr() + i * d);
    m.patch_index.push_back(k);
  }
  return m;
}

}  // namespace retina
