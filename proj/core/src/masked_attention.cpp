#include "retina/masked_attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace retina {

std::size_t sample_keep_count(const MaskSampler& s, double u) {
  if (!(u >= 0.0 && u < 1.0)) throw std::invalid_argument("sample_keep_count: u must lie in [0,1)");
  if (s.keep_min > s.total_max) {
    throw std::invalid_argument("sample_keep_count: keep_min exceeds total_max");
  }
  const double span = static_cast<double>(s.total_max - s.keep_min);
  auto keep = static_cast<std::size_t>(
      std::floor(static_cast<double>(s.keep_min) + span * std::exp(-s.lambda * u)));
  keep = std::clamp(keep, s.keep_min, s.total_max);
  if (s.keep_cap) keep = std::min(keep, std::max(*s.keep_cap, s.keep_min));
  return keep;
}

double expected_keep_count(const MaskSampler& s) {
  const double span = static_cast<double>(s.total_max - s.keep_min);
  if (s.lambda == 0.0) return static_cast<double>(s.total_max);
  return static_cast<double>(s.keep_min) + span * (1.0 - std::exp(-s.lambda)) / s.lambda;
}

std::vector<std::size_t> choose_kept_indices(std::size_t total, std::size_t keep,
                                             std::mt19937_64& rng) {
  if (keep > total) {
    throw std::invalid_argument("choose_kept_indices: cannot keep " + std::to_string(keep) +
                                " of " + std::to_string(total) + " tokens");
  }
  std::vector<std::size_t> all(total);
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<std::size_t> kept;
  kept.reserve(keep);
  std::sample(all.begin(), all.end(), std::back_inserter(kept), keep, rng);
  return kept;
}

TokenSequence apply_masking(const Tensor& tokens, std::size_t keep, const ParamLeaf& mask_token,
                            std::uint64_t seed) {
  const std::size_t total = tokens.rows(), d = tokens.cols();
  if (keep < 1 || keep > total) {
    throw std::invalid_argument("apply_masking: keep count " + std::to_string(keep) +
                                " outside [1, " + std::to_string(total) + "]");
  }
  if (mask_token.value.size() != d) {
    throw DimensionError("apply_masking: mask token " + shape_str(mask_token.value.shape()) +
                         " does not match token width " + std::to_string(d));
  }
  std::mt19937_64 rng(seed);
  TokenSequence seq;
  seq.kept_indices = choose_kept_indices(total, keep, rng);
  seq.total = total;
  seq.mask_repeats = total - keep;
  seq.has_mask_slot = true;
  seq.tokens = Tensor({keep + 1, d});
  for (std::size_t r = 0; r < keep; ++r) {
    std::copy_n(tokens.ptr() + seq.kept_indices[r] * d, d, seq.tokens.ptr() + r * d);
  }
  std::copy_n(mask_token.value.ptr(), d, seq.tokens.ptr() + keep * d);
  return seq;
}

double mask_column_bias(std::size_t mask_repeats) {
  if (mask_repeats == 0) return -std::numeric_limits<double>::infinity();
  return std::log(static_cast<double>(mask_repeats));
}

AttentionOutput attention_kernel(const Tensor& q, const Tensor& k, const Tensor& v, double scale,
                                 std::span<const double> key_bias) {
  if (q.cols() != k.cols()) {
    throw DimensionError("attention: query " + shape_str(q.shape()) + " and key " +
                         shape_str(k.shape()) + " widths differ");
  }
  if (k.rows() != v.rows()) {
    throw DimensionError("attention: key " + shape_str(k.shape()) + " and value " +
                         shape_str(v.shape()) + " counts differ");
  }
  if (!key_bias.empty() && key_bias.size() != k.rows()) {
    throw DimensionError("attention: key bias has " + std::to_string(key_bias.size()) +
                         " entries for " + std::to_string(k.rows()) + " keys");
  }
  Tensor logits = retina::scale(matmul_nt(q, k), scale);
  Tensor bias;
  if (!key_bias.empty()) bias = Tensor({key_bias.size()}, {key_bias.begin(), key_bias.end()});
  AttentionOutput res;
  res.weights = softmax_with_bias(logits, bias);
  res.out = matmul(res.weights, v);
  return res;
}

Tensor scaled_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        std::size_t mask_repeats) {
  if (k.rows() == 0) throw DimensionError("scaled_attention: no mask slot");
  std::vector<double> bias(k.rows(), 0.0);
  bias.back() = mask_column_bias(mask_repeats);
  const double sc = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  return attention_kernel(q, k, v, sc, bias).out;
}

Tensor duplication_oracle(const Tensor& q, const Tensor& k, const Tensor& v,
                          std::size_t mask_repeats) {
  if (k.rows() == 0) throw DimensionError("duplication_oracle: no mask slot");
  const std::size_t kept = k.rows() - 1;
  const std::size_t n = kept + mask_repeats;
  const std::size_t d = k.cols(), dv = v.cols();
  Tensor kk({n, d}), vv({n, dv});
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t src = r < kept ? r : kept;
    std::copy_n(k.ptr() + src * d, d, kk.ptr() + r * d);
    std::copy_n(v.ptr() + src * dv, dv, vv.ptr() + r * dv);
  }
  // Plain unbiased attention, written out element by element.
  const double sc = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Tensor out({q.rows(), dv});
  std::vector<double> w(n);
  for (std::size_t i = 0; i < q.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += q.at(i, c) * kk.at(j, c);
      w[j] = dot * sc;
      mx = std::max(mx, w[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      w[j] = std::exp(w[j] - mx);
      z += w[j];
    }
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < dv; ++c) out.at(i, c) += w[j] / z * vv.at(j, c);
  }
  return out;
}

BatchAdjustment adjust_batch_and_lr(std::size_t keep, std::size_t base_keep,
                                    std::size_t base_batch, double base_lr) {
  if (keep == 0 || base_keep == 0 || base_batch == 0 || !(base_lr > 0.0)) {
    throw std::invalid_argument("adjust_batch_and_lr: inputs must be positive");
  }
  const double ratio = static_cast<double>(base_keep) / static_cast<double>(keep);
  const auto b = static_cast<std::size_t>(std::floor(static_cast<double>(base_batch) * ratio * ratio));
  BatchAdjustment adj;
  adj.batch = std::max<std::size_t>(1, b);
  adj.lr = base_lr * static_cast<double>(adj.batch) / static_cast<double>(base_batch);
  return adj;
}

std::uint64_t attention_flops(std::size_t tokens, std::size_t dim) {
  const std::uint64_t n = tokens, d = dim;
  // q·kᵀ and weights·v are 2·n²·d each; softmax costs ~3 per logit plus scaling.
  return 4 * n * n * d + 4 * n * n;
}

namespace {

struct HeadCache {
  Tensor q, k, v, weights;
};

Tensor slice_cols(const Tensor& src, std::size_t row0, std::size_t rows, std::size_t col0,
                  std::size_t cols) {
  Tensor out({rows, cols});
  const std::size_t stride = src.cols();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(src.ptr() + (row0 + r) * stride + col0, cols, out.ptr() + r * cols);
  return out;
}

std::vector<double> segment_bias(const Segment& s) {
  if (!s.has_mask_slot) return {};
  std::vector<double> b(s.length, 0.0);
  b.back() = mask_column_bias(s.mask_repeats);
  return b;
}

}  // namespace

ag::Var segmented_attention(ag::Var qkv, std::span<const Segment> segments, std::size_t heads) {
  const Tensor& x = qkv.value();
  const std::size_t N = x.rows();
  if (x.cols() % 3 != 0) throw DimensionError("segmented_attention: qkv width must be 3*D");
  const std::size_t D = x.cols() / 3;
  if (heads == 0 || D % heads != 0) {
    throw DimensionError("segmented_attention: width " + std::to_string(D) +
                         " not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t dh = D / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Segment> segs(segments.begin(), segments.end());
  std::vector<HeadCache> cache(segs.size() * heads);
  Tensor out({N, D});
  for (std::size_t s = 0; s < segs.size(); ++s) {
    const Segment& sg = segs[s];
    if (sg.offset + sg.length > N || sg.length == 0 || (sg.has_mask_slot && sg.length < 2)) {
      throw DimensionError("segmented_attention: malformed segment at offset " +
                           std::to_string(sg.offset));
    }
    const auto bias = segment_bias(sg);
    for (std::size_t h = 0; h < heads; ++h) {
      HeadCache& c = cache[s * heads + h];
      c.q = slice_cols(x, sg.offset, sg.length, h * dh, dh);
      c.k = slice_cols(x, sg.offset, sg.length, D + h * dh, dh);
      c.v = slice_cols(x, sg.offset, sg.length, 2 * D + h * dh, dh);
      AttentionOutput a = attention_kernel(c.q, c.k, c.v, sc, bias);
      c.weights = std::move(a.weights);
      for (std::size_t r = 0; r < sg.length; ++r)
        std::copy_n(a.out.ptr() + r * dh, dh, out.ptr() + (sg.offset + r) * D + h * dh);
    }
  }
  ag::Tape& t = *qkv.tape;
  return t.record(std::move(out), {qkv},
                  [qkv, segs = std::move(segs), cache = std::move(cache), heads, D, dh, sc](
                      ag::Tape& t, const Tensor& g) {
                    Tensor& dx = t.grad(qkv.id);
                    const std::size_t W = 3 * D;
                    for (std::size_t s = 0; s < segs.size(); ++s) {
                      const Segment& sg = segs[s];
                      for (std::size_t h = 0; h < heads; ++h) {
                        const HeadCache& c = cache[s * heads + h];
                        Tensor dout = slice_cols(g, sg.offset, sg.length, h * dh, dh);
                        // dV = Pᵀ dO ; dP = dO Vᵀ ; dS = P ⊙ (dP − rowsum(dP ⊙ P))
                        Tensor dv = matmul_tn(c.weights, dout);
                        Tensor dp = matmul_nt(dout, c.v);
                        Tensor ds({sg.length, sg.length});
                        for (std::size_t i = 0; i < sg.length; ++i) {
                          double acc = 0.0;
                          for (std::size_t j = 0; j < sg.length; ++j)
                            acc += dp.at(i, j) * c.weights.at(i, j);
                          for (std::size_t j = 0; j < sg.length; ++j)
                            ds.at(i, j) = c.weights.at(i, j) * (dp.at(i, j) - acc) * sc;
                        }
                        Tensor dq = matmul(ds, c.k);
                        Tensor dk = matmul_tn(ds, c.q);
                        for (std::size_t r = 0; r < sg.length; ++r) {
                          double* row = dx.ptr() + (sg.offset + r) * W;
                          for (std::size_t j = 0; j < dh; ++j) {
                            row[h * dh + j] += dq.at(r, j);
                            row[D + h * dh + j] += dk.at(r, j);
                            row[2 * D + h * dh + j] += dv.at(r, j);
                          }
                        }
                      }
                    }
                  });
}

}  // namespace retina
