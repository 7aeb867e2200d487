#include "retina/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>
#include <stdexcept>

#include "retina/backbone.hpp"
#include "retina/masked_attention.hpp"

namespace retina {

void BenchOptions::validate() const {
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) {
    throw std::invalid_argument("bench: keep ratio must lie in (0, 1]");
  }
  if (tokens == 0 || reps == 0) throw std::invalid_argument("bench: tokens and reps must be positive");
  BackboneConfig{dim, heads, depth, ffn_ratio, 1}.validate();
}

std::size_t BenchOptions::kept_tokens() const {
  const auto k = static_cast<std::size_t>(std::llround(static_cast<double>(tokens) * keep_ratio));
  return std::clamp<std::size_t>(k, 1, tokens);
}

double BenchResult::attention_flop_ratio() const {
  return static_cast<double>(attention_flops_full) / static_cast<double>(attention_flops_masked);
}

double BenchResult::flop_ratio() const {
  return static_cast<double>(flops_full) / static_cast<double>(flops_masked);
}

double BenchResult::wallclock_ratio() const { return wallclock_full_us / wallclock_masked_us; }

std::uint64_t encoder_flops(std::size_t tokens, std::size_t dim, std::size_t depth,
                            std::size_t ffn_ratio) {
  const std::uint64_t n = tokens, d = dim, f = dim * ffn_ratio;
  // qkv, output projection and the two FFN matmuls.
  const std::uint64_t linear = 2 * n * d * (3 * d) + 2 * n * d * d + 2 * 2 * n * d * f;
  return depth * (linear + attention_flops(tokens, dim));
}

namespace {

// Masked sequences carry one extra slot for the removed tokens.
std::size_t masked_length(const BenchOptions& opt) {
  const std::size_t k = opt.kept_tokens();
  return k + (k < opt.tokens ? 1 : 0);
}

double time_forward(const TokenBatch& batch, const BackboneConfig& cfg, BackboneParams& params,
                    std::size_t reps) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto out = forward(batch, cfg, params);
    const auto t1 = std::chrono::steady_clock::now();
    if (out.empty()) throw std::logic_error("bench: empty forward output");
    best = std::min(best, std::chrono::duration<double, std::micro>(t1 - t0).count());
  }
  return best;
}

}  // namespace

BenchResult count_bench(const BenchOptions& opt) {
  opt.validate();
  BenchResult r;
  r.total_tokens = opt.tokens;
  r.kept_tokens = opt.kept_tokens();
  const std::size_t m = masked_length(opt);
  r.attention_flops_full = opt.depth * attention_flops(opt.tokens, opt.dim);
  r.attention_flops_masked = opt.depth * attention_flops(m, opt.dim);
  r.flops_full = encoder_flops(opt.tokens, opt.dim, opt.depth, opt.ffn_ratio);
  r.flops_masked = encoder_flops(m, opt.dim, opt.depth, opt.ffn_ratio);
  return r;
}

BenchResult run_bench(const BenchOptions& opt) {
  BenchResult r = count_bench(opt);
  const BackboneConfig cfg{opt.dim, opt.heads, opt.depth, opt.ffn_ratio, 1};
  std::mt19937_64 rng(opt.seed);
  BackboneParams params = make_backbone(cfg, rng);
  std::normal_distribution<double> nd(0.0, 1.0);
  Tensor tokens({opt.tokens, opt.dim});
  for (auto& v : tokens.data()) v = nd(rng);
  ParamLeaf mask_token("mask_token", Tensor({1, opt.dim}));
  for (auto& v : mask_token.value.data()) v = nd(rng);

  TokenSequence all;
  all.tokens = tokens;
  all.total = opt.tokens;
  all.has_mask_slot = false;
  for (std::size_t i = 0; i < opt.tokens; ++i) all.kept_indices.push_back(i);
  TokenBatch full{{all}};
  TokenBatch masked{{r.kept_tokens < opt.tokens
                         ? apply_masking(tokens, r.kept_tokens, mask_token, opt.seed)
                         : all}};

  r.wallclock_full_us = time_forward(full, cfg, params, opt.reps);
  r.wallclock_masked_us = time_forward(masked, cfg, params, opt.reps);
  return r;
}

void write_bench_csv(std::ostream& os, const BenchResult& r) {
  os << "kept_tokens,total_tokens,attention_flops_full,attention_flops_masked,"
        "attention_flop_ratio,flops_full,flops_masked,flop_ratio,wallclock_full_us,"
        "wallclock_masked_us,wallclock_ratio\n";
  os << r.kept_tokens << ',' << r.total_tokens << ',' << r.attention_flops_full << ','
     << r.attention_flops_masked << ',' << r.attention_flop_ratio() << ',' << r.flops_full << ','
     << r.flops_masked << ',' << r.flop_ratio() << ',' << r.wallclock_full_us << ','
     << r.wallclock_masked_us << ',' << r.wallclock_ratio() << '\n';
}

}  // namespace retina
