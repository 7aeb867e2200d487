#pragma once

// Full versus masked encoder cost: counted FLOPs and measured forward time
// for one sequence of `tokens` tokens with `keep_ratio` of them kept.

#include <cstddef>
#include <cstdint>
#include <iosfwd>

namespace retina {

struct BenchOptions {
  std::size_t tokens = 432;
  double keep_ratio = 1.0 / 3.0;
  std::size_t dim = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t ffn_ratio = 4;
  std::size_t reps = 5;
  std::uint64_t seed = 1;

  void validate() const;
  /// round(tokens * keep_ratio), at least 1.
  std::size_t kept_tokens() const;
};

struct BenchResult {
  std::size_t kept_tokens = 0;
  std::size_t total_tokens = 0;
  std::uint64_t attention_flops_full = 0;
  std::uint64_t attention_flops_masked = 0;
  std::uint64_t flops_full = 0;
  std::uint64_t flops_masked = 0;
  double wallclock_full_us = 0.0;    // fastest of the repetitions
  double wallclock_masked_us = 0.0;

  double attention_flop_ratio() const;
  double flop_ratio() const;
  double wallclock_ratio() const;
};

/// Counted FLOPs of an encoder stack over one sequence: projections, FFN and
/// the attention stage of every layer.
std::uint64_t encoder_flops(std::size_t tokens, std::size_t dim, std::size_t depth,
                            std::size_t ffn_ratio);

/// FLOPs only, no timing.
BenchResult count_bench(const BenchOptions& opt);
BenchResult run_bench(const BenchOptions& opt);

void write_bench_csv(std::ostream& os, const BenchResult& r);

}  // namespace retina
