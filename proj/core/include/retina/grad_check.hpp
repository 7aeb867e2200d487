#pragma once

// Central finite-difference check of tape gradients against a loss builder.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>

#include "retina/autograd.hpp"

namespace retina {

class GradCheckError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Builds a scalar loss on `tape` from the current parameter values. Must bind
/// every checked leaf with tape.param() and be deterministic.
using LossBuilder = std::function<ag::Var(ag::Tape& tape)>;

struct GradCheckOptions {
  double eps = 1e-5;
  /// 0 checks every entry; otherwise this many entries per leaf, drawn with `seed`.
  std::size_t max_entries_per_leaf = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_leaf;
  std::size_t worst_index = 0;
  std::size_t entries_checked = 0;
};

/// Relative error |a - n| / max(1, |a|, |n|), maximised over checked entries.
GradCheckReport grad_check(const LossBuilder& loss, std::span<ParamLeaf* const> params,
                           const GradCheckOptions& options = {});

}  // namespace retina
