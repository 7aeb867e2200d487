#pragma once

// Randomised correctness suites shared by `retina verify` and the acceptance
// harness. Every suite is deterministic in (trials, seed).

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "retina/geometry.hpp"
#include "retina/model.hpp"

namespace retina {

struct SuiteReport {
  std::string suite;
  std::size_t trials = 0;
  double max_error = 0.0;
  double threshold = 0.0;
  bool passed = true;
  std::string failure;  // first failing configuration, empty when passed
};

/// Mask-bias attention against explicit key duplication: sequence lengths
/// 4-64, widths 8-32, 0-50 repeats.
SuiteReport verify_equivalence(std::size_t trials, std::uint64_t seed);

/// Random keypoint layouts; max_error is the largest |ownership - 1| over pixels.
SuiteReport verify_partition(std::size_t trials, std::uint64_t seed, const RoiConfig& cfg = {});

/// Whole-image ROI at the table's native resolution reproduces the table.
SuiteReport verify_position_identity(std::size_t trials, std::uint64_t seed);

/// Finite differences through tokens, encoder, head and loss on rendered
/// images. `entries_per_leaf` caps the entries probed in each leaf.
SuiteReport verify_gradients(std::size_t trials, std::uint64_t seed, const ModelConfig& cfg = {},
                             std::size_t entries_per_leaf = 2);

std::vector<SuiteReport> run_verification(std::size_t trials, std::uint64_t seed);

/// `suite,trials,max_error,threshold,status` plus one row per report.
void write_verification_csv(std::ostream& os, std::span<const SuiteReport> reports);

/// Per-pixel count of footprints whose area holds the pixel centre; boxes are
/// half-open [x1, x2) x [y1, y2). Row-major [h x w].
std::vector<std::uint32_t> pixel_ownership(std::span<const BBox> footprints, std::size_t width,
                                           std::size_t height);

/// Loosely clustered person-like keypoints with random visibility.
KeypointSet random_keypoints(std::mt19937_64& rng, double image_w, double image_h);

}  // namespace retina
