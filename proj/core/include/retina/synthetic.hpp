#pragma once

// Procedural identities rendered as articulated stick figures with exact
// keypoints. Identity lives in body proportions, skin and hair colour; the
// short-term regime also keeps clothing fixed per identity.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "retina/geometry.hpp"
#include "retina/tensor.hpp"

namespace retina {

enum class Regime { ShortTerm = 0, LongTerm = 1 };

struct Rgb {
  double r = 0.0, g = 0.0, b = 0.0;
  bool operator==(const Rgb&) const = default;
};

/// Body lengths are fractions of total figure height.
struct SyntheticIdentity {
  std::size_t id = 0;
  Regime regime = Regime::ShortTerm;
  double head_radius = 0.08;
  double torso_length = 0.31;
  double shoulder_width = 0.26;
  double hip_width = 0.19;
  double upper_arm = 0.17;
  double forearm = 0.15;
  double thigh = 0.24;
  double shin = 0.23;
  double limb_width = 0.045;
  Rgb skin, hair, top, bottom;
};

SyntheticIdentity make_identity(std::uint64_t global_seed, std::size_t id, Regime regime);

/// Framing: `scale` is the fraction of the figure's height in view, `top` the
/// figure coordinate at the upper image edge, `shift` a horizontal offset in
/// image widths.
struct Camera {
  double scale = 1.0;
  double top = -0.04;
  double shift = 0.0;
};

Camera random_camera(std::uint64_t camera_seed);

struct Sample {
  Tensor image;          // [3 x H x W], values in [0, 1]
  KeypointSet keypoints; // pixel coordinates; out-of-frame joints are (-1, -1)
  std::size_t label = 0;
  int dataset = 0;       // regime tag
};

Sample render_sample(const SyntheticIdentity& identity, std::uint64_t pose_seed,
                     std::uint64_t camera_seed, Regime regime, std::size_t image_size);
Sample render_sample(const SyntheticIdentity& identity, std::uint64_t pose_seed,
                     const Camera& camera, Regime regime, std::size_t image_size);

struct DatasetConfig {
  std::size_t identities = 32;
  std::size_t train_per_id = 40;
  std::size_t gallery_per_id = 4;
  std::size_t probe_per_id = 4;
  double long_term_fraction = 0.25;
  std::uint64_t seed = 7;
  std::size_t image_size = 96;
};

struct SyntheticSplit {
  std::vector<Sample> train, gallery, probe;
};

/// The first round(identities * long_term_fraction) identities are long-term.
SyntheticSplit make_dataset(const DatasetConfig& cfg);

}  // namespace retina
