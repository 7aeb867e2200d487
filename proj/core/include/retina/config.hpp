#pragma once

// Training configuration and its `key = value` text form. Blank lines and
// lines starting with '#' are ignored; unknown keys are errors.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "retina/masked_attention.hpp"
#include "retina/model.hpp"
#include "retina/synthetic.hpp"

namespace retina {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::size_t line, const std::string& what)
      : std::runtime_error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

enum class MaskingPolicy {
  Variable,  // sampled keep count, learnable mask slot
  Fixed,     // constant masking ratio, learnable mask slot
  Drop,      // sampled keep count, masked tokens removed outright
};

enum class OptimizerKind { Sgd, AdamW };

/// Multiplier on the per-step learning rate; cosine falls from 1 to 0 over `steps`.
enum class LrSchedule { Constant, Cosine };

struct TrainConfig {
  ModelConfig model;
  DatasetConfig data;
  MaskSampler sampler{36, 108, 4.0, std::nullopt};
  MaskingPolicy masking = MaskingPolicy::Variable;
  double fixed_mask_ratio = 0.66;

  std::size_t steps = 1200;
  std::size_t base_batch = 16;
  std::size_t base_keep = 48;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double grad_clip = 0.0;  // global norm; 0 disables
  OptimizerKind optimizer = OptimizerKind::Sgd;
  LrSchedule lr_schedule = LrSchedule::Constant;
  /// When false the per-dataset part weights keep their zero initialisation,
  /// so every gate is 0.5 in training and at test time alike.
  bool learn_part_weights = true;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  std::uint64_t seed = 1;
  std::size_t eval_batch = 32;

  /// Copies shared sizes between sections (classes, head width, image size).
  void finalize();
  void validate() const;
};

TrainConfig parse_config(std::istream& is);
TrainConfig load_config(const std::filesystem::path& path);
void write_config(std::ostream& os, const TrainConfig& cfg);

std::string to_string(MaskingPolicy p);
std::string to_string(OptimizerKind k);
std::string to_string(LrSchedule s);

}  // namespace retina
