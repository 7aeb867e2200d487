#pragma once

// Training loop with masked tokens, retrieval evaluation and the two ablations.

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "retina/config.hpp"
#include "retina/metrics.hpp"
#include "retina/model.hpp"

namespace retina {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PreparedData {
  std::vector<Example> train, gallery, probe;
};

/// Renders the synthetic split and reduces every image to model inputs.
PreparedData prepare_data(const TrainConfig& cfg);
std::vector<Example> prepare_examples(std::span<const Sample> samples, const ModelConfig& cfg);

struct LogRow {
  std::size_t step = 0;
  double loss = 0.0;
  std::size_t keep = 0;   // sampled n_k (or the fixed keep fraction's mean)
  std::size_t batch = 0;
  double lr = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<LogRow> log;
};

using ProgressFn = std::function<void(const LogRow&)>;

TrainResult train(const TrainConfig& cfg, std::span<const Example> train_set,
                  const ProgressFn& progress = {});

EvalResult evaluate(ModelParams& params, const TrainConfig& cfg, std::span<const Example> gallery,
                    std::span<const Example> probe);

enum class AblationOrder { TopDown, BottomUp };

struct AblationRow {
  std::string step;  // "None", "+Nose", ..., "Full"
  EvalResult result;
};

/// Progressively restores keypoint groups, starting with every part zeroed.
std::vector<AblationRow> part_ablation_eval(ModelParams& params, const TrainConfig& cfg,
                                            std::span<const Example> gallery,
                                            std::span<const Example> probe, AblationOrder order);

struct ArmResult {
  std::string arm;
  EvalResult result;
};

/// Trains the variable, fixed and drop masking arms from one seed and budget.
std::vector<ArmResult> masking_ablation(const TrainConfig& cfg, const PreparedData& data,
                                        const std::function<void(const std::string&)>& note = {});

void write_log_csv(std::ostream& os, std::span<const LogRow> log);
/// `metric,value` rows for top1 and mAP.
void write_eval_csv(std::ostream& os, const EvalResult& r);
/// `rank,fraction` rows.
void write_cmc_csv(std::ostream& os, const EvalResult& r);

}  // namespace retina
