#include "retina/trainer.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>

namespace retina {

namespace {

std::string fmt(double v) {
  std::array<char, 64> buf{};
  auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), p);
}

std::vector<std::size_t> labels_of(std::span<const Example> xs) {
  std::vector<std::size_t> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(x.label);
  return out;
}

class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, std::vector<ParamLeaf*> leaves)
      : cfg_(cfg), leaves_(std::move(leaves)) {
    for (ParamLeaf* l : leaves_) {
      m_.emplace_back(l->value.shape());
      if (cfg_.optimizer == OptimizerKind::AdamW) v_.emplace_back(l->value.shape());
    }
  }

  void step(double lr) {
    double scale = 1.0;
    if (cfg_.grad_clip > 0.0) {
      double sq = 0.0;
      for (ParamLeaf* l : leaves_)
        for (double g : l->grad.data()) sq += g * g;
      const double norm = std::sqrt(sq);
      if (norm > cfg_.grad_clip) scale = cfg_.grad_clip / norm;
    }
    ++t_;
    for (std::size_t i = 0; i < leaves_.size(); ++i) {
      ParamLeaf& l = *leaves_[i];
      auto w = l.value.data();
      auto g = l.grad.data();
      auto m = m_[i].data();
      if (cfg_.optimizer == OptimizerKind::Sgd) {
        for (std::size_t k = 0; k < w.size(); ++k) {
          const double d = scale * g[k] + cfg_.weight_decay * w[k];
          m[k] = cfg_.momentum * m[k] + d;
          w[k] -= lr * m[k];
        }
      } else {
        auto v = v_[i].data();
        const double b1 = cfg_.adam_beta1, b2 = cfg_.adam_beta2;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
        for (std::size_t k = 0; k < w.size(); ++k) {
          const double gk = scale * g[k];
          m[k] = b1 * m[k] + (1.0 - b1) * gk;
          v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
          w[k] -= lr * ((m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.adam_eps) +
                        cfg_.weight_decay * w[k]);
        }
      }
    }
  }

 private:
  const TrainConfig& cfg_;
  std::vector<ParamLeaf*> leaves_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

// Cycles through shuffled epochs of the training set.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::mt19937_64& rng) : order_(n), rng_(rng) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
  }

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    while (out.size() < batch) {
      if (cursor_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        cursor_ = 0;
      }
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::mt19937_64& rng_;
  std::size_t cursor_ = 0;
};

std::vector<PartFeatures> parts_of(ModelParams& params, const TrainConfig& cfg,
                                   std::span<const Example> xs) {
  return infer_parts(params, cfg.model, xs, cfg.eval_batch);
}

EvalResult score(ModelParams& params, const TrainConfig& cfg,
                 std::span<const PartFeatures> gallery, std::span<const std::size_t> gallery_labels,
                 std::span<const PartFeatures> probe, std::span<const std::size_t> probe_labels) {
  const Tensor g = embed_parts(params, cfg.model, gallery);
  const Tensor p = embed_parts(params, cfg.model, probe);
  return evaluate_embeddings(g, gallery_labels, p, probe_labels);
}

}  // namespace

std::vector<Example> prepare_examples(std::span<const Sample> samples, const ModelConfig& cfg) {
  const Tensor table = sincos_position_table(cfg.backbone.dim, cfg.backbone.grid, cfg.backbone.grid);
  std::vector<Example> out;
  out.reserve(samples.size());
  for (const Sample& s : samples)
    out.push_back(prepare_example(s.image, s.keypoints, s.label, s.dataset, cfg, table));
  return out;
}

PreparedData prepare_data(const TrainConfig& cfg) {
  const SyntheticSplit split = make_dataset(cfg.data);
  PreparedData d;
  d.train = prepare_examples(split.train, cfg.model);
  d.gallery = prepare_examples(split.gallery, cfg.model);
  d.probe = prepare_examples(split.probe, cfg.model);
  return d;
}

TrainResult train(const TrainConfig& cfg, std::span<const Example> train_set,
                  const ProgressFn& progress) {
  cfg.validate();
  TrainResult res{make_model(cfg.model, cfg.seed), {}};
  if (cfg.steps == 0) return res;
  if (train_set.empty()) throw TrainingError("train: empty training set");

  std::mt19937_64 rng(cfg.seed ^ 0x5deece66dull);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  BatchSampler batches(train_set.size(), rng);
  auto leaves = res.params.leaves();
  auto trained = leaves;
  if (!cfg.learn_part_weights) std::erase(trained, &res.params.head.part_weights);
  Optimizer opt(cfg, trained);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    LogRow row;
    row.step = step;
    std::size_t keep = 0;
    if (cfg.masking == MaskingPolicy::Fixed) {
      row.batch = cfg.base_batch;
      row.lr = cfg.lr;
    } else {
      keep = sample_keep_count(cfg.sampler, unit(rng));
      const BatchAdjustment adj =
          adjust_batch_and_lr(keep, cfg.base_keep, cfg.base_batch, cfg.lr);
      row.batch = adj.batch;
      row.lr = adj.lr;
    }
    std::vector<ModelInput> inputs;
    std::size_t kept_total = 0;
    for (std::size_t idx : batches.next(row.batch)) {
      const Example& ex = train_set[idx];
      const std::size_t n = ex.image.count();
      std::size_t k = std::min(keep, n);
      if (cfg.masking == MaskingPolicy::Fixed) {
        const auto masked = static_cast<std::size_t>(std::floor(cfg.fixed_mask_ratio * static_cast<double>(n)));
        k = std::max<std::size_t>(1, n - masked);
      }
      kept_total += k;
      inputs.push_back(masked_input(ex, choose_kept_indices(n, k, rng),
                                    cfg.masking != MaskingPolicy::Drop));
    }
    row.keep = cfg.masking == MaskingPolicy::Fixed ? kept_total / inputs.size() : keep;
    if (cfg.lr_schedule == LrSchedule::Cosine) {
      const double t = static_cast<double>(step) / static_cast<double>(cfg.steps);
      row.lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * t));
    }

    for (ParamLeaf* l : leaves) l->zero_grad();
    ag::Tape tape;
    ag::Var loss = training_loss(tape, res.params, cfg.model, inputs);
    row.loss = loss.value()[0];
    if (!std::isfinite(row.loss)) {
      throw TrainingError("train: non-finite loss at step " + std::to_string(step) + " (keep " +
                          std::to_string(row.keep) + ", batch " + std::to_string(row.batch) +
                          ", lr " + fmt(row.lr) + ")");
    }
    tape.backward(loss);
    opt.step(row.lr);
    res.log.push_back(row);
    if (progress) progress(row);
  }
  return res;
}

EvalResult evaluate(ModelParams& params, const TrainConfig& cfg, std::span<const Example> gallery,
                    std::span<const Example> probe) {
  const auto gl = labels_of(gallery), pl = labels_of(probe);
  const auto gp = parts_of(params, cfg, gallery);
  const auto pp = parts_of(params, cfg, probe);
  return score(params, cfg, gp, gl, pp, pl);
}

std::vector<AblationRow> part_ablation_eval(ModelParams& params, const TrainConfig& cfg,
                                            std::span<const Example> gallery,
                                            std::span<const Example> probe, AblationOrder order) {
  using K = KeypointName;
  struct Group {
    const char* name;
    std::vector<K> members;
  };
  std::vector<Group> groups = {
      {"Nose", {K::Nose}},
      {"Eye", {K::LeftEye, K::RightEye}},
      {"Mouth", {K::LeftMouth, K::RightMouth}},
      {"Ear", {K::LeftEar, K::RightEar}},
      {"Shoulder", {K::LeftShoulder, K::RightShoulder}},
      {"Elbow", {K::LeftElbow, K::RightElbow}},
      {"Wrist", {K::LeftWrist, K::RightWrist}},
      {"Hip", {K::LeftHip, K::RightHip}},
      {"Knee", {K::LeftKnee, K::RightKnee}},
      {"Ankle", {K::LeftAnkle, K::RightAnkle}},
  };
  if (order == AblationOrder::BottomUp) std::reverse(groups.begin(), groups.end());

  const auto gl = labels_of(gallery), pl = labels_of(probe);
  const auto gp = parts_of(params, cfg, gallery);
  const auto pp = parts_of(params, cfg, probe);

  std::vector<bool> restored(kNumKeypoints, false);
  std::vector<AblationRow> rows;
  for (std::size_t step = 0; step <= groups.size(); ++step) {
    if (step > 0) {
      for (K k : groups[step - 1].members) restored[static_cast<std::size_t>(k)] = true;
    }
    std::vector<std::size_t> zero;
    for (std::size_t k = 0; k < kNumKeypoints; ++k)
      if (!restored[k]) zero.push_back(k);
    auto zeroed = [&](const std::vector<PartFeatures>& xs) {
      std::vector<PartFeatures> out;
      out.reserve(xs.size());
      for (const auto& x : xs) out.push_back(part_zeroing(x, zero, cfg.model.head));
      return out;
    };
    std::string name = step == 0                ? "None"
                       : step == groups.size() ? "Full"
                                               : std::string("+") + groups[step - 1].name;
    rows.push_back({std::move(name), score(params, cfg, zeroed(gp), gl, zeroed(pp), pl)});
  }
  return rows;
}

std::vector<ArmResult> masking_ablation(const TrainConfig& cfg, const PreparedData& data,
                                        const std::function<void(const std::string&)>& note) {
  std::vector<ArmResult> out;
  for (MaskingPolicy p : {MaskingPolicy::Variable, MaskingPolicy::Fixed, MaskingPolicy::Drop}) {
    TrainConfig arm = cfg;
    arm.masking = p;
    if (note) note(to_string(p));
    TrainResult r = train(arm, data.train);
    out.push_back({to_string(p), evaluate(r.params, arm, data.gallery, data.probe)});
  }
  return out;
}

void write_log_csv(std::ostream& os, std::span<const LogRow> log) {
  os << "step,loss,keep,batch,lr\n";
  for (const auto& r : log) {
    os << r.step << ',' << fmt(r.loss) << ',' << r.keep << ',' << r.batch << ',' << fmt(r.lr)
       << '\n';
  }
}

void write_eval_csv(std::ostream& os, const EvalResult& r) {
  os << "metric,value\n" << "top1," << fmt(r.top1) << '\n' << "mAP," << fmt(r.mAP) << '\n';
}

void write_cmc_csv(std::ostream& os, const EvalResult& r) {
  os << "rank,fraction\n";
  for (std::size_t i = 0; i < r.cmc.size(); ++i) os << i + 1 << ',' << fmt(r.cmc[i]) << '\n';
}

}  // namespace retina
