#include "retina/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <string_view>
#include <concepts>

namespace retina {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T number(std::string_view v, std::size_t line, std::string_view key) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) {
    throw ConfigError(line, "bad value '" + std::string(v) + "' for " + std::string(key));
  }
  return out;
}

bool boolean(std::string_view v, std::size_t line, std::string_view key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(line, "bad boolean '" + std::string(v) + "' for " + std::string(key));
}

using Setter = std::function<void(TrainConfig&, std::string_view, std::size_t, std::string_view)>;

#define RETINA_NUM(member, type)                                                      \
  [](TrainConfig& c, std::string_view v, std::size_t l, std::string_view k) {          \
    c.member = number<type>(v, l, k);                                                 \
  }

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"image_size", RETINA_NUM(model.image_size, std::size_t)},
      {"image_channels", RETINA_NUM(model.image_channels, std::size_t)},
      {"levels", RETINA_NUM(model.levels, std::size_t)},
      {"roi_padding", RETINA_NUM(model.roi_padding, double)},
      {"torso_includes_hips",
       [](TrainConfig& c, std::string_view v, std::size_t l, std::string_view k) {
         c.model.torso_includes_hips = boolean(v, l, k);
       }},
      {"learn_part_weights",
       [](TrainConfig& c, std::string_view v, std::size_t l, std::string_view k) {
         c.learn_part_weights = boolean(v, l, k);
       }},
      {"pixel_mean", RETINA_NUM(model.pixel_mean, double)},
      {"pixel_std", RETINA_NUM(model.pixel_std, double)},
      {"grid", RETINA_NUM(model.backbone.grid, std::size_t)},
      {"dim", RETINA_NUM(model.backbone.dim, std::size_t)},
      {"heads", RETINA_NUM(model.backbone.heads, std::size_t)},
      {"depth", RETINA_NUM(model.backbone.depth, std::size_t)},
      {"ffn_ratio", RETINA_NUM(model.backbone.ffn_ratio, std::size_t)},
      {"repeats", RETINA_NUM(model.head.repeats, std::size_t)},
      {"attn_dim", RETINA_NUM(model.head.attn_dim, std::size_t)},
      {"embed_dim", RETINA_NUM(model.head.embed_dim, std::size_t)},
      {"hidden", RETINA_NUM(model.head.hidden, std::size_t)},
      {"loss_scale", RETINA_NUM(model.loss.scale, double)},
      {"loss_margin", RETINA_NUM(model.loss.margin, double)},
      {"identities", RETINA_NUM(data.identities, std::size_t)},
      {"train_per_id", RETINA_NUM(data.train_per_id, std::size_t)},
      {"gallery_per_id", RETINA_NUM(data.gallery_per_id, std::size_t)},
      {"probe_per_id", RETINA_NUM(data.probe_per_id, std::size_t)},
      {"long_term_fraction", RETINA_NUM(data.long_term_fraction, double)},
      {"data_seed", RETINA_NUM(data.seed, std::uint64_t)},
      {"keep_min", RETINA_NUM(sampler.keep_min, std::size_t)},
      {"total_max", RETINA_NUM(sampler.total_max, std::size_t)},
      {"lambda", RETINA_NUM(sampler.lambda, double)},
      {"keep_cap",
       [](TrainConfig& c, std::string_view v, std::size_t l, std::string_view k) {
         const auto cap = number<std::size_t>(v, l, k);
         c.sampler.keep_cap = cap == 0 ? std::nullopt : std::optional<std::size_t>(cap);
       }},
      {"masking",
       [](TrainConfig& c, std::string_view v, std::size_t l, std::string_view) {
         if (v == "variable") c.masking = MaskingPolicy::Variable;
         else if (v == "fixed") c.masking = MaskingPolicy::Fixed;
         else if (v == "drop") c.masking = MaskingPolicy::Drop;
         else throw ConfigError(l, "masking must be variable, fixed or drop");
       }},
      {"fixed_mask_ratio", RETINA_NUM(fixed_mask_ratio, double)},
      {"steps", RETINA_NUM(steps, std::size_t)},
      {"base_batch", RETINA_NUM(base_batch, std::size_t)},
      {"base_keep", RETINA_NUM(base_keep, std::size_t)},
      {"lr", RETINA_NUM(lr, double)},
      {"momentum", RETINA_NUM(momentum, double)},
      {"weight_decay", RETINA_NUM(weight_decay, double)},
      {"grad_clip", RETINA_NUM(grad_clip, double)},
      {"optimizer",
       [](TrainConfig& c, std::string_view v, std::size_t l, std::string_view) {
         if (v == "sgd") c.optimizer = OptimizerKind::Sgd;
         else if (v == "adamw") c.optimizer = OptimizerKind::AdamW;
         else throw ConfigError(l, "optimizer must be sgd or adamw");
       }},
      {"lr_schedule",
       [](TrainConfig& c, std::string_view v, std::size_t l, std::string_view) {
         if (v == "constant") c.lr_schedule = LrSchedule::Constant;
         else if (v == "cosine") c.lr_schedule = LrSchedule::Cosine;
         else throw ConfigError(l, "lr_schedule must be constant or cosine");
       }},
      {"adam_beta1", RETINA_NUM(adam_beta1, double)},
      {"adam_beta2", RETINA_NUM(adam_beta2, double)},
      {"adam_eps", RETINA_NUM(adam_eps, double)},
      {"seed", RETINA_NUM(seed, std::uint64_t)},
      {"eval_batch", RETINA_NUM(eval_batch, std::size_t)},
  };
  return table;
}

#undef RETINA_NUM

}  // namespace

std::string to_string(MaskingPolicy p) {
  switch (p) {
    case MaskingPolicy::Variable: return "variable";
    case MaskingPolicy::Fixed: return "fixed";
    case MaskingPolicy::Drop: return "drop";
  }
  return "?";
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adamw"; }

std::string to_string(LrSchedule s) { return s == LrSchedule::Constant ? "constant" : "cosine"; }

void TrainConfig::finalize() {
  model.head.channels = model.backbone.dim;
  model.head.keypoints = kNumKeypoints;
  model.head.datasets = 2;
  model.classes = data.identities;
  data.image_size = model.image_size;
}

void TrainConfig::validate() const {
  try {
    model.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(0, e.what());
  }
  if (sampler.keep_min == 0 || sampler.keep_min > sampler.total_max) {
    throw ConfigError(0, "keep_min must lie in [1, total_max]");
  }
  if (!(sampler.lambda > 0.0)) throw ConfigError(0, "lambda must be positive");
  if (!(fixed_mask_ratio >= 0.0 && fixed_mask_ratio < 1.0)) {
    throw ConfigError(0, "fixed_mask_ratio must lie in [0, 1)");
  }
  if (base_batch == 0 || base_keep == 0 || !(lr > 0.0)) {
    throw ConfigError(0, "base_batch, base_keep and lr must be positive");
  }
  if (eval_batch == 0) throw ConfigError(0, "eval_batch must be positive");
  if (data.identities == 0 || data.train_per_id == 0) {
    throw ConfigError(0, "identities and train_per_id must be positive");
  }
}

TrainConfig parse_config(std::istream& is) {
  TrainConfig cfg;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(is, raw)) {
    ++line;
    std::string_view s = trim(raw);
    if (s.empty() || s.front() == '#') continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) throw ConfigError(line, "expected key = value");
    const std::string_view key = trim(s.substr(0, eq));
    std::string_view value = trim(s.substr(eq + 1));
    if (const auto hash = value.find('#'); hash != std::string_view::npos) {
      value = trim(value.substr(0, hash));
    }
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(line, "unknown key '" + std::string(key) + "'");
    it->second(cfg, value, line, key);
  }
  cfg.finalize();
  cfg.validate();
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError(0, "cannot open config " + path.string());
  return parse_config(is);
}

namespace {

std::string fmt(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

template <std::unsigned_integral T>
std::string fmt(T v) {
  return std::to_string(v);
}
std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(const std::string& v) { return v; }

}  // namespace

void write_config(std::ostream& os, const TrainConfig& c) {
  auto kv = [&os](const char* key, const auto& value) { os << key << " = " << fmt(value) << '\n'; };
  kv("image_size", c.model.image_size);
  kv("image_channels", c.model.image_channels);
  kv("levels", c.model.levels);
  kv("roi_padding", c.model.roi_padding);
  kv("torso_includes_hips", c.model.torso_includes_hips);
  kv("pixel_mean", c.model.pixel_mean);
  kv("pixel_std", c.model.pixel_std);
  kv("grid", c.model.backbone.grid);
  kv("dim", c.model.backbone.dim);
  kv("heads", c.model.backbone.heads);
  kv("depth", c.model.backbone.depth);
  kv("ffn_ratio", c.model.backbone.ffn_ratio);
  kv("repeats", c.model.head.repeats);
  kv("attn_dim", c.model.head.attn_dim);
  kv("embed_dim", c.model.head.embed_dim);
  kv("hidden", c.model.head.hidden);
  kv("loss_scale", c.model.loss.scale);
  kv("loss_margin", c.model.loss.margin);
  kv("identities", c.data.identities);
  kv("train_per_id", c.data.train_per_id);
  kv("gallery_per_id", c.data.gallery_per_id);
  kv("probe_per_id", c.data.probe_per_id);
  kv("long_term_fraction", c.data.long_term_fraction);
  kv("data_seed", c.data.seed);
  kv("keep_min", c.sampler.keep_min);
  kv("total_max", c.sampler.total_max);
  kv("lambda", c.sampler.lambda);
  kv("keep_cap", c.sampler.keep_cap.value_or(0));
  kv("masking", to_string(c.masking));
  kv("fixed_mask_ratio", c.fixed_mask_ratio);
  kv("steps", c.steps);
  kv("base_batch", c.base_batch);
  kv("base_keep", c.base_keep);
  kv("lr", c.lr);
  kv("momentum", c.momentum);
  kv("weight_decay", c.weight_decay);
  kv("grad_clip", c.grad_clip);
  kv("optimizer", to_string(c.optimizer));
  kv("lr_schedule", to_string(c.lr_schedule));
  kv("learn_part_weights", c.learn_part_weights);
  kv("adam_beta1", c.adam_beta1);
  kv("adam_beta2", c.adam_beta2);
  kv("adam_eps", c.adam_eps);
  kv("seed", c.seed);
  kv("eval_batch", c.eval_batch);
}

}  // namespace retina
