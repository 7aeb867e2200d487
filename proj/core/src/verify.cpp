#include "retina/verify.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "retina/grad_check.hpp"
#include "retina/masked_attention.hpp"
#include "retina/retina_patch.hpp"
#include "retina/synthetic.hpp"
#include "retina/trainer.hpp"

namespace retina {

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Tensor t({rows, cols});
  for (auto& v : t.data()) v = nd(rng);
  return t;
}

std::size_t uniform(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

void record(SuiteReport& r, double err, const std::string& config) {
  r.max_error = std::max(r.max_error, err);
  if (!(err < r.threshold) && r.passed) {
    r.passed = false;
    r.failure = config;
  }
}

std::string format_keypoints(const KeypointSet& kps) {
  KeypointRecord rec;
  rec.image_id = "trial";
  rec.keypoints = kps;
  return format_keypoint_record(rec);
}

}  // namespace

std::vector<std::uint32_t> pixel_ownership(std::span<const BBox> footprints, std::size_t width,
                                           std::size_t height) {
  std::vector<std::uint32_t> count(width * height, 0);
  for (const BBox& b : footprints) {
    const double fx = std::max(0.0, std::ceil(b.x1 - 0.5));
    const double fy = std::max(0.0, std::ceil(b.y1 - 0.5));
    for (auto y = static_cast<std::size_t>(fy); y < height && y + 0.5 < b.y2; ++y)
      for (auto x = static_cast<std::size_t>(fx); x < width && x + 0.5 < b.x2; ++x)
        ++count[y * width + x];
  }
  return count;
}

KeypointSet random_keypoints(std::mt19937_64& rng, double image_w, double image_h) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double cx = image_w * unit(rng), cy = image_h * unit(rng);
  const double spread = std::min(image_w, image_h) * (0.01 + 0.5 * unit(rng));
  const double visible_p = 0.3 + 0.7 * unit(rng);
  std::normal_distribution<double> nd(0.0, spread);
  KeypointSet kps = invisible_keypoints();
  for (auto& k : kps) {
    if (unit(rng) >= visible_p) continue;
    k.x = std::clamp(cx + nd(rng), 0.0, image_w - 1.0);
    k.y = std::clamp(cy + nd(rng), 0.0, image_h - 1.0);
  }
  return kps;
}

SuiteReport verify_equivalence(std::size_t trials, std::uint64_t seed) {
  SuiteReport r{"equivalence", trials, 0.0, 1e-9, true, {}};
  std::mt19937_64 rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n = uniform(rng, 4, 64), d = uniform(rng, 8, 32);
    const std::size_t nq = uniform(rng, 1, 64), nm = uniform(rng, 0, 50);
    const Tensor q = random_matrix(nq, d, rng);
    const Tensor k = random_matrix(n, d, rng);
    const Tensor v = random_matrix(n, d, rng);
    const Tensor a = scaled_attention(q, k, v, nm);
    const Tensor b = duplication_oracle(q, k, v, nm);
    double err = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) err = std::max(err, std::abs(a[i] - b[i]));
    std::ostringstream cfg;
    cfg << "trial " << t << ": keys " << n << " dim " << d << " queries " << nq << " repeats "
        << nm;
    record(r, err, cfg.str());
  }
  return r;
}

SuiteReport verify_partition(std::size_t trials, std::uint64_t seed, const RoiConfig& cfg) {
  SuiteReport r{"partition", trials, 0.0, 0.5, true, {}};
  std::mt19937_64 rng(seed);
  const auto w = static_cast<double>(cfg.image_w), h = static_cast<double>(cfg.image_h);
  const Tensor blank({1, cfg.image_h, cfg.image_w});
  for (std::size_t t = 0; t < trials; ++t) {
    const KeypointSet kps = random_keypoints(rng, w, h);
    double err = 0.0;
    std::string what;
    try {
      const PatchSet ps = extract_patches(blank, build_roi_set(kps, cfg));
      std::vector<BBox> boxes;
      for (const Patch& p : ps.patches) boxes.push_back(p.footprint);
      for (std::uint32_t c : pixel_ownership(boxes, cfg.image_w, cfg.image_h))
        err = std::max(err, std::abs(static_cast<double>(c) - 1.0));
    } catch (const std::exception& e) {
      err = INFINITY;
      what = std::string(" (") + e.what() + ")";
    }
    record(r, err, "trial " + std::to_string(t) + what + ": " + format_keypoints(kps));
  }
  return r;
}

SuiteReport verify_position_identity(std::size_t trials, std::uint64_t seed) {
  SuiteReport r{"position_identity", trials, 0.0, 1e-12, true, {}};
  std::mt19937_64 rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t channels = 4 * uniform(rng, 1, 16);
    const std::size_t rows = uniform(rng, 2, 16), cols = uniform(rng, 2, 16);
    const double scale = static_cast<double>(uniform(rng, 1, 32));
    const PositionField field = make_position_field(channels, rows, cols, 1);
    ROI roi;
    roi.bbox = {0.0, 0.0, scale * static_cast<double>(cols), scale * static_cast<double>(rows)};
    roi.grid_rows = rows;
    roi.grid_cols = cols;
    const Tensor pe = region_sampled_pe(field, roi, roi.bbox.x2, roi.bbox.y2);
    double err = 0.0;
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j)
        for (std::size_t c = 0; c < channels; ++c)
          err = std::max(err, std::abs(pe.at(i * cols + j, c) - field.table.at(c, i, j)));
    std::ostringstream cfg;
    cfg << "trial " << t << ": channels " << channels << " grid " << rows << "x" << cols
        << " cell " << scale << "px";
    record(r, err, cfg.str());
  }
  return r;
}

SuiteReport verify_gradients(std::size_t trials, std::uint64_t seed, const ModelConfig& cfg,
                             std::size_t entries_per_leaf) {
  SuiteReport r{"gradients", trials, 0.0, 1e-4, true, {}};
  cfg.validate();
  std::mt19937_64 rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    const std::uint64_t s = rng();
    std::vector<Sample> samples;
    for (std::size_t i = 0; i < 2; ++i) {
      const auto regime = i == 0 ? Regime::ShortTerm : Regime::LongTerm;
      const std::size_t id = (s + i) % cfg.classes;
      samples.push_back(render_sample(make_identity(s, id, regime), s + 11 * i, s + 13 * i, regime,
                                      cfg.image_size));
      samples.back().label = id;
      samples.back().dataset = static_cast<int>(regime);
    }
    const std::vector<Example> examples = prepare_examples(samples, cfg);
    ModelParams params = make_model(cfg, s);
    std::vector<ModelInput> inputs;
    for (const Example& ex : examples) {
      const std::size_t n = ex.image.count();
      const std::size_t keep = uniform(rng, std::min<std::size_t>(n, 2), n);
      inputs.push_back(masked_input(ex, choose_kept_indices(n, keep, rng), true));
    }
    const auto leaves = params.leaves();
    GradCheckOptions opt;
    opt.max_entries_per_leaf = entries_per_leaf;
    opt.seed = s;
    std::ostringstream cfgs;
    cfgs << "trial " << t << ": seed " << s << " tokens";
    for (const auto& in : inputs) cfgs << " " << in.kept.size() << "/" << in.example->image.count();
    double err = 0.0;
    try {
      const GradCheckReport rep = grad_check(
          [&](ag::Tape& tape) { return training_loss(tape, params, cfg, inputs); }, leaves, opt);
      err = rep.max_rel_error;
      cfgs << " worst " << rep.worst_leaf << "[" << rep.worst_index << "]";
    } catch (const std::exception& e) {
      err = INFINITY;
      cfgs << " (" << e.what() << ")";
    }
    record(r, err, cfgs.str());
  }
  return r;
}

std::vector<SuiteReport> run_verification(std::size_t trials, std::uint64_t seed) {
  return {verify_equivalence(trials, seed), verify_partition(trials, seed + 1),
          verify_position_identity(trials, seed + 2), verify_gradients(trials, seed + 3)};
}

void write_verification_csv(std::ostream& os, std::span<const SuiteReport> reports) {
  os << "suite,trials,max_error,threshold,status\n";
  for (const SuiteReport& r : reports) {
    std::ostringstream err;
    err.precision(6);
    err << std::scientific << r.max_error;
    os << r.suite << ',' << r.trials << ',' << err.str() << ',' << r.threshold << ','
       << (r.passed ? "pass" : "FAIL") << '\n';
  }
}

}  // namespace retina
