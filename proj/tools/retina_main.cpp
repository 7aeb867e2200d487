// retina: layout inspection, verification, benchmarking, training and
// evaluation from the command line.
//
// Exit codes: 0 success, 1 verification failure or runtime error, 2 input
// parse error, 3 config/checkpoint mismatch.

#include <CLI11.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "retina/bench.hpp"
#include "retina/checkpoint.hpp"
#include "retina/config.hpp"
#include "retina/geometry.hpp"
#include "retina/retina_patch.hpp"
#include "retina/trainer.hpp"
#include "retina/verify.hpp"

namespace {

using namespace retina;

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kParseError = 2;
constexpr int kMismatch = 3;

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::ofstream open_out(const std::filesystem::path& p, bool binary = false) {
  std::ofstream os(p, binary ? std::ios::binary : std::ios::out);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  return os;
}

TrainConfig config_from(const std::string& path) {
  if (path.empty()) {
    TrainConfig cfg;
    cfg.finalize();
    return cfg;
  }
  if (!std::filesystem::exists(path)) throw InputError("config file not found: " + path);
  return load_config(path);
}

void print_eval(const EvalResult& r) {
  write_eval_csv(std::cout, r);
  std::cout << '\n';
  write_cmc_csv(std::cout, r);
}

// ---------------------------------------------------------------------------

struct LayoutArgs {
  std::string keypoints, out = "layout";
  std::size_t image_size = 384, grid = 12, levels = 3;
  double padding = 0.3;
};

int cmd_layout(const LayoutArgs& a) {
  std::ifstream in(a.keypoints);
  if (!in) throw InputError("cannot read keypoint file " + a.keypoints);
  const auto records = parse_keypoint_records(in);
  if (records.empty()) throw InputError(a.keypoints + ": no keypoint records");
  RoiConfig rc;
  rc.image_w = rc.image_h = a.image_size;
  rc.grid_rows = rc.grid_cols = a.grid;
  rc.levels = a.levels;
  rc.padding = a.padding;
  const Tensor blank({1, a.image_size, a.image_size});
  for (const auto& rec : records) {
    const PatchSet ps = extract_patches(blank, build_roi_set(rec.keypoints, rc));
    const std::string stem = records.size() == 1 ? a.out : a.out + "_" + rec.image_id;
    auto csv = open_out(stem + ".csv");
    write_layout_csv(csv, ps);
    auto ppm = open_out(stem + ".ppm", true);
    write_layout_ppm(ppm, ps);
    std::cout << stem << ": " << ps.size() << " patches\n";
  }
  return kOk;
}

int cmd_verify(std::size_t trials, std::uint64_t seed) {
  const auto reports = run_verification(trials, seed);
  write_verification_csv(std::cout, reports);
  bool ok = true;
  for (const auto& r : reports) {
    if (r.passed) continue;
    ok = false;
    std::cerr << "FAILED " << r.suite << ": " << r.failure << '\n';
  }
  return ok ? kOk : kFailure;
}

int cmd_bench(const BenchOptions& opt) {
  write_bench_csv(std::cout, run_bench(opt));
  return kOk;
}

struct TrainArgs {
  std::string config, checkpoint = "retina.ckpt", log = "train_log.csv";
  bool eval = false;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  const TrainConfig cfg = config_from(a.config);
  const PreparedData data = prepare_data(cfg);
  const std::size_t every = std::max<std::size_t>(1, cfg.steps / 20);
  TrainResult res = train(cfg, data.train, [&](const LogRow& r) {
    if (!a.quiet && (r.step % every == 0 || r.step + 1 == cfg.steps)) {
      std::cerr << "step " << r.step << " loss " << r.loss << " keep " << r.keep << " batch "
                << r.batch << '\n';
    }
  });
  save_checkpoint(a.checkpoint, res.params.leaves());
  auto log = open_out(a.log);
  write_log_csv(log, res.log);
  if (a.eval) print_eval(evaluate(res.params, cfg, data.gallery, data.probe));
  return kOk;
}

ModelParams load_model(const TrainConfig& cfg, const std::string& checkpoint) {
  if (!std::filesystem::exists(checkpoint)) throw InputError("checkpoint not found: " + checkpoint);
  ModelParams params = make_model(cfg.model, cfg.seed);
  load_checkpoint(checkpoint, params.leaves());
  return params;
}

int cmd_eval(const std::string& config, const std::string& checkpoint) {
  const TrainConfig cfg = config_from(config);
  ModelParams params = load_model(cfg, checkpoint);
  const PreparedData data = prepare_data(cfg);
  print_eval(evaluate(params, cfg, data.gallery, data.probe));
  return kOk;
}

struct AblateArgs {
  std::string mode = "parts", config, checkpoint, order = "top-down";
};

int cmd_ablate(const AblateArgs& a) {
  const TrainConfig cfg = config_from(a.config);
  const PreparedData data = prepare_data(cfg);
  if (a.mode == "masking") {
    const auto arms = masking_ablation(cfg, data, [](const std::string& arm) {
      std::cerr << "training arm " << arm << '\n';
    });
    std::cout << "arm,top1,mAP\n";
    for (const auto& r : arms) std::cout << r.arm << ',' << r.result.top1 << ',' << r.result.mAP << '\n';
    return kOk;
  }
  if (a.checkpoint.empty()) throw InputError("ablate --mode parts needs --checkpoint");
  ModelParams params = load_model(cfg, a.checkpoint);
  const auto order = a.order == "bottom-up" ? AblationOrder::BottomUp : AblationOrder::TopDown;
  std::cout << "step,top1,mAP\n";
  for (const auto& row : part_ablation_eval(params, cfg, data.gallery, data.probe, order))
    std::cout << row.step << ',' << row.result.top1 << ',' << row.result.mAP << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retina Patch tokenisation, masked recognition and semantic part pooling"};
  app.require_subcommand(1);

  LayoutArgs layout;
  auto* c_layout = app.add_subcommand("layout", "Write the patch layout of keypoint records");
  c_layout->add_option("--keypoints", layout.keypoints, "Keypoint record file")->required();
  c_layout->add_option("--image-size", layout.image_size, "Square image side in pixels");
  c_layout->add_option("--grid", layout.grid, "Cells per ROI side");
  c_layout->add_option("--levels", layout.levels, "ROI levels (1-3)");
  c_layout->add_option("--padding", layout.padding, "ROI padding factor");
  c_layout->add_option("--out", layout.out, "Output prefix for .ppm and .csv");

  std::size_t trials = 10;
  std::uint64_t verify_seed = 1;
  auto* c_verify = app.add_subcommand("verify", "Run the correctness suites");
  c_verify->add_option("--trials", trials, "Randomised trials per suite")->check(CLI::PositiveNumber);
  c_verify->add_option("--seed", verify_seed, "Seed");

  BenchOptions bench;
  auto* c_bench = app.add_subcommand("bench", "Full versus masked encoder cost as CSV");
  c_bench->add_option("--tokens", bench.tokens, "Tokens per image");
  c_bench->add_option("--keep-ratio", bench.keep_ratio, "Fraction of tokens kept")
      ->check(CLI::Validator(
          [](std::string& v) {
            double r = 0.0;
            const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), r);
            const bool ok = ec == std::errc{} && end == v.data() + v.size() && r > 0.0 && r <= 1.0;
            return ok ? std::string{} : "keep ratio must be a number in (0, 1]";
          },
          "(0,1]"));
  c_bench->add_option("--dim", bench.dim, "Token width");
  c_bench->add_option("--depth", bench.depth, "Encoder blocks");
  c_bench->add_option("--heads", bench.heads, "Attention heads");
  c_bench->add_option("--reps", bench.reps, "Timed repetitions (fastest is kept)");
  c_bench->add_option("--seed", bench.seed, "Seed");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train on the synthetic split");
  c_train->add_option("--config", tr.config, "Config file (defaults when omitted)");
  c_train->add_option("--checkpoint", tr.checkpoint, "Checkpoint to write");
  c_train->add_option("--log", tr.log, "Per-step log CSV to write");
  c_train->add_flag("--eval", tr.eval, "Evaluate after training");
  c_train->add_flag("--quiet", tr.quiet, "No progress on stderr");

  std::string eval_config, eval_checkpoint;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint on the held-out split");
  c_eval->add_option("--config", eval_config, "Config file (defaults when omitted)");
  c_eval->add_option("--checkpoint", eval_checkpoint, "Checkpoint to read")->required();

  AblateArgs ab;
  auto* c_ablate = app.add_subcommand("ablate", "Part-erasure or masking-policy ablation");
  c_ablate->add_option("--mode", ab.mode, "parts | masking")
      ->check(CLI::IsMember({"parts", "masking"}));
  c_ablate->add_option("--config", ab.config, "Config file (defaults when omitted)");
  c_ablate->add_option("--checkpoint", ab.checkpoint, "Checkpoint (parts mode)");
  c_ablate->add_option("--order", ab.order, "top-down | bottom-up")
      ->check(CLI::IsMember({"top-down", "bottom-up"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kParseError;
  }

  try {
    if (*c_layout) return cmd_layout(layout);
    if (*c_verify) return cmd_verify(trials, verify_seed);
    if (*c_bench) return cmd_bench(bench);
    if (*c_train) return cmd_train(tr);
    if (*c_eval) return cmd_eval(eval_config, eval_checkpoint);
    if (*c_ablate) return cmd_ablate(ab);
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kParseError;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kParseError;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kParseError;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint mismatch: " << e.what() << '\n';
    return kMismatch;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}
