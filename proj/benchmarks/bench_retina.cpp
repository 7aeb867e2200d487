#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "retina/backbone.hpp"
#include "retina/bench.hpp"
#include "retina/masked_attention.hpp"
#include "retina/model.hpp"
#include "retina/retina_patch.hpp"
#include "retina/synthetic.hpp"
#include "retina/trainer.hpp"
#include "retina/verify.hpp"

namespace {

using namespace retina;

Tensor random_tensor(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Tensor t({rows, cols});
  for (auto& v : t.data()) v = nd(rng);
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  const Tensor a = random_tensor(m, k, 1), b = random_tensor(k, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.counters["FLOP/s"] = benchmark::Counter(2.0 * static_cast<double>(m * k * n),
                                                benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Matmul)
    ->Args({1400, 768, 64})
    ->Args({1400, 64, 192})
    ->Args({1400, 256, 64})
    ->Args({16, 9728, 256})
    ->Unit(benchmark::kMicrosecond);

// Mask bias against materialised duplicates at growing repeat counts.
void BM_ScaledAttention(benchmark::State& state) {
  const auto nm = static_cast<std::size_t>(state.range(0));
  const Tensor q = random_tensor(64, 32, 1), k = random_tensor(65, 32, 2), v = random_tensor(65, 32, 3);
  for (auto _ : state) benchmark::DoNotOptimize(scaled_attention(q, k, v, nm));
}
BENCHMARK(BM_ScaledAttention)->Arg(0)->Arg(64)->Arg(288)->Unit(benchmark::kMicrosecond);

void BM_DuplicationOracle(benchmark::State& state) {
  const auto nm = static_cast<std::size_t>(state.range(0));
  const Tensor q = random_tensor(64, 32, 1), k = random_tensor(65, 32, 2), v = random_tensor(65, 32, 3);
  for (auto _ : state) benchmark::DoNotOptimize(duplication_oracle(q, k, v, nm));
}
BENCHMARK(BM_DuplicationOracle)->Arg(0)->Arg(64)->Arg(288)->Unit(benchmark::kMicrosecond);

// Encoder forward over 432 tokens with range(0) percent of them kept.
void BM_EncoderForward(benchmark::State& state) {
  BenchOptions opt;
  opt.keep_ratio = static_cast<double>(state.range(0)) / 100.0;
  const BenchResult counted = count_bench(opt);
  const BackboneConfig cfg{opt.dim, opt.heads, opt.depth, opt.ffn_ratio, 1};
  std::mt19937_64 rng(1);
  BackboneParams params = make_backbone(cfg, rng);
  ParamLeaf mask("mask_token", random_tensor(1, opt.dim, 4));
  TokenBatch batch;
  batch.items.push_back(apply_masking(random_tensor(opt.tokens, opt.dim, 5), counted.kept_tokens, mask, 6));
  for (auto _ : state) benchmark::DoNotOptimize(forward(batch, cfg, params));
  state.counters["tokens"] = static_cast<double>(batch.items.front().tokens.rows());
  state.counters["FLOP/s"] = benchmark::Counter(static_cast<double>(counted.flops_masked),
                                                benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_EncoderForward)->Arg(100)->Arg(50)->Arg(33)->Unit(benchmark::kMillisecond);

void BM_ExtractPatches(benchmark::State& state) {
  std::mt19937_64 rng(3);
  RoiConfig rc;
  const Tensor image({3, rc.image_h, rc.image_w}, 0.5);
  const KeypointSet kps = random_keypoints(rng, 384.0, 384.0);
  const ROISet rois = build_roi_set(kps, rc);
  for (auto _ : state) benchmark::DoNotOptimize(extract_patches(image, rois));
}
BENCHMARK(BM_ExtractPatches)->Unit(benchmark::kMicrosecond);

void BM_RenderSample(benchmark::State& state) {
  const SyntheticIdentity id = make_identity(7, 3, Regime::ShortTerm);
  std::uint64_t pose = 0;
  for (auto _ : state) {
    ++pose;
    benchmark::DoNotOptimize(render_sample(id, pose, pose + 1, Regime::ShortTerm, 96));
  }
}
BENCHMARK(BM_RenderSample)->Unit(benchmark::kMicrosecond);

// One masked training step's forward and backward at the desk configuration.
void BM_TrainingStep(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  TrainConfig cfg;
  cfg.finalize();
  std::vector<Sample> samples;
  for (std::size_t i = 0; i < batch; ++i) {
    samples.push_back(render_sample(make_identity(7, i, Regime::ShortTerm), i, i, Regime::ShortTerm,
                                    cfg.model.image_size));
    samples.back().label = i % cfg.model.classes;
  }
  const std::vector<Example> examples = prepare_examples(samples, cfg.model);
  ModelParams params = make_model(cfg.model, 1);
  std::mt19937_64 rng(2);
  std::vector<ModelInput> inputs;
  for (const Example& ex : examples) {
    const std::size_t n = ex.image.count();
    inputs.push_back(masked_input(ex, choose_kept_indices(n, std::min<std::size_t>(n, 48), rng), true));
  }
  for (auto _ : state) {
    ag::Tape tape;
    ag::Var loss = training_loss(tape, params, cfg.model, inputs);
    tape.backward(loss);
    benchmark::DoNotOptimize(params.classifier.grad.ptr());
  }
}
BENCHMARK(BM_TrainingStep)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_SampleKeepCount(benchmark::State& state) {
  const MaskSampler s{112, 432, 4.0, std::nullopt};
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(sample_keep_count(s, u(rng)));
}
BENCHMARK(BM_SampleKeepCount);

}  // namespace

BENCHMARK_MAIN();
