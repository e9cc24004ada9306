#include <benchmark/benchmark.h>

#include "sfbd/dataio.hpp"
#include "sfbd/losses.hpp"
#include "sfbd/pipeline.hpp"

using namespace sfbd;

namespace {

Tensor gaussian(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = n(rng);
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const std::size_t n = state.range(0);
  const Tensor a = gaussian({n, n}, 1), b = gaussian({n, n}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul_values(a, b));
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

// Batch-sized unified matrix: B x (img + txt) columns.
void BM_SvdSpectrum(benchmark::State& state) {
  const Tensor a = gaussian({16, static_cast<std::size_t>(state.range(0))}, 3);
  for (auto _ : state) {
    Tape t;
    benchmark::DoNotOptimize(ad::svd_spectrum(t.constant(a)).value());
  }
}
BENCHMARK(BM_SvdSpectrum)->Arg(32)->Arg(192);

void BM_MmdMedianHeuristic(benchmark::State& state) {
  const std::size_t n = state.range(0);
  const Tensor x = gaussian({n, 128}, 4), y = gaussian({n, 128}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(mmd_value(x, y, MmdConfig{}));
}
BENCHMARK(BM_MmdMedianHeuristic)->Arg(16)->Arg(64);

// One adaptation epoch at desk scale (forward, L_ADP, backward, AdamW per batch).
void BM_AdaptEpoch(benchmark::State& state) {
  const SyntheticCohort cohort = gen_synthetic(SyntheticConfig::desk());
  RunConfig src = RunConfig::desk(Phase::source);
  src.epochs = 1;
  src.eval_each_epoch = false;
  const Checkpoint source = train_source(src, std::span(cohort.subjects.data(), 3)).checkpoint;
  RunConfig cfg = RunConfig::desk(Phase::adaptation);
  cfg.epochs = 1;
  cfg.eval_each_epoch = false;
  std::size_t batches = 0;
  for (auto _ : state) {
    batches = 0;
    adapt_target(cfg, source, cohort.subjects[3], [&](const BatchLog&) { ++batches; });
  }
  state.counters["batches"] = static_cast<double>(batches);
}
BENCHMARK(BM_AdaptEpoch)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
