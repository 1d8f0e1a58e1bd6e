#include <benchmark/benchmark.h>

#include <vector>

#include "headgame/arbitration.hpp"
#include "headgame/interaction.hpp"
#include "headgame/numerics.hpp"
#include "headgame/rng.hpp"
#include "headgame/trainer.hpp"
#include "headgame/verify.hpp"

using namespace headgame;

namespace {

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng = make_stream(1, "bench");
  const Matrix a = gaussian_matrix(rng, n, n);
  const Matrix b = gaussian_matrix(rng, n, n);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(8, 128)->Complexity();

void BM_SymEig(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng = make_stream(2, "bench");
  const Matrix a = gaussian_matrix(rng, n, n);
  const Matrix m = matmul_tn(a, a);
  for (auto _ : state) benchmark::DoNotOptimize(sym_eig(m));
}
BENCHMARK(BM_SymEig)->Arg(8)->Arg(16)->Arg(32)->Arg(64);

void BM_Interaction(benchmark::State& state) {
  const auto heads = static_cast<std::size_t>(state.range(0));
  Rng rng = make_stream(3, "bench");
  std::vector<Matrix> blocks;
  for (std::size_t i = 0; i < heads; ++i) blocks.push_back(gaussian_matrix(rng, 8, 4));
  const Matrix eta = gaussian_matrix(rng, 32, 8);
  for (auto _ : state)
    benchmark::DoNotOptimize(interaction_matrix(weight_coupling(blocks), gradient_coupling(blocks, eta)));
}
BENCHMARK(BM_Interaction)->Arg(4)->Arg(8)->Arg(16);

void BM_NashWeights(benchmark::State& state) {
  Rng rng = make_stream(4, "bench");
  GradientSet gs;
  gs.names = {"ce", "ldb", "abt"};
  for (int k = 0; k < 3; ++k) {
    const Matrix g = gaussian_matrix(rng, 1, 1000);
    gs.gradients.emplace_back(g.data().begin(), g.data().end());
  }
  const std::vector<double> fallback{1.0, 0.352, 0.179};
  for (auto _ : state) benchmark::DoNotOptimize(nash_weights(gs, fallback));
}
BENCHMARK(BM_NashWeights);

void BM_TrainSteps(benchmark::State& state) {
  Config cfg = fast_config();
  cfg.train.mode = state.range(0) == 0 ? TrainMode::kBaselineCe : TrainMode::kGame;
  cfg.train.steps = 20;
  cfg.train.snapshot_every = 20;
  const TrainSetup setup = make_setup(cfg);
  const Task task = make_task(cfg.task, cfg.model.seq_len, 1);
  for (auto _ : state) benchmark::DoNotOptimize(train(setup, task, 1));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * cfg.train.steps));
}
BENCHMARK(BM_TrainSteps)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
