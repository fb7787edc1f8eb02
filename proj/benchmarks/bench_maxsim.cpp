#include <benchmark/benchmark.h>

#include "bench_data.hpp"
#include "lirank/late_interaction.hpp"

namespace {

// range(0): query tokens, range(1): doc tokens. dim 128.
void BM_MaxSim(benchmark::State& state) {
  std::mt19937_64 rng(5);
  const auto q = bench::tokens(rng, static_cast<std::size_t>(state.range(0)), 128);
  const auto d = bench::tokens(rng, static_cast<std::size_t>(state.range(1)), 128);
  for (auto _ : state) benchmark::DoNotOptimize(lirank::maxsim_score(q, d, lirank::SimilarityKind::Dot));
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(1));
}
BENCHMARK(BM_MaxSim)->Args({32, 128})->Args({32, 512})->Args({64, 256});

void BM_MaxSimCosine(benchmark::State& state) {
  std::mt19937_64 rng(6);
  const auto q = bench::tokens(rng, 32, 128);
  const auto d = bench::tokens(rng, 256, 128);
  for (auto _ : state) benchmark::DoNotOptimize(lirank::maxsim_score(q, d, lirank::SimilarityKind::Cosine));
}
BENCHMARK(BM_MaxSimCosine);

}  // namespace
