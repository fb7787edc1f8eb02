#include <benchmark/benchmark.h>

#include "bench_data.hpp"

namespace {

constexpr std::size_t kDim = 128;

void BM_FlatSearch(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto index = lirank::FlatIndex::build(bench::records(n, kDim, 1), lirank::SimilarityKind::Cosine);
  std::mt19937_64 rng(2);
  const lirank::DenseVector q(bench::gaussian(rng, kDim));
  for (auto _ : state) benchmark::DoNotOptimize(index.search_exact(q, 10));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_FlatSearch)->Arg(1000)->Arg(10000)->Unit(benchmark::kMicrosecond);

void BM_HnswBuild(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto flat = lirank::FlatIndex::build(bench::records(n, kDim, 1), lirank::SimilarityKind::Cosine);
  for (auto _ : state) benchmark::DoNotOptimize(lirank::HnswIndex::build(flat));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_HnswBuild)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_HnswSearch(benchmark::State& state) {
  const auto ef = static_cast<std::size_t>(state.range(0));
  static const auto index = lirank::HnswIndex::build(
      lirank::FlatIndex::build(bench::records(10000, kDim, 1), lirank::SimilarityKind::Cosine));
  std::mt19937_64 rng(3);
  std::vector<lirank::DenseVector> queries;
  for (int i = 0; i < 64; ++i) queries.emplace_back(bench::gaussian(rng, kDim));
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(index.search(queries[i++ % queries.size()], 10, ef));
}
BENCHMARK(BM_HnswSearch)->Arg(16)->Arg(64)->Arg(128)->Arg(256)->Unit(benchmark::kMicrosecond);

}  // namespace
