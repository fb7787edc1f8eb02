#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include "lirank/bm25.hpp"

namespace {

// Zipf-ish vocabulary so that head terms have long posting lists.
std::string random_text(std::mt19937_64& rng, std::size_t words) {
  std::geometric_distribution<int> term(0.002);
  std::string out;
  for (std::size_t i = 0; i < words; ++i) {
    if (i) out += ' ';
    out += "w" + std::to_string(term(rng));
  }
  return out;
}

std::vector<lirank::Document> corpus(std::size_t n) {
  std::mt19937_64 rng(11);
  std::vector<lirank::Document> docs;
  docs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) docs.push_back({"d" + std::to_string(i), "", random_text(rng, 80)});
  return docs;
}

void BM_Bm25Build(benchmark::State& state) {
  const auto docs = corpus(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(lirank::SparseIndex::build(docs));
}
BENCHMARK(BM_Bm25Build)->Arg(10000)->Unit(benchmark::kMillisecond);

void BM_Bm25Search(benchmark::State& state) {
  static const auto index = lirank::SparseIndex::build(corpus(10000));
  std::mt19937_64 rng(12);
  std::vector<std::string> queries;
  for (int i = 0; i < 64; ++i) queries.push_back(random_text(rng, static_cast<std::size_t>(state.range(0))));
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(index.search(queries[i++ % queries.size()], 10));
}
BENCHMARK(BM_Bm25Search)->Arg(4)->Arg(16)->Unit(benchmark::kMicrosecond);

}  // namespace
