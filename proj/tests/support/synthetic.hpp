#pragma once

// Seeded synthetic data shared by unit tests, the acceptance gate, benchmarks and
// the fixture generator.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lirank/dense_index.hpp"
#include "lirank/io.hpp"
#include "lirank/types.hpp"
#include "oracles.hpp"

namespace lirank::testing {

namespace fs = std::filesystem;

/// Checked-in fixture directory (tests/fixtures).
fs::path fixtures_dir();

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "lirank");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

std::string read_file(const fs::path& path);
void write_file(const fs::path& path, const std::string& bytes);

std::vector<float> gaussian(std::mt19937_64& rng, std::size_t n, double sigma = 1.0);
Rows gaussian_rows(std::mt19937_64& rng, std::size_t count, std::size_t dim, double sigma = 1.0);
TokenMatrix to_matrix(const Rows& rows);
Rows to_rows(const TokenMatrix& m);
std::vector<float> mean_row(const Rows& rows);

/// ids "p00000".. over seeded N(0, 1) vectors.
DenseRecords gaussian_records(std::size_t n, std::size_t dim, std::uint64_t seed, const std::string& prefix = "p");

// ---------------------------------------------------------------------------
// "mini": a small end-to-end corpus (text, dense and token embeddings, queries,
// qrels, MCQ items, pair specs). Dense vectors are the mean of the token rows.
// ---------------------------------------------------------------------------

struct MiniFixture {
  std::vector<Document> docs;
  std::vector<std::pair<std::string, TokenMatrix>> doc_tokens;
  DenseRecords doc_dense;
  std::vector<Query> queries;
  std::vector<std::pair<std::string, TokenMatrix>> query_tokens;
  DenseRecords query_dense;
  io::Qrels qrels;
  std::vector<io::McqItem> items;
  std::vector<io::TrainingPairSpec> pairs;
};

inline constexpr std::uint64_t kMiniSeed = 20240611;

MiniFixture make_mini_fixture(std::uint64_t seed = kMiniSeed, std::size_t docs = 80, std::size_t queries = 16,
                              std::size_t dim = 16);

/// corpus.jsonl, queries.jsonl, qrels.tsv, items.jsonl, pairs.jsonl,
/// doc_dense.lie, doc_tokens.lie, query_dense.lie, query_tokens.lie
void write_mini_fixture(const MiniFixture& fx, const fs::path& dir);

// ---------------------------------------------------------------------------
// Recall fixture: 10 queries whose first gold doc sits at a hand-chosen rank.
// ---------------------------------------------------------------------------

inline const std::vector<std::size_t> kRecallGoldRanks = {1, 2, 4, 4, 6, 11, 1, 3, 5, 9};

/// Run depth 12; rank 11 means the gold doc is just past the top 10.
std::pair<std::vector<RankedRun>, io::Qrels> make_recall_fixture();

// ---------------------------------------------------------------------------
// Mining fixture: 50 docs m00..m49 of equal length where doc i holds "alpha"
// (50 - i) times, so BM25 on "alpha" ranks them m00 > m01 > ... > m49.
// ---------------------------------------------------------------------------

std::vector<Document> make_mining_corpus();

// ---------------------------------------------------------------------------
// Re-ranking fixture: 10% of queries have three distractors sharing the gold
// doc's dense vector (sorting before it by id) but with different token rows.
// ---------------------------------------------------------------------------

struct RerankFixture {
  DenseRecords doc_dense;
  std::vector<std::pair<std::string, TokenMatrix>> doc_tokens;
  std::vector<std::string> query_ids;
  std::vector<DenseVector> query_dense;
  std::vector<TokenMatrix> query_tokens;
  io::Qrels qrels;
  std::vector<bool> has_distractors;
};

RerankFixture make_rerank_fixture(std::uint64_t seed, std::size_t queries = 100, std::size_t background_docs = 400,
                                  std::size_t dim = 16);

// ---------------------------------------------------------------------------
// Training fixture: passages are a low-dimensional signal plus high-variance
// nuisance dims; queries share only the signal. A linear map that suppresses the
// nuisance separates them, the identity does not.
// ---------------------------------------------------------------------------

struct TrainingFixture {
  std::size_t dim = 0;
  DenseRecords passages;
  /// Held-out evaluation queries, gold = passages[i] for query i.
  std::vector<std::pair<std::string, std::vector<float>>> eval_queries;
  io::Qrels eval_qrels;
  /// Training pairs over passages disjoint from the evaluation golds.
  std::vector<std::vector<float>> train_queries;
  std::vector<std::vector<float>> train_positives;
};

TrainingFixture make_training_fixture(std::uint64_t seed, std::size_t passages = 2000, std::size_t eval_queries = 200,
                                      std::size_t train_pairs = 1000);

// ---------------------------------------------------------------------------
// Latency fixture: 10k passages, dense dim 64 and 4 token rows of dim 32 each.
// ---------------------------------------------------------------------------

struct LatencyFixturePaths {
  fs::path doc_dense;
  fs::path doc_tokens;
  fs::path query_dense;
  fs::path query_tokens;
};

LatencyFixturePaths write_latency_fixture(const fs::path& dir, std::size_t passages = 10000,
                                          std::size_t queries = 50, std::uint64_t seed = 99);

/// Every checked-in fixture (mini/, recall/, mining/, formats/) under `root`.
/// bm25_toy.jsonl and prompts/ are hand-written and not regenerated.
void write_all_fixtures(const fs::path& root);

}  // namespace lirank::testing
