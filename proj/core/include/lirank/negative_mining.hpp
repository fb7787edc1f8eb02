#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lirank/bm25.hpp"
#include "lirank/io.hpp"
#include "lirank/types.hpp"

namespace lirank {

enum class MiningStrategy { Random, Bm25Hard, RetrieverMined };

const char* to_string(MiningStrategy s);
MiningStrategy parse_mining_strategy(std::string_view name);

struct MiningConfig {
  MiningStrategy strategy = MiningStrategy::Bm25Hard;
  std::size_t negatives_per_pair = 32;
  std::size_t bm25_pool = 42;
  std::uint64_t seed = 0;

  void validate() const;
};

struct MinedNegatives {
  std::vector<std::string> doc_ids;
  /// Fewer than negatives_per_pair were available.
  bool shortfall = false;
  /// Size of the candidate list after removing the gold id.
  std::size_t pool_after_exclusion = 0;
};

/// Uniform sample without replacement over the corpus minus the gold id. The
/// per-pair RNG is seeded from (cfg.seed, query_id). Throws InvalidArgument if the
/// corpus holds no more than negatives_per_pair documents.
MinedNegatives mine_random(const io::TrainingPairSpec& spec, const Corpus& corpus, const MiningConfig& cfg);

/// BM25 top-`bm25_pool`, gold removed, then the lowest-ranked negatives_per_pair.
MinedNegatives mine_bm25(const io::TrainingPairSpec& spec, const SparseIndex& index, const MiningConfig& cfg);

/// First negatives_per_pair ids of a first-stage run after removing the gold id.
/// Throws InvalidArgument when the run holds fewer than negatives_per_pair + 1 docs.
MinedNegatives mine_from_retriever(const io::TrainingPairSpec& spec, const RankedRun& first_stage,
                                   const MiningConfig& cfg);

/// Mines every pair in order; `runs` is consulted only for RetrieverMined and must be
/// parallel to `specs`. `corpus` may be empty unless the strategy is Random; when
/// given, every positive must be in it. Uses up to `threads` workers; output is
/// independent of it.
std::vector<io::TrainingPairRecord> mine_pairs(const std::vector<io::TrainingPairSpec>& specs,
                                               const Corpus& corpus, const SparseIndex* index,
                                               const std::vector<RankedRun>* runs,
                                               const MiningConfig& cfg, std::size_t threads = 1);

}  // namespace lirank
