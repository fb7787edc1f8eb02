#include "lirank/negative_mining.hpp"

#include <algorithm>
#include <mutex>
#include <atomic>
#include <random>
#include <thread>
#include <unordered_set>

#include "lirank/errors.hpp"
#include "lirank/rng.hpp"

namespace lirank {

const char* to_string(MiningStrategy s) {
  switch (s) {
    case MiningStrategy::Random: return "random";
    case MiningStrategy::Bm25Hard: return "bm25";
    case MiningStrategy::RetrieverMined: return "retriever";
  }
  return "?";
}

MiningStrategy parse_mining_strategy(std::string_view name) {
  if (name == "random") return MiningStrategy::Random;
  if (name == "bm25") return MiningStrategy::Bm25Hard;
  if (name == "retriever") return MiningStrategy::RetrieverMined;
  throw InvalidArgument("unknown mining strategy '" + std::string(name) +
                        "' (expected random|bm25|retriever)");
}

void MiningConfig::validate() const {
  if (negatives_per_pair == 0) throw InvalidArgument("negatives_per_pair must be >= 1");
  if (strategy == MiningStrategy::Bm25Hard && negatives_per_pair + 1 > bm25_pool) {
    throw InvalidArgument("negatives_per_pair must be <= bm25_pool - 1");
  }
}

MinedNegatives mine_random(const io::TrainingPairSpec& spec, const Corpus& corpus, const MiningConfig& cfg) {
  const std::size_t n = cfg.negatives_per_pair;
  const std::size_t available = corpus.size() - (corpus.contains(spec.positive_doc_id) ? 1 : 0);
  if (corpus.size() <= n || available < n) {
    throw InvalidArgument("corpus of " + std::to_string(corpus.size()) + " documents is too small for " +
                          std::to_string(n) + " random negatives");
  }
  std::mt19937_64 rng(derive_seed(cfg.seed, spec.query_id));
  MinedNegatives out;
  out.pool_after_exclusion = available;
  std::unordered_set<std::size_t> taken;
  while (out.doc_ids.size() < n) {
    const auto ord = static_cast<std::size_t>(uniform_index(rng, corpus.size()));
    const auto& id = corpus[ord].id;
    if (id == spec.positive_doc_id || !taken.insert(ord).second) continue;
    out.doc_ids.push_back(id);
  }
  return out;
}

namespace {

std::vector<std::string> without_gold(const RankedRun& run, const std::string& gold) {
  std::vector<std::string> ids;
  ids.reserve(run.candidates.size());
  for (const auto& c : run.candidates) {
    if (c.doc_id != gold) ids.push_back(c.doc_id);
  }
  return ids;
}

}  // namespace

MinedNegatives mine_bm25(const io::TrainingPairSpec& spec, const SparseIndex& index, const MiningConfig& cfg) {
  const auto pool = index.search(spec.query_text, cfg.bm25_pool, spec.query_id);
  auto ids = without_gold(pool, spec.positive_doc_id);
  MinedNegatives out;
  out.pool_after_exclusion = ids.size();
  if (ids.size() < cfg.negatives_per_pair) {
    out.shortfall = true;
    out.doc_ids = std::move(ids);
    return out;
  }
  // Bottom ranks of the post-exclusion pool.
  out.doc_ids.assign(ids.end() - static_cast<std::ptrdiff_t>(cfg.negatives_per_pair), ids.end());
  return out;
}

MinedNegatives mine_from_retriever(const io::TrainingPairSpec& spec, const RankedRun& first_stage,
                                   const MiningConfig& cfg) {
  if (first_stage.candidates.size() < cfg.negatives_per_pair + 1) {
    throw InvalidArgument("retriever run for '" + spec.query_id + "' has depth " +
                          std::to_string(first_stage.candidates.size()) + ", need at least " +
                          std::to_string(cfg.negatives_per_pair + 1));
  }
  auto ids = without_gold(first_stage, spec.positive_doc_id);
  MinedNegatives out;
  out.pool_after_exclusion = ids.size();
  ids.resize(cfg.negatives_per_pair);
  out.doc_ids = std::move(ids);
  return out;
}

std::vector<io::TrainingPairRecord> mine_pairs(const std::vector<io::TrainingPairSpec>& specs,
                                               const Corpus& corpus, const SparseIndex* index,
                                               const std::vector<RankedRun>* runs,
                                               const MiningConfig& cfg, std::size_t threads) {
  cfg.validate();
  if (cfg.strategy == MiningStrategy::Bm25Hard && !index) {
    throw InvalidArgument("BM25 mining requires a sparse index");
  }
  if (cfg.strategy == MiningStrategy::RetrieverMined && (!runs || runs->size() != specs.size())) {
    throw InvalidArgument("retriever mining requires one first-stage run per pair");
  }
  // Positives are checked against the corpus when one is given, else against the
  // BM25 index's documents. Retriever mining without a corpus has nothing to check.
  std::unordered_set<std::string> indexed;
  if (corpus.empty() && index) {
    for (std::size_t i = 0; i < index->doc_count(); ++i) indexed.insert(index->doc_id(i));
  }
  const bool checkable = !corpus.empty() || index;
  for (const auto& s : specs) {
    const bool known = !corpus.empty() ? corpus.contains(s.positive_doc_id) : indexed.count(s.positive_doc_id) > 0;
    if (checkable && !known) {
      throw NotFound("positive doc '" + s.positive_doc_id + "' for query '" + s.query_id + "' not in corpus");
    }
  }

  std::vector<io::TrainingPairRecord> out(specs.size());
  auto mine_one = [&](std::size_t i) {
    const auto& s = specs[i];
    MinedNegatives m;
    switch (cfg.strategy) {
      case MiningStrategy::Random: m = mine_random(s, corpus, cfg); break;
      case MiningStrategy::Bm25Hard: m = mine_bm25(s, *index, cfg); break;
      case MiningStrategy::RetrieverMined: m = mine_from_retriever(s, (*runs)[i], cfg); break;
    }
    out[i] = io::TrainingPairRecord{s.query_id, s.positive_doc_id, std::move(m.doc_ids),
                                    to_string(cfg.strategy), m.shortfall};
  };

  threads = std::max<std::size_t>(1, std::min(threads, specs.size()));
  if (threads == 1) {
    for (std::size_t i = 0; i < specs.size(); ++i) mine_one(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < specs.size();) {
        try {
          mine_one(i);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace lirank
