#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "lirank/dense_index.hpp"
#include "lirank/late_interaction.hpp"
#include "lirank/types.hpp"

namespace lirank {

enum class PipelineMode { RetrieveOnly, RetrieveRerank };
enum class FirstStageKind { Exact, Ann };

const char* to_string(PipelineMode mode);
PipelineMode parse_pipeline_mode(std::string_view name);

inline constexpr std::size_t kDefaultKInit = 20;
inline constexpr std::size_t kDefaultK = 5;
inline constexpr std::size_t kWideKInit = 100;

struct PipelineConfig {
  std::size_t k_init = kDefaultKInit;
  std::size_t k = kDefaultK;
  PipelineMode mode = PipelineMode::RetrieveRerank;
  SimilarityKind kind = SimilarityKind::Cosine;
  FirstStageKind first_stage = FirstStageKind::Exact;
  std::size_t ef_search = kDefaultEfSearch;

  /// Throws InvalidArgument when k or k_init is 0, k > k_init, or ef_search < k_init
  /// under ANN.
  void validate() const;
};

/// Immutable two-stage retriever. Holds non-owning references to prebuilt indexes.
class Pipeline {
 public:
  /// `ann` is required when cfg.first_stage == Ann; `tokens` when mode is
  /// RetrieveRerank. Index kinds must match cfg.kind.
  Pipeline(PipelineConfig cfg, const FlatIndex& flat, const HnswIndex* ann = nullptr,
           const TokenProvider* tokens = nullptr);

  const PipelineConfig& config() const { return cfg_; }

  /// First stage only: top-k_init in RerankMode, top-k in RetrieveOnly.
  RankedRun first_stage(const DenseVector& q_dense, std::string query_id = {}) const;

  /// Second stage over an already computed first-stage run.
  RankedRun rerank_stage(const RankedRun& candidates, const TokenMatrix& q_tokens) const;

  /// `q_tokens` may be null in RetrieveOnly mode; in RetrieveRerank mode a null
  /// pointer throws InvalidArgument.
  RankedRun search(const DenseVector& q_dense, const TokenMatrix* q_tokens,
                   std::string query_id = {}) const;

 private:
  PipelineConfig cfg_;
  const FlatIndex* flat_;
  const HnswIndex* ann_;
  const TokenProvider* tokens_;
};

struct ContextPassage {
  std::string doc_id;
  std::string title;
  std::string text;
};

struct ContextBundle {
  std::string query_text;
  std::vector<ContextPassage> passages;
  std::vector<double> scores;
};

/// Passages in rank order, untruncated. Throws NotFound for an unknown doc_id and
/// InvalidArgument for a duplicate.
ContextBundle assemble_context(const RankedRun& run, const Corpus& corpus, std::string query_text);

}  // namespace lirank
