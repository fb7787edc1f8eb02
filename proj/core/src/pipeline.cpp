#include "lirank/pipeline.hpp"

#include <unordered_set>

#include "lirank/errors.hpp"

namespace lirank {

const char* to_string(PipelineMode mode) {
  return mode == PipelineMode::RetrieveOnly ? "retrieve" : "rerank";
}

PipelineMode parse_pipeline_mode(std::string_view name) {
  if (name == "retrieve" || name == "retrieve-only") return PipelineMode::RetrieveOnly;
  if (name == "rerank" || name == "retrieve-rerank") return PipelineMode::RetrieveRerank;
  throw InvalidArgument("unknown pipeline mode '" + std::string(name) + "' (expected retrieve|rerank)");
}

void PipelineConfig::validate() const {
  if (k == 0 || k_init == 0) throw InvalidArgument("k and k_init must be >= 1");
  if (k > k_init) {
    throw InvalidArgument("k (" + std::to_string(k) + ") must not exceed k_init (" +
                          std::to_string(k_init) + ")");
  }
  if (first_stage == FirstStageKind::Ann && ef_search < k_init) {
    throw InvalidArgument("ef_search must be >= k_init for ANN first stage");
  }
}

Pipeline::Pipeline(PipelineConfig cfg, const FlatIndex& flat, const HnswIndex* ann,
                   const TokenProvider* tokens)
    : cfg_(cfg), flat_(&flat), ann_(ann), tokens_(tokens) {
  cfg_.validate();
  if (flat.kind() != cfg_.kind) {
    throw InvalidArgument(std::string("index similarity is ") + to_string(flat.kind()) +
                          " but pipeline is configured for " + to_string(cfg_.kind));
  }
  if (cfg_.first_stage == FirstStageKind::Ann) {
    if (!ann_) throw InvalidArgument("ANN first stage requested without an ANN index");
    if (ann_->base().kind() != cfg_.kind) throw InvalidArgument("ANN index similarity mismatch");
  }
  if (cfg_.mode == PipelineMode::RetrieveRerank && !tokens_) {
    throw InvalidArgument("rerank mode requires a token store");
  }
}

RankedRun Pipeline::first_stage(const DenseVector& q_dense, std::string query_id) const {
  const std::size_t depth = cfg_.mode == PipelineMode::RetrieveRerank ? cfg_.k_init : cfg_.k;
  if (cfg_.first_stage == FirstStageKind::Ann) {
    return ann_->search(q_dense, depth, std::max(cfg_.ef_search, depth), std::move(query_id));
  }
  return flat_->search_exact(q_dense, depth, std::move(query_id));
}

RankedRun Pipeline::rerank_stage(const RankedRun& candidates, const TokenMatrix& q_tokens) const {
  if (!tokens_) throw InvalidArgument("rerank stage requires a token store");
  return rerank(candidates, q_tokens, *tokens_, cfg_.kind, cfg_.k);
}

RankedRun Pipeline::search(const DenseVector& q_dense, const TokenMatrix* q_tokens,
                           std::string query_id) const {
  if (cfg_.mode == PipelineMode::RetrieveRerank && !q_tokens) {
    throw InvalidArgument("rerank mode requires query token embeddings");
  }
  auto first = first_stage(q_dense, std::move(query_id));
  if (cfg_.mode == PipelineMode::RetrieveOnly) return first;
  return rerank_stage(first, *q_tokens);
}

ContextBundle assemble_context(const RankedRun& run, const Corpus& corpus, std::string query_text) {
  ContextBundle bundle;
  bundle.query_text = std::move(query_text);
  std::unordered_set<std::string_view> seen;
  for (const auto& c : run.candidates) {
    if (!seen.insert(c.doc_id).second) {
      throw InvalidArgument("duplicate doc_id '" + c.doc_id + "' in run '" + run.query_id + "'");
    }
    const Document* doc = corpus.find(c.doc_id);
    if (!doc) throw NotFound("doc_id '" + c.doc_id + "' not in corpus");
    bundle.passages.push_back(ContextPassage{doc->id, doc->title, doc->text});
    bundle.scores.push_back(c.score);
  }
  return bundle;
}

}  // namespace lirank
