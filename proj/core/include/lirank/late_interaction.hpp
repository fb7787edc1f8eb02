#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lirank/types.hpp"

namespace lirank {

/// Sum over query tokens of the best similarity against any document token.
/// Accumulates in double. Throws DimensionMismatch, or InvalidArgument for an
/// empty matrix or a zero-norm row under Cosine.
double maxsim_score(const TokenMatrix& query, const TokenMatrix& doc, SimilarityKind kind);

/// Per-query-token argmax document row, as used by maxsim_score. Ties pick the
/// lowest row index.
std::vector<std::size_t> maxsim_alignment(const TokenMatrix& query, const TokenMatrix& doc,
                                          SimilarityKind kind);

/// Read access to per-document token matrices.
class TokenProvider {
 public:
  virtual ~TokenProvider() = default;
  virtual std::size_t dim() const = 0;
  /// nullptr when the id is unknown.
  virtual std::shared_ptr<const TokenMatrix> find(std::string_view doc_id) const = 0;
};

/// Fully in-memory store.
class TokenStore final : public TokenProvider {
 public:
  explicit TokenStore(std::size_t dim);

  /// Throws DimensionMismatch, or InvalidArgument for an empty/duplicate id.
  void add(std::string doc_id, TokenMatrix matrix);

  static TokenStore from_file(const std::filesystem::path& path);

  std::size_t dim() const override { return dim_; }
  std::size_t size() const { return matrices_.size(); }
  std::shared_ptr<const TokenMatrix> find(std::string_view doc_id) const override;

 private:
  std::size_t dim_;
  std::unordered_map<std::string, std::shared_ptr<const TokenMatrix>> matrices_;
};

/// Reads only record offsets up front; matrices are decoded on demand from the
/// token-kind embedding file. Thread-safe: every lookup opens its own stream.
class LazyTokenStore final : public TokenProvider {
 public:
  explicit LazyTokenStore(std::filesystem::path path);

  std::size_t dim() const override { return dim_; }
  std::size_t size() const { return offsets_.size(); }
  std::shared_ptr<const TokenMatrix> find(std::string_view doc_id) const override;

 private:
  std::filesystem::path path_;
  std::size_t dim_ = 0;
  bool normalized_ = false;
  std::unordered_map<std::string, std::uint64_t> offsets_;
};

/// Re-scores first-stage candidates with MaxSim and keeps the top-k. The output is
/// a permutation-and-truncation of the input: no new doc_ids can appear.
/// Throws NotFound naming the first candidate without a token matrix.
RankedRun rerank(const RankedRun& first_stage, const TokenMatrix& query, const TokenProvider& store,
                 SimilarityKind kind, std::size_t k);

}  // namespace lirank
