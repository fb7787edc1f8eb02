#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace lirank {

struct Document {
  std::string id;
  std::string title;
  std::string text;
};

struct Query {
  std::string id;
  std::string text;
  std::vector<std::string> gold_doc_ids;
};

enum class SimilarityKind : std::uint8_t { Dot = 0, Cosine = 1 };

const char* to_string(SimilarityKind kind);
SimilarityKind parse_similarity_kind(std::string_view name);

/// Single-vector embedding. Values are validated finite on construction.
class DenseVector {
 public:
  DenseVector() = default;
  explicit DenseVector(std::vector<float> values);

  std::size_t dim() const { return values_.size(); }
  std::span<const float> values() const { return values_; }
  double norm() const;

  bool operator==(const DenseVector&) const = default;

 private:
  std::vector<float> values_;
};

/// Row-major token_count x dim matrix of per-token embeddings.
class TokenMatrix {
 public:
  static constexpr double kNormTolerance = 1e-4;

  TokenMatrix() = default;
  /// Throws InvalidArgument on empty/ragged input, non-finite entries, or when
  /// `row_normalized` is claimed but some row norm is off by more than kNormTolerance.
  TokenMatrix(std::size_t token_count, std::size_t dim, std::vector<float> rows,
              bool row_normalized = false);

  std::size_t token_count() const { return token_count_; }
  std::size_t dim() const { return dim_; }
  bool row_normalized() const { return row_normalized_; }
  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(rows_).subspan(i * dim_, dim_);
  }
  std::span<const float> data() const { return rows_; }

  /// Copy with an extra row appended; the normalized flag survives only if the row is unit.
  TokenMatrix with_row(std::span<const float> row) const;

  bool operator==(const TokenMatrix&) const = default;

 private:
  std::size_t token_count_ = 0;
  std::size_t dim_ = 0;
  std::vector<float> rows_;
  bool row_normalized_ = false;
};

enum class Stage : std::uint8_t { FirstStage, ReRanked };

const char* to_string(Stage stage);

struct ScoredCandidate {
  std::string doc_id;
  double score = 0.0;
  Stage stage = Stage::FirstStage;

  bool operator==(const ScoredCandidate&) const = default;
};

/// Ranking order used everywhere: score descending, then doc_id ascending.
bool ranks_before(const ScoredCandidate& a, const ScoredCandidate& b);

struct RankedRun {
  std::string query_id;
  std::vector<ScoredCandidate> candidates;

  bool operator==(const RankedRun&) const = default;
};

/// Sorts into the canonical order and keeps the first `k`.
void sort_and_truncate(std::vector<ScoredCandidate>& candidates, std::size_t k);

/// Throws InvalidArgument if the run is mis-ordered, has a non-finite score, or
/// repeats a doc_id.
void validate_run(const RankedRun& run);

/// Documents plus an id lookup. Construction rejects duplicate ids and blank text.
class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<Document> docs);

  std::size_t size() const { return docs_.size(); }
  bool empty() const { return docs_.empty(); }
  const Document& operator[](std::size_t ordinal) const { return docs_[ordinal]; }
  const std::vector<Document>& documents() const { return docs_; }

  const Document* find(std::string_view id) const;
  std::optional<std::size_t> ordinal_of(std::string_view id) const;
  bool contains(std::string_view id) const { return ordinal_of(id).has_value(); }

 private:
  std::vector<Document> docs_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

}  // namespace lirank
