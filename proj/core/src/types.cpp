#include "lirank/types.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <unordered_set>

#include "lirank/errors.hpp"
#include "lirank/similarity.hpp"

namespace lirank {

const char* to_string(FormatErrorKind kind) {
  switch (kind) {
    case FormatErrorKind::Io: return "io error";
    case FormatErrorKind::MalformedLine: return "malformed line";
    case FormatErrorKind::DuplicateId: return "duplicate id";
    case FormatErrorKind::BadMagic: return "bad magic";
    case FormatErrorKind::UnsupportedVersion: return "unsupported version";
    case FormatErrorKind::Truncated: return "truncated file";
    case FormatErrorKind::RecordCountMismatch: return "record count mismatch";
    case FormatErrorKind::PayloadMismatch: return "payload mismatch";
  }
  return "format error";
}

const char* to_string(SimilarityKind kind) {
  return kind == SimilarityKind::Dot ? "dot" : "cosine";
}

SimilarityKind parse_similarity_kind(std::string_view name) {
  if (name == "dot") return SimilarityKind::Dot;
  if (name == "cosine" || name == "cos") return SimilarityKind::Cosine;
  throw InvalidArgument("unknown similarity kind '" + std::string(name) +
                        "' (expected dot|cosine)");
}

const char* to_string(Stage stage) {
  return stage == Stage::FirstStage ? "first-stage" : "reranked";
}

namespace {

void require_finite(std::span<const float> values, const char* what) {
  for (float v : values) {
    if (!std::isfinite(v)) throw InvalidArgument(std::string(what) + " contains NaN/Inf");
  }
}

}  // namespace

DenseVector::DenseVector(std::vector<float> values) : values_(std::move(values)) {
  if (values_.empty()) throw InvalidArgument("dense vector must have dim > 0");
  require_finite(values_, "dense vector");
}

double DenseVector::norm() const { return l2_norm(values_); }

TokenMatrix::TokenMatrix(std::size_t token_count, std::size_t dim, std::vector<float> rows,
                         bool row_normalized)
    : token_count_(token_count), dim_(dim), rows_(std::move(rows)),
      row_normalized_(row_normalized) {
  if (token_count_ == 0 || dim_ == 0) {
    throw InvalidArgument("token matrix must have token_count > 0 and dim > 0");
  }
  if (rows_.size() != token_count_ * dim_) {
    throw InvalidArgument("token matrix payload has " + std::to_string(rows_.size()) +
                          " floats, expected " + std::to_string(token_count_ * dim_));
  }
  require_finite(rows_, "token matrix");
  if (row_normalized_) {
    for (std::size_t i = 0; i < token_count_; ++i) {
      if (std::abs(l2_norm(row(i)) - 1.0) > kNormTolerance) {
        throw InvalidArgument("token matrix flagged row_normalized but row " +
                              std::to_string(i) + " is not unit norm");
      }
    }
  }
}

TokenMatrix TokenMatrix::with_row(std::span<const float> extra) const {
  if (extra.size() != dim_) throw DimensionMismatch(dim_, extra.size());
  std::vector<float> rows = rows_;
  rows.insert(rows.end(), extra.begin(), extra.end());
  const bool unit = std::abs(l2_norm(extra) - 1.0) <= kNormTolerance;
  return TokenMatrix(token_count_ + 1, dim_, std::move(rows), row_normalized_ && unit);
}

bool ranks_before(const ScoredCandidate& a, const ScoredCandidate& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.doc_id < b.doc_id;
}

void sort_and_truncate(std::vector<ScoredCandidate>& candidates, std::size_t k) {
  if (k < candidates.size()) {
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k),
                      candidates.end(), ranks_before);
    candidates.resize(k);
  } else {
    std::sort(candidates.begin(), candidates.end(), ranks_before);
  }
}

void validate_run(const RankedRun& run) {
  std::unordered_set<std::string_view> seen;
  for (std::size_t i = 0; i < run.candidates.size(); ++i) {
    const auto& c = run.candidates[i];
    if (!std::isfinite(c.score)) {
      throw InvalidArgument("run '" + run.query_id + "': non-finite score for " + c.doc_id);
    }
    if (!seen.insert(c.doc_id).second) {
      throw InvalidArgument("run '" + run.query_id + "': duplicate doc_id " + c.doc_id);
    }
    if (i > 0 && ranks_before(c, run.candidates[i - 1])) {
      throw InvalidArgument("run '" + run.query_id + "': candidates out of order at rank " +
                            std::to_string(i + 1));
    }
  }
}

namespace {

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

Corpus::Corpus(std::vector<Document> docs) : docs_(std::move(docs)) {
  by_id_.reserve(docs_.size());
  for (std::size_t i = 0; i < docs_.size(); ++i) {
    const auto& d = docs_[i];
    if (d.id.empty()) throw InvalidArgument("document at position " + std::to_string(i) +
                                            " has an empty id");
    if (is_blank(d.text)) throw InvalidArgument("document '" + d.id + "' has empty text");
    if (!by_id_.emplace(d.id, i).second) {
      throw InvalidArgument("duplicate document id '" + d.id + "'");
    }
  }
}

const Document* Corpus::find(std::string_view id) const {
  auto ord = ordinal_of(id);
  return ord ? &docs_[*ord] : nullptr;
}

std::optional<std::size_t> Corpus::ordinal_of(std::string_view id) const {
  auto it = by_id_.find(std::string(id));
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

}  // namespace lirank
