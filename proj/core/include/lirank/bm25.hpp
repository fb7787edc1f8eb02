#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lirank/types.hpp"

namespace lirank {

/// Lowercases and splits on non-alphanumeric codepoints. No stemming, no stopwords.
std::vector<std::string> tokenize(std::string_view text);

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;

  bool operator==(const Bm25Params&) const = default;
};

struct Posting {
  std::uint32_t doc = 0;
  std::uint32_t tf = 0;

  bool operator==(const Posting&) const = default;
};

/// Okapi BM25 inverted index. Immutable after build.
///
/// score(q, d) = sum over unique t in q of
///     idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(d) / avglen))
/// with idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)).
class SparseIndex {
 public:
  /// Indexes title + " " + text per document. Throws InvalidArgument for an empty
  /// corpus, k1 <= 0, or b outside [0, 1].
  static SparseIndex build(const std::vector<Document>& corpus, Bm25Params params = {});

  std::size_t doc_count() const { return doc_ids_.size(); }
  const std::vector<std::uint32_t>& doc_lengths() const { return doc_lengths_; }
  double avg_doc_length() const { return avg_doc_length_; }
  const Bm25Params& params() const { return params_; }
  const std::string& doc_id(std::size_t ordinal) const { return doc_ids_[ordinal]; }

  /// Empty span for unknown terms.
  std::span<const Posting> postings(const std::string& term) const;
  std::size_t document_frequency(const std::string& term) const { return postings(term).size(); }
  double idf(const std::string& term) const;

  /// Duplicate query terms count once. Throws InvalidArgument for ordinal >= doc_count.
  double score(std::span<const std::string> query_terms, std::size_t ordinal) const;

  /// Top-k among documents sharing at least one term with the query.
  RankedRun search(std::string_view query, std::size_t k, std::string query_id = {}) const;

  void save(const std::filesystem::path& path) const;
  static SparseIndex load(const std::filesystem::path& path);
  void encode(std::ostream& out) const;
  static SparseIndex decode(std::istream& in);

  bool operator==(const SparseIndex&) const = default;

 private:
  static std::vector<std::string> unique_terms(std::span<const std::string> terms);
  double term_weight(double idf, std::uint32_t tf, std::uint32_t len) const;

  Bm25Params params_;
  std::vector<std::string> doc_ids_;
  std::vector<std::uint32_t> doc_lengths_;
  double avg_doc_length_ = 0.0;
  std::unordered_map<std::string, std::vector<Posting>> postings_;
};

}  // namespace lirank
