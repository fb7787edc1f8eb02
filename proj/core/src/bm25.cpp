#include "lirank/bm25.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "lirank/binary_io.hpp"
#include "lirank/errors.hpp"

namespace lirank {

namespace {

constexpr char kSparseMagic[] = "LIBM25X1";

// Decodes one UTF-8 sequence starting at s[i]; invalid bytes decode as U+FFFD.
char32_t next_codepoint(std::string_view s, std::size_t& i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  auto cont = [&](std::size_t k) -> int {
    if (i + k >= s.size()) return -1;
    const auto c = static_cast<unsigned char>(s[i + k]);
    return (c & 0xC0) == 0x80 ? (c & 0x3F) : -1;
  };
  if (b0 < 0x80) {
    i += 1;
    return b0;
  }
  int len = (b0 & 0xE0) == 0xC0 ? 2 : (b0 & 0xF0) == 0xE0 ? 3 : (b0 & 0xF8) == 0xF0 ? 4 : 0;
  if (len == 0) {
    i += 1;
    return 0xFFFD;
  }
  char32_t cp = b0 & (0x7F >> len);
  for (int k = 1; k < len; ++k) {
    const int c = cont(static_cast<std::size_t>(k));
    if (c < 0) {
      i += 1;
      return 0xFFFD;
    }
    cp = (cp << 6) | static_cast<char32_t>(c);
  }
  i += static_cast<std::size_t>(len);
  return cp;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

bool is_word_codepoint(char32_t cp) {
  if (cp < 0x80) {
    return (cp >= '0' && cp <= '9') || (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z');
  }
  if (cp == 0xFFFD) return false;
  if (cp >= 0x80 && cp <= 0xBF) return false;  // Latin-1 controls, punctuation, symbols
  if (cp == 0xD7 || cp == 0xF7) return false;
  if (cp >= 0x2000 && cp <= 0x206F) return false;
  if (cp >= 0x3000 && cp <= 0x303F) return false;
  return true;
}

char32_t to_lower(char32_t cp) {
  if (cp >= 'A' && cp <= 'Z') return cp + 32;
  if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 32;
  return cp;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> terms;
  std::string current;
  std::size_t i = 0;
  while (i < text.size()) {
    const char32_t cp = next_codepoint(text, i);
    if (is_word_codepoint(cp)) {
      append_utf8(current, to_lower(cp));
    } else if (!current.empty()) {
      terms.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) terms.push_back(std::move(current));
  return terms;
}

SparseIndex SparseIndex::build(const std::vector<Document>& corpus, Bm25Params params) {
  if (corpus.empty()) throw InvalidArgument("cannot build a BM25 index over an empty corpus");
  if (!(params.k1 > 0.0)) throw InvalidArgument("BM25 k1 must be > 0");
  if (!(params.b >= 0.0 && params.b <= 1.0)) throw InvalidArgument("BM25 b must be in [0, 1]");

  SparseIndex index;
  index.params_ = params;
  index.doc_ids_.reserve(corpus.size());
  index.doc_lengths_.reserve(corpus.size());
  std::unordered_map<std::string, std::uint32_t> tf;
  for (std::size_t ord = 0; ord < corpus.size(); ++ord) {
    const auto& doc = corpus[ord];
    const auto terms = tokenize(doc.title.empty() ? doc.text : doc.title + " " + doc.text);
    tf.clear();
    // Postings are appended in first-occurrence order inside each document.
    std::vector<const std::string*> order;
    for (const auto& t : terms) {
      auto [it, inserted] = tf.emplace(t, 0);
      if (inserted) order.push_back(&it->first);
      ++it->second;
    }
    for (const auto* t : order) {
      index.postings_[*t].push_back(Posting{static_cast<std::uint32_t>(ord), tf.at(*t)});
    }
    index.doc_ids_.push_back(doc.id);
    index.doc_lengths_.push_back(static_cast<std::uint32_t>(terms.size()));
  }
  const double total = std::accumulate(index.doc_lengths_.begin(), index.doc_lengths_.end(), 0.0);
  index.avg_doc_length_ = total / static_cast<double>(corpus.size());
  if (!(index.avg_doc_length_ > 0.0)) {
    throw InvalidArgument("BM25 corpus has no indexable terms");
  }
  return index;
}

std::span<const Posting> SparseIndex::postings(const std::string& term) const {
  auto it = postings_.find(term);
  if (it == postings_.end()) return {};
  return it->second;
}

double SparseIndex::idf(const std::string& term) const {
  const double n = static_cast<double>(doc_count());
  const double df = static_cast<double>(document_frequency(term));
  return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

double SparseIndex::term_weight(double idf, std::uint32_t tf, std::uint32_t len) const {
  const double f = tf;
  const double norm = params_.k1 * (1.0 - params_.b + params_.b * len / avg_doc_length_);
  return idf * f * (params_.k1 + 1.0) / (f + norm);
}

std::vector<std::string> SparseIndex::unique_terms(std::span<const std::string> terms) {
  std::vector<std::string> out;
  std::unordered_set<std::string_view> seen;
  for (const auto& t : terms) {
    if (seen.insert(t).second) out.push_back(t);
  }
  return out;
}

double SparseIndex::score(std::span<const std::string> query_terms, std::size_t ordinal) const {
  if (ordinal >= doc_count()) {
    throw InvalidArgument("doc ordinal " + std::to_string(ordinal) + " out of range");
  }
  double total = 0.0;
  for (const auto& term : unique_terms(query_terms)) {
    const auto list = postings(term);
    auto it = std::lower_bound(list.begin(), list.end(), ordinal,
                               [](const Posting& p, std::size_t o) { return p.doc < o; });
    if (it == list.end() || it->doc != ordinal) continue;
    total += term_weight(idf(term), it->tf, doc_lengths_[ordinal]);
  }
  return total;
}

RankedRun SparseIndex::search(std::string_view query, std::size_t k, std::string query_id) const {
  if (k == 0) throw InvalidArgument("search k must be >= 1");
  RankedRun run{std::move(query_id), {}};
  const auto terms = unique_terms(tokenize(query));
  std::vector<double> acc(doc_count(), 0.0);
  std::vector<std::uint32_t> touched;
  std::vector<bool> hit(doc_count(), false);
  for (const auto& term : terms) {
    const auto list = postings(term);
    if (list.empty()) continue;
    const double w = idf(term);
    for (const auto& p : list) {
      acc[p.doc] += term_weight(w, p.tf, doc_lengths_[p.doc]);
      if (!hit[p.doc]) {
        hit[p.doc] = true;
        touched.push_back(p.doc);
      }
    }
  }
  run.candidates.reserve(touched.size());
  for (auto ord : touched) {
    run.candidates.push_back(ScoredCandidate{doc_ids_[ord], acc[ord], Stage::FirstStage});
  }
  sort_and_truncate(run.candidates, k);
  return run;
}

void SparseIndex::encode(std::ostream& out) const {
  binary::Writer w(out);
  w.bytes(std::string_view(kSparseMagic, 8));
  w.f64(params_.k1);
  w.f64(params_.b);
  w.u64(doc_ids_.size());
  for (std::size_t i = 0; i < doc_ids_.size(); ++i) {
    w.str(doc_ids_[i]);
    w.u32(doc_lengths_[i]);
  }
  w.f64(avg_doc_length_);
  std::vector<const std::string*> terms;
  terms.reserve(postings_.size());
  for (const auto& [t, _] : postings_) terms.push_back(&t);
  std::sort(terms.begin(), terms.end(), [](auto* a, auto* b) { return *a < *b; });
  w.u64(terms.size());
  for (const auto* t : terms) {
    const auto& list = postings_.at(*t);
    w.str(*t);
    w.u32(static_cast<std::uint32_t>(list.size()));
    for (const auto& p : list) {
      w.u32(p.doc);
      w.u32(p.tf);
    }
  }
}

SparseIndex SparseIndex::decode(std::istream& in) {
  binary::Reader r(in);
  binary::expect_magic(r, std::string_view(kSparseMagic, 8));
  SparseIndex index;
  index.params_.k1 = r.f64("k1");
  index.params_.b = r.f64("b");
  const auto n = r.u64("doc count");
  for (std::uint64_t i = 0; i < n; ++i) {
    index.doc_ids_.push_back(r.str("doc id"));
    index.doc_lengths_.push_back(r.u32("doc length"));
  }
  index.avg_doc_length_ = r.f64("avg doc length");
  const auto term_count = r.u64("term count");
  for (std::uint64_t i = 0; i < term_count; ++i) {
    auto term = r.str("term");
    auto& list = index.postings_[term];
    const auto len = r.u32("posting count");
    list.reserve(len);
    for (std::uint32_t j = 0; j < len; ++j) {
      Posting p;
      p.doc = r.u32("posting doc");
      p.tf = r.u32("posting tf");
      if (p.doc >= n) {
        throw FormatError(FormatErrorKind::PayloadMismatch, "posting ordinal out of range for '" + term + "'");
      }
      list.push_back(p);
    }
  }
  if (!r.at_end()) throw FormatError(FormatErrorKind::RecordCountMismatch, "trailing bytes in BM25 index");
  return index;
}

void SparseIndex::save(const std::filesystem::path& path) const {
  std::ostringstream buf(std::ios::binary);
  encode(buf);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrorKind::Io, "cannot open '" + path.string() + "' for writing");
  const auto bytes = buf.str();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

SparseIndex SparseIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorKind::Io, "cannot open '" + path.string() + "' for reading");
  return decode(in);
}

}  // namespace lirank
