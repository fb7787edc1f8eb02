#include "lirank/late_interaction.hpp"

#include <fstream>
#include <limits>

#include "lirank/binary_io.hpp"
#include "lirank/errors.hpp"
#include "lirank/io.hpp"
#include "lirank/similarity.hpp"

namespace lirank {

namespace {

void check_pair(const TokenMatrix& query, const TokenMatrix& doc) {
  if (query.token_count() == 0 || doc.token_count() == 0) {
    throw InvalidArgument("MaxSim needs at least one token on each side");
  }
  if (query.dim() != doc.dim()) throw DimensionMismatch(query.dim(), doc.dim());
}

std::vector<double> row_norms(const TokenMatrix& m, SimilarityKind kind) {
  std::vector<double> norms(m.token_count(), 1.0);
  if (kind == SimilarityKind::Dot) return norms;
  for (std::size_t i = 0; i < m.token_count(); ++i) {
    norms[i] = l2_norm(m.row(i));
    if (norms[i] == 0.0) throw InvalidArgument("zero-norm token row under cosine similarity");
  }
  return norms;
}

template <typename OnBest>
void scan_best(const TokenMatrix& query, const TokenMatrix& doc, SimilarityKind kind, OnBest&& on_best) {
  check_pair(query, doc);
  const auto qn = row_norms(query, kind);
  const auto dn = row_norms(doc, kind);
  for (std::size_t i = 0; i < query.token_count(); ++i) {
    double best = -std::numeric_limits<double>::infinity();
    std::size_t best_j = 0;
    for (std::size_t j = 0; j < doc.token_count(); ++j) {
      double s = dot(query.row(i), doc.row(j));
      if (kind == SimilarityKind::Cosine) s = cosine_with_norms(s, qn[i], dn[j]);
      if (s > best) {
        best = s;
        best_j = j;
      }
    }
    on_best(i, best_j, best);
  }
}

}  // namespace

double maxsim_score(const TokenMatrix& query, const TokenMatrix& doc, SimilarityKind kind) {
  double total = 0.0;
  scan_best(query, doc, kind, [&](std::size_t, std::size_t, double best) { total += best; });
  return total;
}

std::vector<std::size_t> maxsim_alignment(const TokenMatrix& query, const TokenMatrix& doc,
                                          SimilarityKind kind) {
  std::vector<std::size_t> align(query.token_count());
  scan_best(query, doc, kind, [&](std::size_t i, std::size_t j, double) { align[i] = j; });
  return align;
}

// ---------------------------------------------------------------------------

TokenStore::TokenStore(std::size_t dim) : dim_(dim) {
  if (dim_ == 0) throw InvalidArgument("token store dim must be > 0");
}

void TokenStore::add(std::string doc_id, TokenMatrix matrix) {
  if (doc_id.empty()) throw InvalidArgument("token matrix id must be non-empty");
  if (matrix.dim() != dim_) throw DimensionMismatch(dim_, matrix.dim());
  auto ptr = std::make_shared<const TokenMatrix>(std::move(matrix));
  if (!matrices_.emplace(doc_id, std::move(ptr)).second) {
    throw InvalidArgument("duplicate token matrix id '" + doc_id + "'");
  }
}

TokenStore TokenStore::from_file(const std::filesystem::path& path) {
  auto file = io::read_embeddings(path);
  TokenStore store(file.header.dim);
  for (auto& [id, m] : io::to_tokens(file)) store.add(std::move(id), std::move(m));
  return store;
}

std::shared_ptr<const TokenMatrix> TokenStore::find(std::string_view doc_id) const {
  auto it = matrices_.find(std::string(doc_id));
  return it == matrices_.end() ? nullptr : it->second;
}

LazyTokenStore::LazyTokenStore(std::filesystem::path path) : path_(std::move(path)) {
  std::ifstream in(path_, std::ios::binary);
  if (!in) throw FormatError(FormatErrorKind::Io, "cannot open '" + path_.string() + "' for reading");
  const auto header = io::read_embedding_header(in);
  if (header.kind != io::EmbeddingKind::Tokens) {
    throw InvalidArgument("'" + path_.string() + "' holds dense vectors, expected token matrices");
  }
  dim_ = header.dim;
  normalized_ = header.normalized;
  binary::Reader r(in);
  for (std::uint64_t i = 0; i < header.record_count; ++i) {
    const std::uint64_t offset = r.offset();
    auto id = r.str("record id");
    const auto tokens = r.u32("record token_count");
    in.seekg(static_cast<std::streamoff>(static_cast<std::uint64_t>(tokens) * dim_ * 4), std::ios::cur);
    if (!in) throw FormatError(FormatErrorKind::Truncated, "token payload for '" + id + "'");
    if (!offsets_.emplace(std::move(id), offset).second) {
      throw FormatError(FormatErrorKind::DuplicateId, "duplicate token matrix id");
    }
  }
  // seekg past EOF does not fail; confirm the last payload really exists.
  in.seekg(0, std::ios::end);
  if (static_cast<std::uint64_t>(in.tellg()) < r.offset()) {
    throw FormatError(FormatErrorKind::Truncated, "token file shorter than its records");
  }
}

std::shared_ptr<const TokenMatrix> LazyTokenStore::find(std::string_view doc_id) const {
  auto it = offsets_.find(std::string(doc_id));
  if (it == offsets_.end()) return nullptr;
  std::ifstream in(path_, std::ios::binary);
  if (!in) throw FormatError(FormatErrorKind::Io, "cannot reopen '" + path_.string() + "'");
  in.seekg(static_cast<std::streamoff>(it->second));
  binary::Reader r(in);
  r.str("record id");
  const auto tokens = r.u32("record token_count");
  std::vector<float> rows(static_cast<std::size_t>(tokens) * dim_);
  r.f32s(rows, "record payload");
  return std::make_shared<const TokenMatrix>(tokens, dim_, std::move(rows), normalized_);
}

// ---------------------------------------------------------------------------

RankedRun rerank(const RankedRun& first_stage, const TokenMatrix& query, const TokenProvider& store,
                 SimilarityKind kind, std::size_t k) {
  if (k == 0) throw InvalidArgument("rerank k must be >= 1");
  RankedRun out{first_stage.query_id, {}};
  out.candidates.reserve(first_stage.candidates.size());
  for (const auto& c : first_stage.candidates) {
    auto doc = store.find(c.doc_id);
    if (!doc) throw NotFound("no token matrix for candidate '" + c.doc_id + "'");
    out.candidates.push_back(ScoredCandidate{c.doc_id, maxsim_score(query, *doc, kind), Stage::ReRanked});
  }
  sort_and_truncate(out.candidates, k);
  return out;
}

}  // namespace lirank
