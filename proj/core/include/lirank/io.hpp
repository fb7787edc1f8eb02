#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "lirank/types.hpp"

namespace lirank::io {

using Path = std::filesystem::path;

/// Source field names for corpus ingestion. Defaults match the MedRAG snippet layout
/// once its `contents` field is mapped to `text`.
struct FieldMapping {
  std::string id = "id";
  std::string title = "title";
  std::string text = "text";
};

/// Line-delimited JSON objects with string fields id/title/text (title optional).
/// Throws FormatError(MalformedLine) with a 1-based line number, or
/// FormatError(DuplicateId) naming the repeated id.
std::vector<Document> read_corpus(const Path& path, const FieldMapping& fields = {});
std::vector<Document> parse_corpus(std::istream& in, const FieldMapping& fields = {});

using Qrels = std::map<std::string, std::set<std::string>>;

/// `query_id<TAB>doc_id` per line; multiple lines per query aggregate.
Qrels read_qrels(const Path& path);
Qrels parse_qrels(std::istream& in);

/// Line-delimited {id, text, gold_doc_ids?}. Used by the CLI to label query inputs.
std::vector<Query> read_queries(const Path& path);

// ---------------------------------------------------------------------------
// Embedding interchange files
// ---------------------------------------------------------------------------

inline constexpr char kEmbeddingMagic[] = "LIEMBED1";

enum class EmbeddingKind : std::uint8_t { Dense = 0, Tokens = 1 };

struct EmbeddingFileHeader {
  EmbeddingKind kind = EmbeddingKind::Dense;
  std::uint32_t dim = 0;
  std::uint64_t record_count = 0;
  bool normalized = false;

  bool operator==(const EmbeddingFileHeader&) const = default;
};

/// On-disk header size: magic(8) + kind(1) + dim(4) + record_count(8) + normalized(1).
inline constexpr std::size_t kEmbeddingHeaderBytes = 22;

struct EmbeddingRecord {
  std::string id;
  std::uint32_t token_count = 1;
  std::vector<float> values;  // token_count * dim, row-major

  bool operator==(const EmbeddingRecord&) const = default;
};

struct EmbeddingFile {
  EmbeddingFileHeader header;
  std::vector<EmbeddingRecord> records;
};

/// Layout after the header, per record: id_len u32, id bytes, token_count u32,
/// token_count*dim f32. All integers and floats little-endian.
/// `header.record_count` is ignored on input and written as records.size().
/// Throws FormatError(PayloadMismatch) when a payload length disagrees with dim,
/// or a dense record has token_count != 1.
void write_embeddings(const Path& path, EmbeddingFileHeader header,
                      const std::vector<EmbeddingRecord>& records);
void encode_embeddings(std::ostream& out, EmbeddingFileHeader header,
                       const std::vector<EmbeddingRecord>& records);

/// Distinct FormatError kinds: BadMagic, Truncated (file ends mid-header or
/// mid-record), RecordCountMismatch (clean end before record_count records, or
/// trailing bytes after them).
EmbeddingFile read_embeddings(const Path& path);
EmbeddingFile decode_embeddings(std::istream& in);

/// Header-only read; also validates magic.
EmbeddingFileHeader read_embedding_header(std::istream& in);

std::vector<std::pair<std::string, DenseVector>> to_dense(const EmbeddingFile& file);
std::vector<std::pair<std::string, TokenMatrix>> to_tokens(const EmbeddingFile& file);

EmbeddingRecord make_record(std::string id, const DenseVector& v);
EmbeddingRecord make_record(std::string id, const TokenMatrix& m);

// ---------------------------------------------------------------------------
// TREC run files
// ---------------------------------------------------------------------------

/// `query_id Q0 doc_id rank score tag`, ranks from 1, score with 6 decimals.
void write_run(const std::vector<RankedRun>& runs, const std::string& tag, const Path& path);
void format_run(std::ostream& out, const std::vector<RankedRun>& runs, const std::string& tag);

/// Reads six-column runs; queries appear in first-seen order and candidates are
/// re-sorted into canonical order. Stage is set to `stage`.
std::vector<RankedRun> read_run(const Path& path, Stage stage = Stage::FirstStage);

// ---------------------------------------------------------------------------
// MCQ items
// ---------------------------------------------------------------------------

struct McqItem {
  std::string id;
  std::string question;
  std::map<std::string, std::string> options;  // letter -> text, ordered by letter
  std::string answer_key;
  std::string task;  // optional task tag, e.g. "MedQA"
};

/// Throws InvalidArgument if fewer than 2 options, a key is not a single A-Z
/// letter, or answer_key is not one of the keys.
void validate_item(const McqItem& item);

/// Line-delimited {id, question, options: {A: .., ...}, answer, task?}.
std::vector<McqItem> read_mcq_items(const Path& path);

// ---------------------------------------------------------------------------
// Training pairs (negative mining output / adapter training input)
// ---------------------------------------------------------------------------

struct TrainingPairSpec {
  std::string query_id;
  std::string query_text;
  std::string positive_doc_id;
};

/// Line-delimited {query_id, query_text, positive_doc_id}.
std::vector<TrainingPairSpec> read_pair_specs(const Path& path);

struct TrainingPairRecord {
  std::string query_id;
  std::string positive_doc_id;
  std::vector<std::string> negative_doc_ids;
  std::string strategy;
  bool shortfall = false;

  bool operator==(const TrainingPairRecord&) const = default;
};

void write_training_pairs(const std::vector<TrainingPairRecord>& pairs, const Path& path);
std::vector<TrainingPairRecord> read_training_pairs(const Path& path);

}  // namespace lirank::io
