#include "lirank/io.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "lirank/binary_io.hpp"
#include "lirank/errors.hpp"
#include "lirank/similarity.hpp"

namespace lirank::io {

using nlohmann::json;

namespace {

std::ifstream open_in(const Path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw FormatError(FormatErrorKind::Io, "cannot open '" + path.string() + "' for reading");
  return in;
}

std::ofstream open_out(const Path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw FormatError(FormatErrorKind::Io, "cannot open '" + path.string() + "' for writing");
  return out;
}

bool blank(std::string_view s) {
  for (unsigned char c : s) {
    if (!std::isspace(c)) return false;
  }
  return true;
}

json parse_json_line(const std::string& line, std::size_t lineno) {
  try {
    json j = json::parse(line);
    if (!j.is_object()) {
      throw FormatError(FormatErrorKind::MalformedLine,
                        "line " + std::to_string(lineno) + ": expected a JSON object", lineno);
    }
    return j;
  } catch (const json::parse_error& e) {
    throw FormatError(FormatErrorKind::MalformedLine,
                      "line " + std::to_string(lineno) + ": " + e.what(), lineno);
  }
}

std::string required_string(const json& j, const std::string& field, std::size_t lineno) {
  auto it = j.find(field);
  if (it == j.end() || !it->is_string()) {
    throw FormatError(FormatErrorKind::MalformedLine,
                      "line " + std::to_string(lineno) + ": missing string field '" + field + "'",
                      lineno);
  }
  return it->get<std::string>();
}

std::string optional_string(const json& j, const std::string& field, std::size_t lineno) {
  auto it = j.find(field);
  if (it == j.end() || it->is_null()) return {};
  if (!it->is_string()) {
    throw FormatError(FormatErrorKind::MalformedLine,
                      "line " + std::to_string(lineno) + ": field '" + field + "' is not a string",
                      lineno);
  }
  return it->get<std::string>();
}

std::vector<std::string> string_array(const json& j, const std::string& field, std::size_t lineno) {
  std::vector<std::string> out;
  auto it = j.find(field);
  if (it == j.end() || it->is_null()) return out;
  if (!it->is_array()) {
    throw FormatError(FormatErrorKind::MalformedLine,
                      "line " + std::to_string(lineno) + ": field '" + field + "' is not an array",
                      lineno);
  }
  for (const auto& e : *it) {
    if (!e.is_string()) {
      throw FormatError(FormatErrorKind::MalformedLine,
                        "line " + std::to_string(lineno) + ": non-string entry in '" + field + "'",
                        lineno);
    }
    out.push_back(e.get<std::string>());
  }
  return out;
}

template <typename Fn>
void for_each_json_line(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    fn(parse_json_line(line, lineno), lineno);
  }
}

}  // namespace

std::vector<Document> parse_corpus(std::istream& in, const FieldMapping& fields) {
  std::vector<Document> docs;
  std::unordered_set<std::string> seen;
  for_each_json_line(in, [&](const json& j, std::size_t lineno) {
    Document d;
    d.id = required_string(j, fields.id, lineno);
    d.title = optional_string(j, fields.title, lineno);
    d.text = required_string(j, fields.text, lineno);
    if (d.id.empty()) {
      throw FormatError(FormatErrorKind::MalformedLine,
                        "line " + std::to_string(lineno) + ": empty id", lineno);
    }
    if (blank(d.text)) {
      throw FormatError(FormatErrorKind::MalformedLine,
                        "line " + std::to_string(lineno) + ": empty text for '" + d.id + "'", lineno);
    }
    if (!seen.insert(d.id).second) {
      throw FormatError(FormatErrorKind::DuplicateId,
                        "line " + std::to_string(lineno) + ": duplicate document id '" + d.id + "'",
                        lineno);
    }
    docs.push_back(std::move(d));
  });
  return docs;
}

std::vector<Document> read_corpus(const Path& path, const FieldMapping& fields) {
  auto in = open_in(path);
  return parse_corpus(in, fields);
}

Qrels parse_qrels(std::istream& in) {
  Qrels qrels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
      auto tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (cols.size() != 2 || cols[0].empty() || cols[1].empty()) {
      throw FormatError(FormatErrorKind::MalformedLine,
                        "line " + std::to_string(lineno) + ": expected query_id<TAB>doc_id, got " +
                            std::to_string(cols.size()) + " column(s)",
                        lineno);
    }
    qrels[cols[0]].insert(cols[1]);
  }
  return qrels;
}

Qrels read_qrels(const Path& path) {
  auto in = open_in(path);
  return parse_qrels(in);
}

std::vector<Query> read_queries(const Path& path) {
  auto in = open_in(path);
  std::vector<Query> out;
  std::unordered_set<std::string> seen;
  for_each_json_line(in, [&](const json& j, std::size_t lineno) {
    Query q;
    q.id = required_string(j, "id", lineno);
    q.text = optional_string(j, "text", lineno);
    q.gold_doc_ids = string_array(j, "gold_doc_ids", lineno);
    std::unordered_set<std::string> gold(q.gold_doc_ids.begin(), q.gold_doc_ids.end());
    if (gold.size() != q.gold_doc_ids.size()) {
      throw FormatError(FormatErrorKind::MalformedLine,
                        "line " + std::to_string(lineno) + ": duplicate gold ids for '" + q.id + "'",
                        lineno);
    }
    if (!seen.insert(q.id).second) {
      throw FormatError(FormatErrorKind::DuplicateId,
                        "line " + std::to_string(lineno) + ": duplicate query id '" + q.id + "'", lineno);
    }
    out.push_back(std::move(q));
  });
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void check_record(const EmbeddingFileHeader& header, const EmbeddingRecord& r) {
  if (header.kind == EmbeddingKind::Dense && r.token_count != 1) {
    throw FormatError(FormatErrorKind::PayloadMismatch,
                      "dense record '" + r.id + "' has token_count " + std::to_string(r.token_count));
  }
  if (r.token_count == 0) {
    throw FormatError(FormatErrorKind::PayloadMismatch, "record '" + r.id + "' has no tokens");
  }
  const std::size_t expected = static_cast<std::size_t>(r.token_count) * header.dim;
  if (r.values.size() != expected) {
    throw FormatError(FormatErrorKind::PayloadMismatch,
                      "record '" + r.id + "' has " + std::to_string(r.values.size()) +
                          " floats, expected " + std::to_string(expected));
  }
}

}  // namespace

void encode_embeddings(std::ostream& out, EmbeddingFileHeader header,
                       const std::vector<EmbeddingRecord>& records) {
  if (header.dim == 0) throw FormatError(FormatErrorKind::PayloadMismatch, "dim must be > 0");
  for (const auto& r : records) check_record(header, r);
  header.record_count = records.size();

  binary::Writer w(out);
  w.bytes(std::string_view(kEmbeddingMagic, 8));
  w.u8(static_cast<std::uint8_t>(header.kind));
  w.u32(header.dim);
  w.u64(header.record_count);
  w.u8(header.normalized ? 1 : 0);
  for (const auto& r : records) {
    w.str(r.id);
    w.u32(r.token_count);
    w.f32s(r.values);
  }
}

void write_embeddings(const Path& path, EmbeddingFileHeader header,
                      const std::vector<EmbeddingRecord>& records) {
  std::ostringstream buf(std::ios::binary);
  encode_embeddings(buf, header, records);
  auto out = open_out(path, std::ios::binary);
  const std::string bytes = buf.str();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatErrorKind::Io, "failed writing '" + path.string() + "'");
}

EmbeddingFileHeader read_embedding_header(std::istream& in) {
  binary::Reader r(in);
  binary::expect_magic(r, std::string_view(kEmbeddingMagic, 8));
  EmbeddingFileHeader h;
  const auto kind = r.u8("header kind");
  if (kind > 1) {
    throw FormatError(FormatErrorKind::UnsupportedVersion, "unknown embedding kind " + std::to_string(kind));
  }
  h.kind = static_cast<EmbeddingKind>(kind);
  h.dim = r.u32("header dim");
  h.record_count = r.u64("header record_count");
  const auto normalized = r.u8("header normalized flag");
  if (normalized > 1) {
    throw FormatError(FormatErrorKind::PayloadMismatch, "normalized flag must be 0 or 1");
  }
  h.normalized = normalized == 1;
  if (h.dim == 0) throw FormatError(FormatErrorKind::PayloadMismatch, "header dim is 0");
  return h;
}

EmbeddingFile decode_embeddings(std::istream& in) {
  EmbeddingFile file;
  file.header = read_embedding_header(in);
  binary::Reader r(in);
  file.records.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(file.header.record_count, 1u << 20)));
  for (std::uint64_t i = 0; i < file.header.record_count; ++i) {
    if (r.at_end()) {
      throw FormatError(FormatErrorKind::RecordCountMismatch,
                        "header declares " + std::to_string(file.header.record_count) +
                            " records, file holds " + std::to_string(i));
    }
    EmbeddingRecord rec;
    rec.id = r.str("record id");
    rec.token_count = r.u32("record token_count");
    if (file.header.kind == EmbeddingKind::Dense && rec.token_count != 1) {
      throw FormatError(FormatErrorKind::PayloadMismatch,
                        "dense record '" + rec.id + "' has token_count " + std::to_string(rec.token_count));
    }
    rec.values.resize(static_cast<std::size_t>(rec.token_count) * file.header.dim);
    r.f32s(rec.values, "record payload");
    file.records.push_back(std::move(rec));
  }
  if (!r.at_end()) {
    throw FormatError(FormatErrorKind::RecordCountMismatch,
                      "trailing bytes after " + std::to_string(file.header.record_count) + " records");
  }
  return file;
}

EmbeddingFile read_embeddings(const Path& path) {
  auto in = open_in(path, std::ios::in | std::ios::binary);
  return decode_embeddings(in);
}

std::vector<std::pair<std::string, DenseVector>> to_dense(const EmbeddingFile& file) {
  if (file.header.kind != EmbeddingKind::Dense) {
    throw InvalidArgument("embedding file holds token matrices, expected dense vectors");
  }
  std::vector<std::pair<std::string, DenseVector>> out;
  out.reserve(file.records.size());
  for (const auto& r : file.records) out.emplace_back(r.id, DenseVector(r.values));
  return out;
}

std::vector<std::pair<std::string, TokenMatrix>> to_tokens(const EmbeddingFile& file) {
  if (file.header.kind != EmbeddingKind::Tokens) {
    throw InvalidArgument("embedding file holds dense vectors, expected token matrices");
  }
  std::vector<std::pair<std::string, TokenMatrix>> out;
  out.reserve(file.records.size());
  for (const auto& r : file.records) {
    out.emplace_back(r.id, TokenMatrix(r.token_count, file.header.dim, r.values, file.header.normalized));
  }
  return out;
}

EmbeddingRecord make_record(std::string id, const DenseVector& v) {
  return EmbeddingRecord{std::move(id), 1, std::vector<float>(v.values().begin(), v.values().end())};
}

EmbeddingRecord make_record(std::string id, const TokenMatrix& m) {
  return EmbeddingRecord{std::move(id), static_cast<std::uint32_t>(m.token_count()),
                         std::vector<float>(m.data().begin(), m.data().end())};
}

// ---------------------------------------------------------------------------

void format_run(std::ostream& out, const std::vector<RankedRun>& runs, const std::string& tag) {
  char score[64];
  for (const auto& run : runs) {
    for (std::size_t i = 0; i < run.candidates.size(); ++i) {
      const auto& c = run.candidates[i];
      // Shortest text that parses back to the same double.
      const auto end = std::to_chars(score, score + sizeof(score), c.score).ptr;
      out << run.query_id << " Q0 " << c.doc_id << ' ' << (i + 1) << ' ' << std::string_view(score, end - score)
          << ' ' << tag << '\n';
    }
  }
}

void write_run(const std::vector<RankedRun>& runs, const std::string& tag, const Path& path) {
  auto out = open_out(path);
  format_run(out, runs, tag);
  if (!out) throw FormatError(FormatErrorKind::Io, "failed writing '" + path.string() + "'");
}

std::vector<RankedRun> read_run(const Path& path, Stage stage) {
  auto in = open_in(path);
  std::vector<RankedRun> runs;
  std::map<std::string, std::size_t> index;
  std::map<std::string, std::set<std::string>> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    std::istringstream cols(line);
    std::string qid, q0, doc, rank, score, tag, extra;
    if (!(cols >> qid >> q0 >> doc >> rank >> score >> tag) || (cols >> extra)) {
      throw FormatError(FormatErrorKind::MalformedLine,
                        "line " + std::to_string(lineno) + ": expected 6 whitespace-separated columns",
                        lineno);
    }
    char* end = nullptr;
    const double value = std::strtod(score.c_str(), &end);
    if (end != score.c_str() + score.size() || !std::isfinite(value)) {
      throw FormatError(FormatErrorKind::MalformedLine,
                        "line " + std::to_string(lineno) + ": bad score '" + score + "'", lineno);
    }
    if (!seen[qid].insert(doc).second) {
      throw FormatError(FormatErrorKind::DuplicateId,
                        "line " + std::to_string(lineno) + ": doc '" + doc + "' repeated for query '" +
                            qid + "'",
                        lineno);
    }
    auto [it, inserted] = index.emplace(qid, runs.size());
    if (inserted) runs.push_back(RankedRun{qid, {}});
    runs[it->second].candidates.push_back(ScoredCandidate{doc, value, stage});
  }
  for (auto& run : runs) sort_and_truncate(run.candidates, run.candidates.size());
  return runs;
}

// ---------------------------------------------------------------------------

void validate_item(const McqItem& item) {
  if (item.options.size() < 2) {
    throw InvalidArgument("item '" + item.id + "' has fewer than 2 options");
  }
  for (const auto& [letter, text] : item.options) {
    if (letter.size() != 1 || letter[0] < 'A' || letter[0] > 'Z') {
      throw InvalidArgument("item '" + item.id + "' has invalid option key '" + letter + "'");
    }
  }
  if (!item.options.count(item.answer_key)) {
    throw InvalidArgument("item '" + item.id + "' answer '" + item.answer_key + "' is not an option");
  }
}

std::vector<McqItem> read_mcq_items(const Path& path) {
  auto in = open_in(path);
  std::vector<McqItem> items;
  std::unordered_set<std::string> seen;
  for_each_json_line(in, [&](const json& j, std::size_t lineno) {
    McqItem item;
    item.id = required_string(j, "id", lineno);
    item.question = required_string(j, "question", lineno);
    item.answer_key = required_string(j, "answer", lineno);
    item.task = optional_string(j, "task", lineno);
    auto opts = j.find("options");
    if (opts == j.end() || !opts->is_object()) {
      throw FormatError(FormatErrorKind::MalformedLine,
                        "line " + std::to_string(lineno) + ": 'options' must be an object", lineno);
    }
    for (const auto& [letter, text] : opts->items()) {
      if (!text.is_string()) {
        throw FormatError(FormatErrorKind::MalformedLine,
                          "line " + std::to_string(lineno) + ": option '" + letter + "' is not a string",
                          lineno);
      }
      item.options[letter] = text.get<std::string>();
    }
    try {
      validate_item(item);
    } catch (const InvalidArgument& e) {
      throw FormatError(FormatErrorKind::MalformedLine,
                        "line " + std::to_string(lineno) + ": " + e.what(), lineno);
    }
    if (!seen.insert(item.id).second) {
      throw FormatError(FormatErrorKind::DuplicateId,
                        "line " + std::to_string(lineno) + ": duplicate item id '" + item.id + "'", lineno);
    }
    items.push_back(std::move(item));
  });
  return items;
}

// ---------------------------------------------------------------------------

std::vector<TrainingPairSpec> read_pair_specs(const Path& path) {
  auto in = open_in(path);
  std::vector<TrainingPairSpec> out;
  for_each_json_line(in, [&](const json& j, std::size_t lineno) {
    out.push_back(TrainingPairSpec{required_string(j, "query_id", lineno),
                                   required_string(j, "query_text", lineno),
                                   required_string(j, "positive_doc_id", lineno)});
  });
  return out;
}

void write_training_pairs(const std::vector<TrainingPairRecord>& pairs, const Path& path) {
  auto out = open_out(path);
  for (const auto& p : pairs) {
    nlohmann::ordered_json j;
    j["query_id"] = p.query_id;
    j["positive_doc_id"] = p.positive_doc_id;
    j["negative_doc_ids"] = p.negative_doc_ids;
    j["strategy"] = p.strategy;
    j["shortfall"] = p.shortfall;
    out << j.dump() << '\n';
  }
  if (!out) throw FormatError(FormatErrorKind::Io, "failed writing '" + path.string() + "'");
}

std::vector<TrainingPairRecord> read_training_pairs(const Path& path) {
  auto in = open_in(path);
  std::vector<TrainingPairRecord> out;
  for_each_json_line(in, [&](const json& j, std::size_t lineno) {
    TrainingPairRecord p;
    p.query_id = required_string(j, "query_id", lineno);
    p.positive_doc_id = required_string(j, "positive_doc_id", lineno);
    p.negative_doc_ids = string_array(j, "negative_doc_ids", lineno);
    p.strategy = optional_string(j, "strategy", lineno);
    auto sf = j.find("shortfall");
    p.shortfall = sf != j.end() && sf->is_boolean() && sf->get<bool>();
    out.push_back(std::move(p));
  });
  return out;
}

}  // namespace lirank::io
