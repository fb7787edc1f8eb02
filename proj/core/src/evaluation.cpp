#include "lirank/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <set>

#include "lirank/errors.hpp"

namespace lirank {

// ---------------------------------------------------------------------------
// Recall
// ---------------------------------------------------------------------------

namespace {

bool hit_in_top_k(const RankedRun& run, const std::set<std::string>& gold, std::size_t k) {
  const std::size_t depth = std::min(k, run.candidates.size());
  for (std::size_t i = 0; i < depth; ++i) {
    if (gold.count(run.candidates[i].doc_id)) return true;
  }
  return false;
}

const std::set<std::string>& gold_for(const RankedRun& run, const io::Qrels& qrels) {
  auto it = qrels.find(run.query_id);
  if (it == qrels.end() || it->second.empty()) {
    throw InvalidArgument("query '" + run.query_id + "' has no gold documents; filter it before scoring");
  }
  return it->second;
}

}  // namespace

double recall_at_k(const std::vector<RankedRun>& runs, const io::Qrels& qrels, std::size_t k) {
  if (k == 0) throw InvalidArgument("recall k must be >= 1");
  if (runs.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& run : runs) {
    if (hit_in_top_k(run, gold_for(run, qrels), k)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(runs.size());
}

RecallReport evaluate_recall(const std::vector<RankedRun>& runs, const io::Qrels& qrels,
                             const std::vector<std::size_t>& ks,
                             const std::function<bool(const std::string&)>& indexed) {
  RecallReport report;
  std::vector<RankedRun> kept;
  kept.reserve(runs.size());
  for (const auto& run : runs) {
    const auto& gold = gold_for(run, qrels);
    if (indexed && std::none_of(gold.begin(), gold.end(), indexed)) {
      ++report.excluded_queries;
      continue;
    }
    kept.push_back(run);
  }
  report.query_count = kept.size();
  for (auto k : ks) report.recall[k] = recall_at_k(kept, qrels, k);
  return report;
}

// ---------------------------------------------------------------------------
// Accuracy
// ---------------------------------------------------------------------------

double TaskAccuracy::std_error() const {
  if (total == 0) return 0.0;
  const double p = accuracy();
  return std::sqrt(p * (1.0 - p) / static_cast<double>(total));
}

AccuracyReport mcq_accuracy(const std::map<std::string, std::string>& predictions,
                            const std::vector<io::McqItem>& items) {
  AccuracyReport report;
  for (const auto& item : items) {
    bool correct = false;
    auto it = predictions.find(item.id);
    if (it == predictions.end()) {
      ++report.missing;
      report.warnings.push_back("item '" + item.id + "': no prediction, counted wrong");
    } else if (!item.options.count(it->second)) {
      ++report.invalid;
      report.warnings.push_back("item '" + item.id + "': prediction '" + it->second +
                                "' is not an option, counted wrong");
    } else {
      correct = it->second == item.answer_key;
    }
    ++report.overall.total;
    if (correct) ++report.overall.correct;
    if (!item.task.empty()) {
      auto& t = report.per_task[item.task];
      ++t.total;
      if (correct) ++t.correct;
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Latency
// ---------------------------------------------------------------------------

std::uint64_t monotonic_ns() {
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now().time_since_epoch())
          .count());
}

Stats summarize(std::span<const double> samples) {
  Stats s;
  s.samples = samples.size();
  if (samples.empty()) return s;
  s.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  s.median = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  return s;
}

namespace {

double ns_to_ms(std::uint64_t ns) { return static_cast<double>(ns) / 1e6; }

}  // namespace

IndexingLatency bench_indexing(const DenseRecords& records, const std::function<void()>& reset,
                               const BatchSink& add_batch, std::size_t batch_size, std::size_t repetitions,
                               const NowFn& now) {
  if (batch_size == 0) throw InvalidArgument("batch_size must be >= 1");
  if (repetitions == 0) throw InvalidArgument("repetitions must be >= 1");
  const std::size_t batches = records.size() / batch_size;
  if (batches == 0) {
    throw InvalidArgument("corpus of " + std::to_string(records.size()) + " passages is smaller than one batch of " +
                          std::to_string(batch_size));
  }
  if (batches * repetitions < 2) {
    throw InvalidArgument("need at least two batches in total (one is the warm-up)");
  }
  std::vector<double> per_passage;
  per_passage.reserve(batches * repetitions);
  const std::span<const std::pair<std::string, DenseVector>> all(records);
  bool warm = false;
  for (std::size_t rep = 0; rep < repetitions; ++rep) {
    if (reset) reset();
    for (std::size_t b = 0; b < batches; ++b) {
      const auto batch = all.subspan(b * batch_size, batch_size);
      const auto t0 = now();
      add_batch(batch);
      const auto t1 = now();
      if (!warm) {
        warm = true;
        continue;
      }
      per_passage.push_back(ns_to_ms(t1 - t0) / static_cast<double>(batch_size));
    }
  }
  IndexingLatency out;
  out.ms_per_passage = summarize(per_passage);
  out.batch_size = batch_size;
  out.repetitions = repetitions;
  return out;
}

LatencyReport bench_inference(const Pipeline& pipeline, const std::vector<QueryInput>& queries,
                              std::size_t repetitions, const NowFn& now) {
  if (queries.empty()) throw InvalidArgument("latency benchmark needs at least one query");
  if (repetitions == 0) throw InvalidArgument("repetitions must be >= 1");
  const bool rerank = pipeline.config().mode == PipelineMode::RetrieveRerank;
  if (rerank) {
    for (const auto& q : queries) {
      if (!q.tokens) throw InvalidArgument("query '" + q.id + "' lacks token embeddings for rerank timing");
    }
  }

  // Warm-up, untimed.
  {
    const auto& q = queries.front();
    auto first = pipeline.first_stage(q.dense, q.id);
    if (rerank) pipeline.rerank_stage(first, *q.tokens);
  }

  std::vector<double> query_ms, rerank_ms, total_ms;
  for (std::size_t rep = 0; rep < repetitions; ++rep) {
    for (const auto& q : queries) {
      const auto t0 = now();
      auto first = pipeline.first_stage(q.dense, q.id);
      const auto t1 = now();
      std::uint64_t t2 = t1;
      if (rerank) {
        auto out = pipeline.rerank_stage(first, *q.tokens);
        t2 = now();
      }
      query_ms.push_back(ns_to_ms(t1 - t0));
      if (rerank) rerank_ms.push_back(ns_to_ms(t2 - t1));
      total_ms.push_back(ns_to_ms(t2 - t0));
    }
  }
  LatencyReport report;
  report.query_ms = summarize(query_ms);
  if (rerank) report.rerank_ms = summarize(rerank_ms);
  report.total_inference_ms = summarize(total_ms);
  return report;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

ReportFormat parse_report_format(std::string_view name) {
  if (name == "table") return ReportFormat::Table;
  if (name == "csv") return ReportFormat::Csv;
  if (name == "markdown" || name == "md") return ReportFormat::Markdown;
  throw InvalidArgument("unknown report format '" + std::string(name) + "' (expected table|csv|markdown)");
}

namespace {

using Row = std::vector<std::string>;

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

// Width in codepoints, so UTF-8 symbols do not skew alignment.
std::size_t display_width(const std::string& s) {
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

void render(const Row& header, const std::vector<Row>& rows, ReportFormat format, std::ostream& out) {
  switch (format) {
    case ReportFormat::Csv: {
      auto line = [&](const Row& r) {
        for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << csv_cell(r[i]);
        out << '\n';
      };
      line(header);
      for (const auto& r : rows) line(r);
      break;
    }
    case ReportFormat::Markdown: {
      auto line = [&](const Row& r) {
        out << '|';
        for (const auto& c : r) out << ' ' << (c.empty() ? "-" : c) << " |";
        out << '\n';
      };
      line(header);
      out << '|';
      for (std::size_t i = 0; i < header.size(); ++i) out << (i == 0 ? " --- |" : " ---: |");
      out << '\n';
      for (const auto& r : rows) line(r);
      break;
    }
    case ReportFormat::Table: {
      std::vector<std::size_t> width(header.size(), 0);
      auto measure = [&](const Row& r) {
        for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], display_width(r[i].empty() ? "-" : r[i]));
      };
      measure(header);
      for (const auto& r : rows) measure(r);
      auto line = [&](const Row& r) {
        for (std::size_t i = 0; i < r.size(); ++i) {
          const std::string c = r[i].empty() ? "-" : r[i];
          const std::string pad(width[i] - display_width(c), ' ');
          if (i) out << "  ";
          out << (i == 0 ? c + pad : pad + c);
        }
        out << '\n';
      };
      line(header);
      std::size_t total = 0;
      for (auto w : width) total += w;
      out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
      for (const auto& r : rows) line(r);
      break;
    }
  }
}

std::ofstream open_report(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError(FormatErrorKind::Io, "cannot open '" + path.string() + "' for writing");
  return out;
}

}  // namespace

void emit_recall_report(const std::vector<RecallReport>& reports, ReportFormat format, std::ostream& out) {
  std::set<std::size_t> ks(kStandardRecallKs.begin(), kStandardRecallKs.end());
  for (const auto& r : reports) {
    for (const auto& [k, _] : r.recall) ks.insert(k);
  }
  Row header{"config"};
  for (auto k : ks) header.push_back("R@" + std::to_string(k));
  std::vector<Row> rows;
  for (const auto& r : reports) {
    Row row{r.config};
    for (auto k : ks) {
      auto it = r.recall.find(k);
      row.push_back(it == r.recall.end() ? "" : fixed(it->second, 3));
    }
    rows.push_back(std::move(row));
  }
  render(header, rows, format, out);
}

void emit_accuracy_report(const std::vector<AccuracyReport>& reports, ReportFormat format, std::ostream& out,
                          const ReportOptions& opts) {
  Row header{"config"};
  for (const auto& t : kMirageTasks) header.push_back(t);
  header.push_back("Avg");
  if (opts.with_std_error) {
    for (const auto& t : kMirageTasks) header.push_back(t + " SE");
  }
  std::vector<Row> rows;
  for (const auto& r : reports) {
    Row row{r.config};
    double sum = 0.0;
    std::size_t present = 0;
    for (const auto& t : kMirageTasks) {
      auto it = r.per_task.find(t);
      if (it == r.per_task.end() || it->second.total == 0) {
        row.push_back("");
        continue;
      }
      row.push_back(fixed(100.0 * it->second.accuracy(), 2));
      sum += it->second.accuracy();
      ++present;
    }
    // Items without a MIRAGE task tag still count through the overall accuracy.
    const double avg = present ? sum / static_cast<double>(present) : r.accuracy();
    row.push_back(fixed(100.0 * avg, 2));
    if (opts.with_std_error) {
      for (const auto& t : kMirageTasks) {
        auto it = r.per_task.find(t);
        row.push_back(it == r.per_task.end() || it->second.total == 0 ? ""
                                                                       : fixed(100.0 * it->second.std_error(), 2));
      }
    }
    rows.push_back(std::move(row));
  }
  render(header, rows, format, out);
}

void emit_latency_report(const std::vector<LatencyReport>& reports, ReportFormat format, std::ostream& out) {
  const Row header{"config", "Index (ms/passage)", "Query (ms)", "Re-rank (ms)", "Total Inference (ms)"};
  std::vector<Row> rows;
  for (const auto& r : reports) {
    rows.push_back(Row{r.config, r.indexing ? fixed(r.indexing->ms_per_passage.mean, 4) : "",
                       fixed(r.query_ms.mean, 4), r.rerank_ms ? fixed(r.rerank_ms->mean, 4) : "",
                       fixed(r.total_inference_ms.mean, 4)});
  }
  render(header, rows, format, out);
}

void emit_recall_report(const std::vector<RecallReport>& reports, ReportFormat format,
                        const std::filesystem::path& path) {
  auto out = open_report(path);
  emit_recall_report(reports, format, out);
}

void emit_accuracy_report(const std::vector<AccuracyReport>& reports, ReportFormat format,
                          const std::filesystem::path& path, const ReportOptions& opts) {
  auto out = open_report(path);
  emit_accuracy_report(reports, format, out, opts);
}

void emit_latency_report(const std::vector<LatencyReport>& reports, ReportFormat format,
                         const std::filesystem::path& path) {
  auto out = open_report(path);
  emit_latency_report(reports, format, out);
}

}  // namespace lirank
