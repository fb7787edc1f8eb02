#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lirank/dense_index.hpp"
#include "lirank/io.hpp"
#include "lirank/pipeline.hpp"
#include "lirank/types.hpp"

namespace lirank {

// ---------------------------------------------------------------------------
// Recall@k
// ---------------------------------------------------------------------------

/// Fraction of runs whose top-k holds at least one gold doc. Throws
/// InvalidArgument when k == 0 or a run's query has no (or empty) qrels entry.
double recall_at_k(const std::vector<RankedRun>& runs, const io::Qrels& qrels, std::size_t k);

inline const std::vector<std::size_t> kStandardRecallKs = {3, 5, 10};

struct RecallReport {
  std::string config;
  std::map<std::size_t, double> recall;
  std::size_t query_count = 0;
  /// Queries dropped because none of their gold docs is in the indexed corpus.
  std::size_t excluded_queries = 0;
  std::string mode;
  std::size_t k_init = 0;
  std::string kind;
  std::string strategy;
};

/// Scores `runs` at every k. When `indexed` is given, queries whose gold docs are
/// all outside it are excluded and counted instead of lowering recall.
RecallReport evaluate_recall(const std::vector<RankedRun>& runs, const io::Qrels& qrels,
                             const std::vector<std::size_t>& ks = kStandardRecallKs,
                             const std::function<bool(const std::string&)>& indexed = {});

// ---------------------------------------------------------------------------
// MCQ accuracy
// ---------------------------------------------------------------------------

struct TaskAccuracy {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / total; }
  /// Binomial standard error sqrt(p(1-p)/n).
  double std_error() const;
};

struct AccuracyReport {
  std::string config;
  TaskAccuracy overall;
  std::map<std::string, TaskAccuracy> per_task;
  std::size_t missing = 0;  // items without a prediction
  std::size_t invalid = 0;  // predictions naming a letter that is not an option
  std::vector<std::string> warnings;

  double accuracy() const { return overall.accuracy(); }
};

/// Missing and out-of-options predictions count as wrong and add a warning.
AccuracyReport mcq_accuracy(const std::map<std::string, std::string>& predictions,
                            const std::vector<io::McqItem>& items);

// ---------------------------------------------------------------------------
// Latency
// ---------------------------------------------------------------------------

using NowFn = std::function<std::uint64_t()>;  // monotonic nanoseconds

/// std::chrono::steady_clock in nanoseconds.
std::uint64_t monotonic_ns();

struct Stats {
  double mean = 0.0;
  double median = 0.0;
  std::size_t samples = 0;
};

Stats summarize(std::span<const double> samples);

struct IndexingLatency {
  Stats ms_per_passage;
  std::size_t batch_size = 0;
  std::size_t repetitions = 0;
};

using BatchSink = std::function<void(std::span<const std::pair<std::string, DenseVector>>)>;

/// Feeds `records` to `add_batch` in full batches, `repetitions` times, calling
/// `reset` before each repetition. The very first batch is a warm-up and is not
/// measured. Throws InvalidArgument when fewer than batch_size records exist or
/// fewer than two batches would run in total.
IndexingLatency bench_indexing(const DenseRecords& records, const std::function<void()>& reset,
                               const BatchSink& add_batch, std::size_t batch_size = 500,
                               std::size_t repetitions = 1, const NowFn& now = monotonic_ns);

struct QueryInput {
  std::string id;
  DenseVector dense;
  std::optional<TokenMatrix> tokens;
};

struct LatencyReport {
  std::string config;
  std::optional<IndexingLatency> indexing;
  Stats query_ms;
  std::optional<Stats> rerank_ms;  // absent in retrieve-only mode
  Stats total_inference_ms;
  std::size_t batch_size = 0;
};

/// Times the first stage and the rerank stage separately per query. A shared
/// timestamp separates the two stages, so every sample satisfies
/// total == query + rerank exactly. One untimed warm-up query runs first.
LatencyReport bench_inference(const Pipeline& pipeline, const std::vector<QueryInput>& queries,
                              std::size_t repetitions, const NowFn& now = monotonic_ns);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

enum class ReportFormat { Table, Csv, Markdown };

ReportFormat parse_report_format(std::string_view name);

inline const std::vector<std::string> kMirageTasks = {"MMLU-Med", "MedQA", "MedMCQA", "PubMedQA*",
                                                      "BioASQ-Y/N"};

struct ReportOptions {
  /// Appends binomial standard errors to accuracy reports.
  bool with_std_error = false;
};

void emit_recall_report(const std::vector<RecallReport>& reports, ReportFormat format, std::ostream& out);
void emit_accuracy_report(const std::vector<AccuracyReport>& reports, ReportFormat format, std::ostream& out,
                          const ReportOptions& opts = {});
void emit_latency_report(const std::vector<LatencyReport>& reports, ReportFormat format, std::ostream& out);

/// File variants; throw FormatError(Io) for an unwritable path.
void emit_recall_report(const std::vector<RecallReport>& reports, ReportFormat format,
                        const std::filesystem::path& path);
void emit_accuracy_report(const std::vector<AccuracyReport>& reports, ReportFormat format,
                          const std::filesystem::path& path, const ReportOptions& opts = {});
void emit_latency_report(const std::vector<LatencyReport>& reports, ReportFormat format,
                         const std::filesystem::path& path);

}  // namespace lirank
