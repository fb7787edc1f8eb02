#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <CLI11.hpp>

#include "lirank/adapter.hpp"
#include "lirank/bm25.hpp"
#include "lirank/dense_index.hpp"
#include "lirank/errors.hpp"
#include "lirank/evaluation.hpp"
#include "lirank/io.hpp"
#include "lirank/late_interaction.hpp"
#include "lirank/negative_mining.hpp"
#include "lirank/pipeline.hpp"
#include "lirank/rag.hpp"

namespace lirank::cli {

namespace {

namespace fs = std::filesystem;

enum class LogLevel { Quiet, Info, Debug };

struct Globals {
  std::uint64_t seed = 0;
  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
  std::string log_level = "info";
};

class Log {
 public:
  Log(std::ostream& err, LogLevel level) : err_(err), level_(level) {}
  void info(const std::string& msg) const {
    if (level_ >= LogLevel::Info) err_ << msg << '\n';
  }
  void debug(const std::string& msg) const {
    if (level_ >= LogLevel::Debug) err_ << msg << '\n';
  }

 private:
  std::ostream& err_;
  LogLevel level_;
};

LogLevel parse_log_level(const std::string& s) {
  if (s == "quiet") return LogLevel::Quiet;
  if (s == "debug") return LogLevel::Debug;
  return LogLevel::Info;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw InvalidArgument(std::string(what) + " path is required");
  if (!fs::exists(path)) {
    throw FormatError(FormatErrorKind::Io, std::string(what) + " file not found: '" + path + "'");
  }
}

std::string fixed(double v, int decimals = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(decimals);
  os << v;
  return os.str();
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. The first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Shared loaders
// ---------------------------------------------------------------------------

std::string peek_magic(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorKind::Io, "cannot open '" + path + "' for reading");
  char magic[8] = {};
  in.read(magic, 8);
  if (in.gcount() != 8) throw FormatError(FormatErrorKind::Truncated, "'" + path + "' is shorter than a header");
  return std::string(magic, 8);
}

/// A first-stage index loaded from either snapshot format.
struct LoadedIndex {
  std::optional<FlatIndex> flat;
  std::optional<HnswIndex> ann;

  const FlatIndex& base() const { return ann ? ann->base() : *flat; }
};

LoadedIndex load_index(const std::string& path) {
  require_file(path, "index");
  LoadedIndex out;
  const auto magic = peek_magic(path);
  if (magic == "LIHNSW01") {
    out.ann = HnswIndex::load(path);
  } else if (magic == "LIFLAT01") {
    out.flat = load_flat(path);
  } else {
    throw FormatError(FormatErrorKind::BadMagic, "'" + path + "' is not a dense index snapshot");
  }
  return out;
}

io::EmbeddingFile load_embeddings(const std::string& path, io::EmbeddingKind kind, const char* what) {
  require_file(path, what);
  auto file = io::read_embeddings(path);
  if (file.header.kind != kind) {
    throw FormatError(FormatErrorKind::PayloadMismatch,
                      std::string(what) + " file '" + path + "' holds " +
                          (file.header.kind == io::EmbeddingKind::Dense ? "dense" : "token") + " records, expected " +
                          (kind == io::EmbeddingKind::Dense ? "dense" : "token"));
  }
  return file;
}

/// Dense query vectors (required) joined with token matrices (optional) by id.
std::vector<QueryInput> load_query_inputs(const std::string& dense_path, const std::string& tokens_path) {
  auto dense = io::to_dense(load_embeddings(dense_path, io::EmbeddingKind::Dense, "query embeddings"));
  std::unordered_map<std::string, TokenMatrix> tokens;
  if (!tokens_path.empty()) {
    for (auto& [id, m] : io::to_tokens(load_embeddings(tokens_path, io::EmbeddingKind::Tokens, "query tokens"))) {
      tokens.emplace(std::move(id), std::move(m));
    }
  }
  std::vector<QueryInput> out;
  out.reserve(dense.size());
  for (auto& [id, v] : dense) {
    QueryInput q{id, std::move(v), std::nullopt};
    if (auto it = tokens.find(id); it != tokens.end()) q.tokens = std::move(it->second);
    out.push_back(std::move(q));
  }
  return out;
}

std::unique_ptr<TokenProvider> load_token_provider(const std::string& path, bool lazy) {
  require_file(path, "document tokens");
  if (lazy) return std::make_unique<LazyTokenStore>(path);
  return std::make_unique<TokenStore>(TokenStore::from_file(path));
}

std::unordered_map<std::string, std::vector<float>> vector_table(const io::EmbeddingFile& file) {
  std::unordered_map<std::string, std::vector<float>> out;
  out.reserve(file.records.size());
  for (const auto& r : file.records) out.emplace(r.id, r.values);
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline flags, shared by search / eval-rag / bench
// ---------------------------------------------------------------------------

struct PipelineFlags {
  std::string mode = "rerank";
  std::size_t k = kDefaultK;
  std::size_t k_init = kDefaultKInit;
  std::string kind;  // empty: take the index's kind
  std::size_t ef_search = kDefaultEfSearch;
  bool exact = false;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--mode", mode, "retrieve | rerank")->capture_default_str();
    cmd->add_option("--k", k, "Final depth")->capture_default_str();
    cmd->add_option("--k-init", k_init, "First-stage depth in rerank mode")->capture_default_str();
    cmd->add_option("--kind", kind, "dot | cosine (defaults to the index's similarity)");
    cmd->add_option("--ef-search", ef_search, "HNSW search beam")->capture_default_str();
    cmd->add_flag("--exact", exact, "Exact first stage even when the index holds an HNSW graph");
  }

  /// Validated before any file is read, so flag mistakes surface as usage errors.
  PipelineConfig to_config() const {
    PipelineConfig cfg;
    cfg.mode = parse_pipeline_mode(mode);
    cfg.k = k;
    cfg.k_init = k_init;
    if (!kind.empty()) cfg.kind = parse_similarity_kind(kind);
    cfg.ef_search = ef_search;
    if (cfg.k == 0 || cfg.k_init == 0) throw InvalidArgument("k and k_init must be >= 1");
    if (cfg.mode == PipelineMode::RetrieveRerank && cfg.k > cfg.k_init) {
      throw InvalidArgument("--k (" + std::to_string(k) + ") must not exceed --k-init (" + std::to_string(k_init) +
                            ")");
    }
    return cfg;
  }

  PipelineConfig resolve(const LoadedIndex& index) const {
    auto cfg = to_config();
    if (!kind.empty() && cfg.kind != index.base().kind()) {
      throw InvalidArgument(std::string("--kind ") + kind + " does not match the index similarity " +
                            to_string(index.base().kind()));
    }
    cfg.kind = index.base().kind();
    cfg.first_stage = (index.ann && !exact) ? FirstStageKind::Ann : FirstStageKind::Exact;
    if (cfg.mode == PipelineMode::RetrieveOnly) cfg.k_init = std::max(cfg.k_init, cfg.k);
    if (cfg.first_stage == FirstStageKind::Ann) cfg.ef_search = std::max(cfg.ef_search, cfg.k_init);
    cfg.validate();
    return cfg;
  }
};

std::string run_tag(const std::string& base, Stage stage) { return base + "." + to_string(stage); }

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct Context {
  const Globals& globals;
  const Log& log;
  std::ostream& out;
};

struct IndexCmd {
  std::string embeddings;
  std::string corpus;
  std::string out;
  std::string kind = "cosine";
  bool ann = false;
  bool bm25 = false;
  std::size_t M = 16;
  std::size_t ef_construction = 200;
  std::size_t batch_size = 500;
  double k1 = 1.2;
  double b = 0.75;

  void setup(CLI::App* cmd) {
    cmd->add_option("--embeddings", embeddings, "Dense passage embeddings (LIEMBED1)");
    cmd->add_option("--corpus", corpus, "Corpus JSONL (with --bm25)");
    cmd->add_option("--out", out, "Index snapshot to write")->required();
    cmd->add_option("--kind", kind, "dot | cosine")->capture_default_str();
    cmd->add_flag("--ann", ann, "Build an HNSW graph on top of the exact index");
    cmd->add_flag("--bm25", bm25, "Build a BM25 inverted index from --corpus");
    cmd->add_option("--M", M, "HNSW out-degree")->capture_default_str();
    cmd->add_option("--ef-construction", ef_construction, "HNSW build beam")->capture_default_str();
    cmd->add_option("--batch-size", batch_size, "Passages per timed batch")->capture_default_str();
    cmd->add_option("--k1", k1, "BM25 k1")->capture_default_str();
    cmd->add_option("--b", b, "BM25 b")->capture_default_str();
  }

  int run(const Context& ctx) const {
    if (bm25) {
      require_file(corpus, "corpus");
      const auto docs = io::read_corpus(corpus);
      const auto t0 = monotonic_ns();
      const auto index = SparseIndex::build(docs, Bm25Params{k1, b});
      const double ms = static_cast<double>(monotonic_ns() - t0) / 1e6;
      index.save(out);
      ctx.out << "indexed " << index.doc_count() << " documents (bm25) in " << fixed(ms, 2) << " ms; "
              << fixed(ms / static_cast<double>(index.doc_count())) << " ms/passage\n";
      return kOk;
    }

    const auto similarity = parse_similarity_kind(kind);
    HnswParams params{M, ef_construction, ctx.globals.seed};
    if (ann) HnswIndex(similarity, 1, params);  // parameter check before any I/O
    if (batch_size == 0) throw InvalidArgument("--batch-size must be >= 1");

    const auto records = io::to_dense(load_embeddings(embeddings, io::EmbeddingKind::Dense, "embeddings"));
    if (records.empty()) throw InvalidArgument("embedding file '" + embeddings + "' holds no records");
    const std::size_t dim = records.front().second.dim();

    std::optional<FlatIndex> flat;
    std::optional<HnswIndex> graph;
    auto reset = [&] {
      if (ann) {
        graph.emplace(similarity, dim, params);
      } else {
        flat.emplace(similarity, dim);
      }
    };
    auto add_batch = [&](std::span<const std::pair<std::string, DenseVector>> batch) {
      for (const auto& [id, v] : batch) {
        if (ann) {
          graph->add(id, v);
        } else {
          flat->add(id, v);
        }
      }
    };

    std::optional<IndexingLatency> latency;
    const std::size_t full_batches = records.size() / batch_size;
    const auto t0 = monotonic_ns();
    if (full_batches >= 2) {
      latency = bench_indexing(records, reset, add_batch, batch_size, 1);
      add_batch(std::span<const std::pair<std::string, DenseVector>>(records).subspan(full_batches * batch_size));
    } else {
      reset();
      add_batch(records);
    }
    const double total_ms = static_cast<double>(monotonic_ns() - t0) / 1e6;

    if (ann) {
      graph->save(out);
    } else {
      save_flat(*flat, out);
    }
    const double per_passage =
        latency ? latency->ms_per_passage.mean : total_ms / static_cast<double>(records.size());
    ctx.out << "indexed " << records.size() << " passages (" << (ann ? "hnsw" : "flat") << ", " << kind << ") in "
            << fixed(total_ms, 2) << " ms; " << fixed(per_passage) << " ms/passage"
            << (latency ? " (mean over timed batches of " + std::to_string(batch_size) + ")" : "") << "\n";
    return kOk;
  }
};

struct SearchCmd {
  std::string index;
  std::string queries;
  std::string query_tokens;
  std::string doc_tokens;
  std::string out;
  std::string first_stage_out;
  std::string tag = "lirank";
  bool lazy_tokens = false;
  PipelineFlags pipe;

  void setup(CLI::App* cmd) {
    cmd->add_option("--index", index, "Dense index snapshot (flat or hnsw)")->required();
    cmd->add_option("--queries", queries, "Dense query embeddings (LIEMBED1)")->required();
    cmd->add_option("--query-tokens", query_tokens, "Query token embeddings (rerank mode)");
    cmd->add_option("--doc-tokens", doc_tokens, "Passage token embeddings (rerank mode)");
    cmd->add_option("--out", out, "Run file to write")->required();
    cmd->add_option("--first-stage-out", first_stage_out, "Also write the first-stage run");
    cmd->add_option("--tag", tag, "Run tag prefix; the stage name is appended")->capture_default_str();
    cmd->add_flag("--lazy-tokens", lazy_tokens, "Decode passage token matrices on demand");
    pipe.add_to(cmd);
  }

  int run(const Context& ctx) const {
    pipe.to_config();
    const auto loaded = load_index(index);
    const auto cfg = pipe.resolve(loaded);
    const bool rerank = cfg.mode == PipelineMode::RetrieveRerank;
    if (rerank && (query_tokens.empty() || doc_tokens.empty())) {
      throw InvalidArgument("rerank mode needs --query-tokens and --doc-tokens");
    }
    const auto inputs = load_query_inputs(queries, rerank ? query_tokens : "");
    std::unique_ptr<TokenProvider> store;
    if (rerank) store = load_token_provider(doc_tokens, lazy_tokens);
    const Pipeline pipeline(cfg, loaded.base(), loaded.ann ? &*loaded.ann : nullptr, store.get());

    std::vector<RankedRun> first(inputs.size()), final_runs(inputs.size());
    parallel_for(inputs.size(), ctx.globals.threads, [&](std::size_t i) {
      const auto& q = inputs[i];
      first[i] = pipeline.first_stage(q.dense, q.id);
      if (rerank) {
        if (!q.tokens) throw NotFound("no token embeddings for query '" + q.id + "'");
        final_runs[i] = pipeline.rerank_stage(first[i], *q.tokens);
      } else {
        final_runs[i] = first[i];
      }
    });

    io::write_run(final_runs, run_tag(tag, rerank ? Stage::ReRanked : Stage::FirstStage), out);
    if (!first_stage_out.empty()) io::write_run(first, run_tag(tag, Stage::FirstStage), first_stage_out);
    ctx.out << "wrote " << final_runs.size() << " queries (" << to_string(cfg.mode) << ", k=" << cfg.k
            << (rerank ? ", k_init=" + std::to_string(cfg.k_init) : "") << ") to " << out << "\n";
    return kOk;
  }
};

struct MineCmd {
  std::string strategy = "bm25";
  std::string pairs;
  std::string corpus;
  std::string bm25_index;
  std::string run_file;
  std::string out;
  std::size_t negatives = 32;
  std::size_t pool = 42;

  void setup(CLI::App* cmd) {
    cmd->add_option("--strategy", strategy, "random | bm25 | retriever")
        ->check(CLI::IsMember({"random", "bm25", "retriever"}))
        ->capture_default_str();
    cmd->add_option("--pairs", pairs, "Pair specs JSONL {query_id, query_text, positive_doc_id}")->required();
    cmd->add_option("--corpus", corpus, "Corpus JSONL");
    cmd->add_option("--bm25-index", bm25_index, "Prebuilt BM25 index (built from --corpus when absent)");
    cmd->add_option("--run", run_file, "First-stage run file (retriever strategy)");
    cmd->add_option("--out", out, "Training pairs JSONL to write")->required();
    cmd->add_option("--negatives", negatives, "Negatives per pair")->capture_default_str();
    cmd->add_option("--pool", pool, "BM25 candidate depth")->capture_default_str();
  }

  int run(const Context& ctx) const {
    MiningConfig cfg;
    cfg.strategy = parse_mining_strategy(strategy);
    cfg.negatives_per_pair = negatives;
    cfg.bm25_pool = pool;
    cfg.seed = ctx.globals.seed;
    cfg.validate();

    require_file(pairs, "pairs");
    const auto specs = io::read_pair_specs(pairs);
    Corpus docs;
    std::optional<SparseIndex> sparse;
    std::vector<RankedRun> runs;

    if (cfg.strategy == MiningStrategy::Random) require_file(corpus, "corpus");
    if (!corpus.empty()) {
      require_file(corpus, "corpus");
      docs = Corpus(io::read_corpus(corpus));
    }
    switch (cfg.strategy) {
      case MiningStrategy::Random:
        break;
      case MiningStrategy::Bm25Hard:
        if (!bm25_index.empty()) {
          require_file(bm25_index, "bm25 index");
          sparse = SparseIndex::load(bm25_index);
        } else {
          require_file(corpus, "corpus");
          sparse = SparseIndex::build(docs.documents());
        }
        break;
      case MiningStrategy::RetrieverMined: {
        require_file(run_file, "run");
        std::unordered_map<std::string, RankedRun> by_query;
        for (auto& r : io::read_run(run_file)) by_query.emplace(r.query_id, std::move(r));
        for (const auto& s : specs) {
          auto it = by_query.find(s.query_id);
          if (it == by_query.end()) throw NotFound("run file has no ranking for query '" + s.query_id + "'");
          runs.push_back(it->second);
        }
        break;
      }
    }

    const auto records = mine_pairs(specs, docs, sparse ? &*sparse : nullptr, runs.empty() ? nullptr : &runs, cfg,
                                     ctx.globals.threads);
    io::write_training_pairs(records, out);
    const auto shortfalls = std::count_if(records.begin(), records.end(), [](const auto& r) { return r.shortfall; });
    ctx.out << "mined " << records.size() << " pairs (" << strategy << ", " << negatives << " negatives); "
            << shortfalls << " flagged shortfall\n";
    return kOk;
  }
};

struct TrainCmd {
  std::string pairs;
  std::string query_embeddings;
  std::string passage_embeddings;
  std::string out;
  std::string log_csv;
  std::string loss = "inbatch";
  std::string kind = "cosine";
  TrainConfig cfg;

  void setup(CLI::App* cmd) {
    cmd->add_option("--pairs", pairs, "Training pairs JSONL (output of mine)")->required();
    cmd->add_option("--query-embeddings", query_embeddings, "Dense query embeddings")->required();
    cmd->add_option("--passage-embeddings", passage_embeddings, "Dense passage embeddings")->required();
    cmd->add_option("--out", out, "Adapter file to write")->required();
    cmd->add_option("--log", log_csv, "Per-epoch loss CSV");
    cmd->add_option("--loss", loss, "inbatch | explicit")->capture_default_str();
    cmd->add_option("--kind", kind, "dot | cosine")->capture_default_str();
    cmd->add_option("--temperature", cfg.temperature, "Softmax temperature")->capture_default_str();
    cmd->add_option("--batch-size", cfg.batch_size, "Pairs per step")->capture_default_str();
    cmd->add_option("--epochs", cfg.epochs, "Passes over the pairs")->capture_default_str();
    cmd->add_option("--lr", cfg.learning_rate, "Learning rate")->capture_default_str();
    cmd->add_option("--momentum", cfg.momentum, "SGD momentum")->capture_default_str();
    cmd->add_option("--dim-out", cfg.dim_out, "Output dim (0: same as input)")->capture_default_str();
  }

  int run(const Context& ctx) const {
    TrainConfig c = cfg;
    c.loss = parse_loss_kind(loss);
    c.kind = parse_similarity_kind(kind);
    c.seed = ctx.globals.seed;
    c.validate();

    require_file(pairs, "pairs");
    const auto records = io::read_training_pairs(pairs);
    const auto queries = vector_table(load_embeddings(query_embeddings, io::EmbeddingKind::Dense, "query embeddings"));
    const auto passages =
        vector_table(load_embeddings(passage_embeddings, io::EmbeddingKind::Dense, "passage embeddings"));
    const auto examples = resolve_examples(records, queries, passages, c.loss == LossKind::ExplicitNegatives);

    const auto result = train_adapter(examples, c);
    result.adapter.save(out);

    std::ostringstream csv;
    csv << "epoch,mean_batch_loss,eval_loss\n0,," << fixed(result.initial_loss, 6) << "\n";
    for (const auto& e : result.log) {
      csv << e.epoch << "," << fixed(e.mean_batch_loss, 6) << "," << fixed(e.eval_loss, 6) << "\n";
      ctx.log.info("epoch " + std::to_string(e.epoch) + " batch loss " + fixed(e.mean_batch_loss, 6) +
                   " eval loss " + fixed(e.eval_loss, 6));
    }
    if (!log_csv.empty()) {
      std::ofstream f(log_csv, std::ios::trunc);
      if (!f) throw FormatError(FormatErrorKind::Io, "cannot open '" + log_csv + "' for writing");
      f << csv.str();
    }
    const double final_loss = result.log.empty() ? result.initial_loss : result.log.back().eval_loss;
    ctx.out << "trained adapter " << result.adapter.dim_in() << "x" << result.adapter.dim_out() << " on "
            << examples.size() << " pairs; loss " << fixed(result.initial_loss, 6) << " -> " << fixed(final_loss, 6)
            << "\n";
    return kOk;
  }
};

struct AdaptCmd {
  std::string adapter;
  std::string in;
  std::string out;

  void setup(CLI::App* cmd) {
    cmd->add_option("--adapter", adapter, "Adapter file")->required();
    cmd->add_option("--in", in, "Embedding file to transform")->required();
    cmd->add_option("--out", out, "Embedding file to write")->required();
  }

  int run(const Context& ctx) const {
    require_file(adapter, "adapter");
    require_file(in, "embeddings");
    const auto a = Adapter::load(adapter);
    const auto file = io::read_embeddings(in);
    const auto adapted = adapt_embeddings(a, file);
    io::write_embeddings(out, adapted.header, adapted.records);
    ctx.out << "adapted " << adapted.records.size() << " records to dim " << adapted.header.dim << "\n";
    return kOk;
  }
};

struct EvalRecallCmd {
  std::vector<std::string> runs;
  std::string qrels;
  std::string corpus;
  std::vector<std::size_t> ks = kStandardRecallKs;
  std::string format = "csv";
  std::string out;

  void setup(CLI::App* cmd) {
    cmd->add_option("--run", runs, "Run file, optionally label=path; repeatable")->required();
    cmd->add_option("--qrels", qrels, "Qrels TSV")->required();
    cmd->add_option("--corpus", corpus, "Indexed corpus; queries with no gold doc in it are excluded");
    cmd->add_option("--ks", ks, "Cutoffs")->delimiter(',')->capture_default_str();
    cmd->add_option("--format", format, "csv | table | markdown")->capture_default_str();
    cmd->add_option("--out", out, "Report file (stdout when absent)");
  }

  int run(const Context& ctx) const {
    const auto fmt = parse_report_format(format);
    require_file(qrels, "qrels");
    const auto judgments = io::read_qrels(qrels);
    std::optional<Corpus> docs;
    if (!corpus.empty()) {
      require_file(corpus, "corpus");
      docs.emplace(io::read_corpus(corpus));
    }
    std::vector<RecallReport> reports;
    for (const auto& spec : runs) {
      std::string label = spec, path = spec;
      if (const auto eq = spec.find('='); eq != std::string::npos) {
        label = spec.substr(0, eq);
        path = spec.substr(eq + 1);
      }
      require_file(path, "run");
      auto report = evaluate_recall(io::read_run(path), judgments, ks,
                                    docs ? std::function<bool(const std::string&)>(
                                               [&](const std::string& id) { return docs->contains(id); })
                                         : std::function<bool(const std::string&)>());
      report.config = label;
      if (report.excluded_queries > 0) {
        ctx.log.info(label + ": excluded " + std::to_string(report.excluded_queries) +
                     " queries whose gold docs are not indexed");
      }
      reports.push_back(std::move(report));
    }
    if (out.empty()) {
      emit_recall_report(reports, fmt, ctx.out);
    } else {
      emit_recall_report(reports, fmt, fs::path(out));
      ctx.out << "wrote recall report to " << out << "\n";
    }
    return kOk;
  }
};

struct EvalRagCmd {
  std::string items;
  std::string corpus;
  std::string index;
  std::string queries;
  std::string query_tokens;
  std::string doc_tokens;
  std::string trace;
  std::string out;
  std::string format = "csv";
  std::string label = "rag";
  bool std_error = false;
  bool lazy_tokens = false;
  std::size_t concurrency = 1;
  std::size_t timeout_ms = 60000;
  std::size_t backoff_ms = 500;
  rag::GeneratorConfig gen;
  PipelineFlags pipe;

  void setup(CLI::App* cmd) {
    cmd->add_option("--items", items, "MCQ items JSONL")->required();
    cmd->add_option("--corpus", corpus, "Corpus JSONL (context passages)");
    cmd->add_option("--index", index, "Dense index snapshot; omit to evaluate without retrieval");
    cmd->add_option("--queries", queries, "Dense query embeddings keyed by item id");
    cmd->add_option("--query-tokens", query_tokens, "Query token embeddings keyed by item id");
    cmd->add_option("--doc-tokens", doc_tokens, "Passage token embeddings");
    cmd->add_option("--trace", trace, "Per-item trace JSONL");
    cmd->add_option("--out", out, "Accuracy report file (stdout when absent)");
    cmd->add_option("--format", format, "csv | table | markdown")->capture_default_str();
    cmd->add_option("--label", label, "Configuration label in the report")->capture_default_str();
    cmd->add_flag("--std-error", std_error, "Add binomial standard errors to the report");
    cmd->add_flag("--lazy-tokens", lazy_tokens, "Decode passage token matrices on demand");
    cmd->add_option("--concurrency", concurrency, "Parallel generator requests")->capture_default_str();
    cmd->add_option("--endpoint", gen.endpoint, "Chat-completion URL")->capture_default_str();
    cmd->add_option("--model", gen.model, "Model name sent to the endpoint")->capture_default_str();
    cmd->add_option("--temperature", gen.temperature, "Sampling temperature")->capture_default_str();
    cmd->add_option("--timeout-ms", timeout_ms, "Per-request timeout")->capture_default_str();
    cmd->add_option("--max-retries", gen.max_retries, "Retries after the first attempt")->capture_default_str();
    cmd->add_option("--backoff-ms", backoff_ms, "Initial retry backoff, doubled per retry")->capture_default_str();
    cmd->add_flag("--literal-template", gen.literal_template, "Send the rendered template as one user message");
    cmd->add_option("--api-key-env", gen.api_key_env, "Environment variable holding a bearer token")
        ->capture_default_str();
    pipe.add_to(cmd);
  }

  int run(const Context& ctx) const {
    const auto fmt = parse_report_format(format);
    rag::GeneratorConfig g = gen;
    g.timeout = std::chrono::milliseconds(timeout_ms);
    g.backoff = std::chrono::milliseconds(backoff_ms);
    g.validate();
    if (!index.empty()) pipe.to_config();

    require_file(items, "items");
    const auto mcq = io::read_mcq_items(items);

    Corpus docs;
    LoadedIndex loaded;
    std::unique_ptr<TokenProvider> store;
    std::optional<Pipeline> pipeline;
    std::map<std::string, QueryInput> inputs;
    if (!index.empty()) {
      require_file(corpus, "corpus");
      docs = Corpus(io::read_corpus(corpus));
      loaded = load_index(index);
      const auto cfg = pipe.resolve(loaded);
      const bool rerank = cfg.mode == PipelineMode::RetrieveRerank;
      if (rerank && (query_tokens.empty() || doc_tokens.empty())) {
        throw InvalidArgument("rerank mode needs --query-tokens and --doc-tokens");
      }
      if (rerank) store = load_token_provider(doc_tokens, lazy_tokens);
      for (auto& q : load_query_inputs(queries, rerank ? query_tokens : "")) inputs.emplace(q.id, std::move(q));
      pipeline.emplace(cfg, loaded.base(), loaded.ann ? &*loaded.ann : nullptr, store.get());
    }

    rag::HttpGenerator generator(g);
    rag::RagEvalOptions opts;
    opts.concurrency = concurrency;
    opts.config_label = label;
    const auto result = rag::run_rag_eval(mcq, inputs, pipeline ? &*pipeline : nullptr, docs, generator, opts);

    if (!trace.empty()) rag::write_trace(result.trace, trace);
    for (const auto& w : result.accuracy.warnings) ctx.log.debug(w);
    if (result.generator_failures + result.parse_failures > 0) {
      ctx.log.info(std::to_string(result.generator_failures) + " generator failures, " +
                   std::to_string(result.parse_failures) + " unparseable responses (counted wrong)");
    }
    ReportOptions ropts;
    ropts.with_std_error = std_error;
    if (out.empty()) {
      emit_accuracy_report({result.accuracy}, fmt, ctx.out, ropts);
    } else {
      emit_accuracy_report({result.accuracy}, fmt, fs::path(out), ropts);
      ctx.out << "accuracy " << fixed(result.accuracy.accuracy(), 4) << " over " << mcq.size() << " items; report "
              << out << "\n";
    }
    return kOk;
  }
};

struct BenchCmd {
  std::string embeddings;
  std::string queries;
  std::string query_tokens;
  std::string doc_tokens;
  std::string out;
  std::string format = "csv";
  std::string label = "lirank";
  std::string kind = "cosine";
  std::vector<std::string> modes;
  bool ann = false;
  std::size_t M = 16;
  std::size_t ef_construction = 200;
  std::size_t ef_search = kDefaultEfSearch;
  std::size_t k = kDefaultK;
  std::size_t k_init = kDefaultKInit;
  std::size_t batch_size = 500;
  std::size_t repetitions = 1;

  void setup(CLI::App* cmd) {
    cmd->add_option("--embeddings", embeddings, "Dense passage embeddings")->required();
    cmd->add_option("--queries", queries, "Dense query embeddings")->required();
    cmd->add_option("--query-tokens", query_tokens, "Query token embeddings (rerank rows)");
    cmd->add_option("--doc-tokens", doc_tokens, "Passage token embeddings (rerank rows)");
    cmd->add_option("--out", out, "Latency report (stdout when absent)");
    cmd->add_option("--format", format, "csv | table | markdown")->capture_default_str();
    cmd->add_option("--label", label, "Configuration label prefix")->capture_default_str();
    cmd->add_option("--kind", kind, "dot | cosine")->capture_default_str();
    cmd->add_option("--modes", modes, "Modes to time (default: retrieve, plus rerank when tokens are given)")->delimiter(',');
    cmd->add_flag("--ann", ann, "HNSW first stage");
    cmd->add_option("--M", M, "HNSW out-degree")->capture_default_str();
    cmd->add_option("--ef-construction", ef_construction, "HNSW build beam")->capture_default_str();
    cmd->add_option("--ef-search", ef_search, "HNSW search beam")->capture_default_str();
    cmd->add_option("--k", k, "Final depth")->capture_default_str();
    cmd->add_option("--k-init", k_init, "First-stage depth in rerank mode")->capture_default_str();
    cmd->add_option("--batch-size", batch_size, "Passages per timed indexing batch")->capture_default_str();
    cmd->add_option("--repetitions", repetitions, "Timed passes")->capture_default_str();
  }

  int run(const Context& ctx) const {
    const auto fmt = parse_report_format(format);
    const auto similarity = parse_similarity_kind(kind);
    const HnswParams params{M, ef_construction, ctx.globals.seed};
    if (ann) HnswIndex(similarity, 1, params);
    std::vector<PipelineMode> wanted;
    for (const auto& m : modes) wanted.push_back(parse_pipeline_mode(m));
    if (wanted.empty()) {
      wanted.push_back(PipelineMode::RetrieveOnly);
      if (!query_tokens.empty() && !doc_tokens.empty()) wanted.push_back(PipelineMode::RetrieveRerank);
    }

    const auto records = io::to_dense(load_embeddings(embeddings, io::EmbeddingKind::Dense, "embeddings"));
    if (records.empty()) throw InvalidArgument("embedding file '" + embeddings + "' holds no records");
    const std::size_t dim = records.front().second.dim();
    const bool need_tokens = std::count(wanted.begin(), wanted.end(), PipelineMode::RetrieveRerank) > 0;
    if (need_tokens && (query_tokens.empty() || doc_tokens.empty())) {
      throw InvalidArgument("rerank timing needs --query-tokens and --doc-tokens");
    }
    const auto inputs = load_query_inputs(queries, need_tokens ? query_tokens : "");

    std::optional<FlatIndex> flat;
    std::optional<HnswIndex> graph;
    auto reset = [&] {
      flat.reset();
      graph.reset();
      if (ann) {
        graph.emplace(similarity, dim, params);
      } else {
        flat.emplace(similarity, dim);
      }
    };
    auto add_batch = [&](std::span<const std::pair<std::string, DenseVector>> batch) {
      for (const auto& [id, v] : batch) {
        if (ann) {
          graph->add(id, v);
        } else {
          flat->add(id, v);
        }
      }
    };
    const auto indexing = bench_indexing(records, reset, add_batch, batch_size, repetitions);
    // Index the remainder so inference runs over the whole corpus.
    const std::size_t indexed = (records.size() / batch_size) * batch_size;
    add_batch(std::span<const std::pair<std::string, DenseVector>>(records).subspan(indexed));
    const FlatIndex& base = ann ? graph->base() : *flat;

    std::unique_ptr<TokenProvider> store;
    if (need_tokens) store = load_token_provider(doc_tokens, false);

    std::vector<LatencyReport> reports;
    for (const auto mode : wanted) {
      PipelineConfig cfg;
      cfg.mode = mode;
      cfg.kind = similarity;
      cfg.k = k;
      cfg.k_init = mode == PipelineMode::RetrieveOnly ? std::max(k, k_init) : k_init;
      cfg.first_stage = ann ? FirstStageKind::Ann : FirstStageKind::Exact;
      cfg.ef_search = std::max(ef_search, cfg.k_init);
      const Pipeline pipeline(cfg, base, ann ? &*graph : nullptr, store.get());
      auto report = bench_inference(pipeline, inputs, repetitions);
      report.config = label + " " + (ann ? "hnsw" : "flat") + " " + to_string(mode);
      report.indexing = indexing;
      report.batch_size = batch_size;
      reports.push_back(std::move(report));
    }
    if (out.empty()) {
      emit_latency_report(reports, fmt, ctx.out);
    } else {
      emit_latency_report(reports, fmt, fs::path(out));
      ctx.out << "wrote latency report for " << reports.size() << " configuration(s) to " << out << "\n";
    }
    return kOk;
  }
};

/// Effective configuration as a TOML document: globals at the top, the chosen
/// subcommand's options under its section.
std::string effective_config(const CLI::App& app, const CLI::App& sub) {
  std::ostringstream os;
  for (const auto* opt : app.get_options()) {
    if (!opt->get_configurable() || opt->get_lnames().empty()) continue;
    const auto& name = opt->get_lnames().front();
    if (name == "help" || name == "config") continue;
    auto results = opt->reduced_results();
    std::string value = results.empty() ? opt->get_default_str() : results.front();
    const bool numeric = !value.empty() && value.find_first_not_of("0123456789.-") == std::string::npos;
    os << name << "=" << (numeric ? value : "\"" + value + "\"") << "\n";
  }
  os << "\n[" << sub.get_name() << "]\n" << sub.config_to_str(true, false);
  return os.str();
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const rag::GeneratorError*>(&e)) return kExternal;
  if (dynamic_cast<const DimensionMismatch*>(&e)) return kInput;
  if (dynamic_cast<const InvalidArgument*>(&e)) return kUsage;
  return kInput;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"lirank: two-stage dense retrieval with MaxSim re-ranking, training and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML/INI file; command-line flags override its values");
  Globals globals;
  app.add_option("--seed", globals.seed, "Seed for every randomized step")->capture_default_str();
  app.add_option("--threads", globals.threads, "Worker threads for parallel stages")->capture_default_str();
  app.add_option("--log-level", globals.log_level, "quiet | info | debug")
      ->check(CLI::IsMember({"quiet", "info", "debug"}))
      ->capture_default_str();

  IndexCmd index_cmd;
  SearchCmd search_cmd;
  MineCmd mine_cmd;
  TrainCmd train_cmd;
  AdaptCmd adapt_cmd;
  EvalRecallCmd recall_cmd;
  EvalRagCmd rag_cmd;
  BenchCmd bench_cmd;

  std::vector<std::pair<CLI::App*, std::function<int(const Context&)>>> commands;
  auto add = [&](const char* name, const char* help, auto& cmd) {
    auto* sub = app.add_subcommand(name, help);
    cmd.setup(sub);
    commands.emplace_back(sub, [&cmd](const Context& ctx) { return cmd.run(ctx); });
  };
  add("index", "Build a dense (flat or HNSW) or BM25 index", index_cmd);
  add("search", "Run the retrieve or retrieve-and-rerank pipeline and write a run file", search_cmd);
  add("mine", "Mine negatives for training pairs", mine_cmd);
  add("train", "Train a linear query/passage adapter", train_cmd);
  add("adapt", "Apply a trained adapter to an embedding file", adapt_cmd);
  add("eval-recall", "Score run files with Recall@k", recall_cmd);
  add("eval-rag", "Evaluate MCQ accuracy through the generator", rag_cmd);
  add("bench", "Time indexing, first-stage search and re-ranking", bench_cmd);

  std::vector<std::string> reversed(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  const Log log(err, parse_log_level(globals.log_level));
  for (auto& [sub, fn] : commands) {
    if (!sub->parsed()) continue;
    const auto echo = effective_config(app, *sub);
    log.info("# effective config\n" + echo);
    try {
      const Context ctx{globals, log, out};
      const int code = fn(ctx);
      // Saved next to the primary output so every artifact records how it was made.
      if (auto* out_opt = sub->get_option_no_throw("--out"); out_opt && out_opt->count() > 0) {
        const auto path = out_opt->as<std::string>() + ".config.toml";
        std::ofstream f(path, std::ios::trunc);
        if (!f) throw FormatError(FormatErrorKind::Io, "cannot write '" + path + "'");
        f << echo;
      }
      return code;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << '\n';
      return exit_code_for(e);
    }
  }
  return kUsage;
}

}  // namespace lirank::cli
