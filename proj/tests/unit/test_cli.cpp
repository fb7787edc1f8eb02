#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "cli.hpp"
#include "lirank/io.hpp"
#include "stub_llm.hpp"
#include "synthetic.hpp"

using namespace lirank;
using namespace lirank::testing;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "lirank");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string mini(const std::string& name) { return (fixtures_dir() / "mini" / name).string(); }

class CliMini : public ::testing::Test {
 protected:
  TempDir dir{"lirank-cli"};
  std::string p(const std::string& name) const { return (dir / name).string(); }

  void build_index(const std::vector<std::string>& extra = {}) {
    std::vector<std::string> args = {"index", "--embeddings", mini("doc_dense.lie"), "--out", p("dense.idx")};
    args.insert(args.end(), extra.begin(), extra.end());
    const auto r = run_cli(args);
    ASSERT_EQ(r.code, 0) << r.err;
  }

  std::vector<std::string> search_args(const std::string& out) const {
    return {"search",       "--index",          p("dense.idx"),           "--queries",
            mini("query_dense.lie"), "--query-tokens", mini("query_tokens.lie"), "--doc-tokens",
            mini("doc_tokens.lie"),  "--out",          out};
  }
};

}  // namespace

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run_cli({}).code, cli::kUsage);
  EXPECT_EQ(run_cli({"frobnicate"}).code, cli::kUsage);
  EXPECT_EQ(run_cli({"--help"}).code, cli::kOk);
  EXPECT_EQ(run_cli({"search", "--index", "x"}).code, cli::kUsage);  // --out and --queries missing
  EXPECT_EQ(run_cli({"--log-level", "loud", "mine", "--pairs", "p", "--out", "o"}).code, cli::kUsage);
  EXPECT_EQ(run_cli({"mine", "--strategy", "oracle", "--pairs", "p", "--out", "o"}).code, cli::kUsage);
}

TEST_F(CliMini, InputErrors) {
  auto r = run_cli({"index", "--embeddings", p("missing.lie"), "--out", p("x.idx")});
  EXPECT_EQ(r.code, cli::kInput);
  EXPECT_NE(r.err.find("missing.lie"), std::string::npos);
  r = run_cli({"index", "--embeddings", (fixtures_dir() / "formats" / "bad_magic.lie").string(), "--out", p("x.idx")});
  EXPECT_EQ(r.code, cli::kInput);
  // Token file where a dense one is expected.
  r = run_cli({"index", "--embeddings", mini("doc_tokens.lie"), "--out", p("x.idx")});
  EXPECT_EQ(r.code, cli::kInput);
}

TEST_F(CliMini, FlagConflictsAreUsageErrors) {
  build_index();
  auto args = search_args(p("run.trec"));
  args.insert(args.end(), {"--k", "30"});
  EXPECT_EQ(run_cli(args).code, cli::kUsage);
  args = search_args(p("run.trec"));
  args.insert(args.end(), {"--kind", "dot"});  // index was built with cosine
  EXPECT_EQ(run_cli(args).code, cli::kUsage);
  EXPECT_EQ(run_cli({"search", "--index", p("dense.idx"), "--queries", mini("query_dense.lie"), "--out", p("r")}).code,
            cli::kUsage);  // rerank without token files
}

TEST_F(CliMini, SearchRerankIsClosedOverFirstStage) {
  build_index();
  auto args = search_args(p("run.trec"));
  args.insert(args.end(), {"--first-stage-out", p("first.trec"), "--tag", "mini"});
  const auto r = run_cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("wrote 16 queries"), std::string::npos) << r.out;

  const auto final_runs = io::read_run(p("run.trec"));
  const auto first = io::read_run(p("first.trec"));
  ASSERT_EQ(final_runs.size(), 16u);
  ASSERT_EQ(first.size(), 16u);
  std::map<std::string, std::set<std::string>> pool;
  for (const auto& run : first) {
    EXPECT_EQ(run.candidates.size(), 20u);
    for (const auto& c : run.candidates) pool[run.query_id].insert(c.doc_id);
  }
  for (const auto& run : final_runs) {
    EXPECT_EQ(run.candidates.size(), 5u);
    for (const auto& c : run.candidates) EXPECT_TRUE(pool[run.query_id].count(c.doc_id)) << c.doc_id;
  }
  const auto text = read_file(p("run.trec"));
  EXPECT_NE(text.find("mini.reranked"), std::string::npos);
  EXPECT_NE(read_file(p("first.trec")).find("mini.first-stage"), std::string::npos);

  // Effective configuration saved next to the output.
  const auto echo = read_file(p("run.trec") + ".config.toml");
  EXPECT_NE(echo.find("seed=0"), std::string::npos) << echo;
  EXPECT_NE(echo.find("[search]"), std::string::npos);
  EXPECT_NE(echo.find("k-init=20"), std::string::npos) << echo;
}

TEST_F(CliMini, HnswIndexAtFullBeamMatchesExactSearch) {
  build_index();
  ASSERT_EQ(run_cli({"index", "--embeddings", mini("doc_dense.lie"), "--out", p("hnsw.idx"), "--ann", "--M", "4"}).code,
            0);
  auto exact = search_args(p("exact.trec"));
  ASSERT_EQ(run_cli(exact).code, 0);
  auto approx = search_args(p("ann.trec"));
  approx[2] = p("hnsw.idx");
  approx.insert(approx.end(), {"--ef-search", "80"});
  ASSERT_EQ(run_cli(approx).code, 0);
  EXPECT_EQ(io::read_run(p("exact.trec")), io::read_run(p("ann.trec")));
}

TEST_F(CliMini, ConfigFileIsOverriddenByFlags) {
  build_index();
  write_file(p("cfg.toml"), "[search]\nk=3\nmode=\"retrieve\"\n");
  const auto r = run_cli({"--config", p("cfg.toml"), "search", "--index", p("dense.idx"), "--queries",
                          mini("query_dense.lie"), "--out", p("run.trec"), "--k", "7"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const auto& run : io::read_run(p("run.trec"))) EXPECT_EQ(run.candidates.size(), 7u);
}

TEST_F(CliMini, MiningIsDeterministicPerSeed) {
  auto mine = [&](const std::string& strategy, const std::string& seed, const std::string& out) {
    const auto r = run_cli({"--seed", seed, "mine", "--strategy", strategy, "--pairs", mini("pairs.jsonl"), "--corpus",
                            mini("corpus.jsonl"), "--negatives", "8", "--out", p(out)});
    EXPECT_EQ(r.code, 0) << r.err;
    return read_file(p(out));
  };
  EXPECT_EQ(mine("bm25", "42", "a.jsonl"), mine("bm25", "42", "b.jsonl"));
  EXPECT_EQ(mine("random", "7", "c.jsonl"), mine("random", "7", "d.jsonl"));
  EXPECT_NE(mine("random", "7", "e.jsonl"), mine("random", "8", "f.jsonl"));

  // Thread count does not change the output.
  const auto r = run_cli({"--seed", "7", "--threads", "4", "mine", "--strategy", "random", "--pairs",
                          mini("pairs.jsonl"), "--corpus", mini("corpus.jsonl"), "--negatives", "8", "--out", p("g.jsonl")});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(read_file(p("g.jsonl")), read_file(p("c.jsonl")));

  const auto pairs = io::read_training_pairs(p("a.jsonl"));
  ASSERT_EQ(pairs.size(), 16u);
  for (const auto& rec : pairs) {
    EXPECT_EQ(rec.negative_doc_ids.size(), 8u);
    for (const auto& n : rec.negative_doc_ids) EXPECT_NE(n, rec.positive_doc_id);
  }
}

TEST_F(CliMini, RetrieverMiningReadsRunFile) {
  build_index();
  ASSERT_EQ(run_cli({"search", "--index", p("dense.idx"), "--queries", mini("query_dense.lie"), "--out", p("run.trec"),
                     "--mode", "retrieve", "--k", "20"})
                .code,
            0);
  const auto r = run_cli({"mine", "--strategy", "retriever", "--pairs", mini("pairs.jsonl"), "--run", p("run.trec"),
                          "--negatives", "4", "--out", p("neg.jsonl")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto runs = io::read_run(p("run.trec"));
  const auto pairs = io::read_training_pairs(p("neg.jsonl"));
  ASSERT_EQ(pairs.size(), runs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    std::vector<std::string> expected;
    for (const auto& c : runs[i].candidates) {
      if (c.doc_id != pairs[i].positive_doc_id && expected.size() < 4) expected.push_back(c.doc_id);
    }
    EXPECT_EQ(pairs[i].negative_doc_ids, expected);
  }
}

TEST_F(CliMini, TrainThenAdapt) {
  ASSERT_EQ(run_cli({"mine", "--pairs", mini("pairs.jsonl"), "--corpus", mini("corpus.jsonl"), "--negatives", "4",
                     "--out", p("pairs.jsonl")})
                .code,
            0);
  auto r = run_cli({"train", "--pairs", p("pairs.jsonl"), "--query-embeddings", mini("query_dense.lie"),
                    "--passage-embeddings", mini("doc_dense.lie"), "--out", p("adapter.bin"), "--log", p("loss.csv"),
                    "--epochs", "3", "--batch-size", "4", "--dim-out", "8"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto log = read_file(p("loss.csv"));
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 5);  // header, initial, 3 epochs
  r = run_cli({"adapt", "--adapter", p("adapter.bin"), "--in", mini("doc_dense.lie"), "--out", p("adapted.lie")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto adapted = io::read_embeddings(p("adapted.lie"));
  EXPECT_EQ(adapted.header.dim, 8u);
  EXPECT_EQ(adapted.records.size(), 80u);
  // Wrong input dim.
  r = run_cli({"adapt", "--adapter", p("adapter.bin"), "--in", p("adapted.lie"), "--out", p("again.lie")});
  EXPECT_EQ(r.code, cli::kInput);
}

TEST_F(CliMini, EvalRecallMatchesHandCounts) {
  const auto run = (fixtures_dir() / "recall" / "run.trec").string();
  const auto qrels = (fixtures_dir() / "recall" / "qrels.tsv").string();
  auto r = run_cli({"eval-recall", "--run", "bm25=" + run, "--qrels", qrels, "--ks", "3", "5", "10"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "config,R@3,R@5,R@10\nbm25,0.400,0.700,0.900\n");
  EXPECT_EQ(run_cli({"eval-recall", "--run", "bm25=" + run, "--qrels", qrels, "--ks", "3,5,10"}).out, r.out);

  r = run_cli({"eval-recall", "--run", run, "--qrels", qrels, "--format", "markdown", "--out", p("recall.md")});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(read_file(p("recall.md")).rfind("| config |", 0), 0u);
  EXPECT_EQ(run_cli({"eval-recall", "--run", run, "--qrels", qrels, "--format", "xml"}).code, cli::kUsage);
}

TEST_F(CliMini, EvalRagAgainstStubGenerator) {
  std::map<std::string, std::string> key;
  for (const auto& item : io::read_mcq_items(mini("items.jsonl"))) key[item.question] = item.answer_key;
  StubLlm stub([&](const std::string& body, int) {
    return StubReply{200, completion_body(answer_json(key.at(question_of(body))))};
  });
  build_index();
  const auto r = run_cli({"eval-rag", "--items", mini("items.jsonl"), "--corpus", mini("corpus.jsonl"), "--index",
                          p("dense.idx"), "--queries", mini("query_dense.lie"), "--query-tokens",
                          mini("query_tokens.lie"), "--doc-tokens", mini("doc_tokens.lie"), "--endpoint",
                          stub.endpoint(), "--concurrency", "3", "--trace", p("trace.jsonl")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(stub.calls(), 16);
  EXPECT_NE(r.out.find(",100.00\n"), std::string::npos) << r.out;
  const auto trace = read_file(p("trace.jsonl"));
  EXPECT_EQ(std::count(trace.begin(), trace.end(), '\n'), 16);
  // Retrieved context reaches the prompt.
  EXPECT_NE(stub.requests().front().find("[doc"), std::string::npos);
}

TEST_F(CliMini, EvalRagGeneratorDownIsExternalFailure) {
  StubLlm stub([](const std::string&, int) { return StubReply{503, "{}"}; });
  const auto r = run_cli({"eval-rag", "--items", mini("items.jsonl"), "--endpoint", stub.endpoint(), "--max-retries",
                          "0", "--backoff-ms", "1"});
  EXPECT_EQ(r.code, cli::kExternal) << r.err;
}

TEST_F(CliMini, BenchReportsAllColumns) {
  const auto r = run_cli({"bench", "--embeddings", mini("doc_dense.lie"), "--queries", mini("query_dense.lie"),
                          "--query-tokens", mini("query_tokens.lie"), "--doc-tokens", mini("doc_tokens.lie"),
                          "--batch-size", "16", "--label", "mini"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(r.out);
  std::string header, row1, row2;
  std::getline(lines, header);
  std::getline(lines, row1);
  std::getline(lines, row2);
  EXPECT_EQ(header, "config,Index (ms/passage),Query (ms),Re-rank (ms),Total Inference (ms)");
  EXPECT_EQ(row1.rfind("mini flat retrieve,", 0), 0u) << row1;
  EXPECT_EQ(row2.rfind("mini flat rerank,", 0), 0u) << row2;
  EXPECT_EQ(std::count(row2.begin(), row2.end(), ','), 4);
}
