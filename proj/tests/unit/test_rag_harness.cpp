#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <set>

#include <json.hpp>

#include "lirank/rag.hpp"
#include "stub_llm.hpp"
#include "synthetic.hpp"

using namespace lirank;
using namespace lirank::rag;
using namespace lirank::testing;
using nlohmann::json;

namespace {

struct PromptCase {
  std::string name;
  io::McqItem item;
  ContextBundle context;
};

std::vector<PromptCase> prompt_cases() {
  std::ifstream in(fixtures_dir() / "prompts" / "cases.json");
  const auto j = json::parse(in);
  std::vector<PromptCase> out;
  for (const auto& c : j) {
    PromptCase pc;
    pc.name = c.at("name");
    const auto& it = c.at("item");
    pc.item.id = it.at("id");
    pc.item.question = it.at("question");
    pc.item.answer_key = it.at("answer");
    pc.item.task = it.at("task");
    for (const auto& [k, v] : it.at("options").items()) pc.item.options[k] = v.get<std::string>();
    pc.context.query_text = pc.item.question;
    for (const auto& p : c.at("passages")) {
      pc.context.passages.push_back({p.at("doc_id"), p.at("title"), p.at("text")});
      pc.context.scores.push_back(1.0);
    }
    out.push_back(pc);
  }
  return out;
}

GeneratorConfig fast_config(const std::string& endpoint, int retries) {
  GeneratorConfig cfg;
  cfg.endpoint = endpoint;
  cfg.max_retries = retries;
  cfg.backoff = std::chrono::milliseconds(1);
  cfg.timeout = std::chrono::milliseconds(2000);
  return cfg;
}

// Generator answering from a lookup keyed by the item's question.
class ScriptedGenerator final : public Generator {
 public:
  explicit ScriptedGenerator(std::function<std::string(const std::string& prompt)> f) : f_(std::move(f)) {}
  std::string generate(const std::string& prompt) override { return f_(prompt); }

 private:
  std::function<std::string(const std::string&)> f_;
};

}  // namespace

TEST(Prompt, GoldenFilesByteForByte) {
  const auto cases = prompt_cases();
  ASSERT_EQ(cases.size(), 3u);
  for (const auto& c : cases) {
    const auto golden = read_file(fixtures_dir() / "prompts" / (c.name + ".txt"));
    EXPECT_EQ(render_prompt(c.context, c.item), golden) << c.name;
  }
}

TEST(Prompt, EmptyContextOnlyChangesContextSection) {
  const auto cases = prompt_cases();
  const auto with = render_prompt(cases[0].context, cases[0].item);
  const auto without = render_prompt(ContextBundle{}, cases[0].item);
  const auto ctx = render_context(cases[0].context);
  ASSERT_FALSE(ctx.empty());
  auto expected = with;
  expected.erase(expected.find(ctx), ctx.size());
  EXPECT_EQ(without, expected);
}

TEST(Prompt, OptionsAndContextFormatting) {
  io::McqItem item{"i", "q?", {{"B", "y"}, {"A", "x"}}, "A", ""};
  EXPECT_EQ(render_options(item), "A. x\nB. y");
  item.options = {{"A", "only"}};
  EXPECT_THROW(render_prompt(ContextBundle{}, item), InvalidArgument);

  ContextBundle ctx;
  ctx.passages = {{"d1", "T", "body {x}"}, {"d2", "", "plain"}};
  EXPECT_EQ(render_context(ctx), "[d1] T — body {x}\n\n[d2] plain");
  PromptOptions opts;
  opts.passage_format = "{title}: {text}";
  opts.passage_separator = "\n";
  EXPECT_EQ(render_context(ctx, opts), "T: body {x}\n[d2] plain");
}

TEST(Prompt, SubstitutedTextIsNotRescanned) {
  io::McqItem item{"i", "What is {options}?", {{"A", "{query}"}, {"B", "}}"}}, "A", ""};
  const auto p = render_prompt(ContextBundle{}, item);
  EXPECT_NE(p.find("**Question:** What is {options}?\n"), std::string::npos);
  EXPECT_NE(p.find("A. {query}\nB. }}\n"), std::string::npos);
  EXPECT_NE(p.find("\n{\n  \"step_by_step_thinking\""), std::string::npos);
  EXPECT_EQ(render_prompt(ContextBundle{}, item), p);
}

TEST(Prompt, MessagesSplitAtRoleHeaders) {
  const auto cases = prompt_cases();
  const auto prompt = render_prompt(cases[0].context, cases[0].item);
  const auto msgs = to_messages(prompt);
  ASSERT_EQ(msgs.size(), 2u);
  EXPECT_EQ(msgs[0].role, "system");
  EXPECT_EQ(msgs[0].content.rfind("You are a meticulous", 0), 0u);
  EXPECT_EQ(msgs[1].role, "user");
  EXPECT_EQ(msgs[1].content.rfind("### TASK ###", 0), 0u);
  EXPECT_EQ(msgs[1].content.find("<|"), std::string::npos);
  const auto literal = to_messages(prompt, true);
  ASSERT_EQ(literal.size(), 1u);
  EXPECT_EQ(literal[0].content, prompt);
}

TEST(Parse, TemplateSampleObject) {
  // The sample structure from the template, as it reads once the braces are unescaped.
  const std::string raw =
      "{\n"
      "  \"step_by_step_thinking\": \"Your detailed analysis and \n"
      "  reasoning to reach the answer.\",\n"
      "  \"relevant_context\": \"YES\",\n"
      "  \"answer_choice\": \"C\"\n"
      "}";
  const auto r = parse_generation(raw);
  EXPECT_EQ(r.answer_choice, "C");
  EXPECT_EQ(r.relevant_context, RelevantContext::Yes);
  EXPECT_EQ(r.raw_response, raw);
  EXPECT_TRUE(r.lenient);  // raw newline inside a string literal
}

TEST(Parse, TolerantExtraction) {
  const auto fenced = parse_generation("Sure!\n```json\n" + answer_json("b", "not") + "\n```\n");
  EXPECT_EQ(fenced.answer_choice, "B");
  EXPECT_EQ(fenced.relevant_context, RelevantContext::Not);
  EXPECT_TRUE(fenced.lenient);
  const auto strict = parse_generation(answer_json("D"));
  EXPECT_FALSE(strict.lenient);
  // A brace inside a string must not confuse the balancing.
  const auto braces = parse_generation(R"(x {"step_by_step_thinking": "a } b {", "relevant_context": "Yes", "answer_choice": "A"})");
  EXPECT_EQ(braces.answer_choice, "A");
  // An earlier non-JSON brace group is skipped.
  EXPECT_EQ(parse_generation("{not json} then " + answer_json("C")).answer_choice, "C");
}

TEST(Parse, TypedErrors) {
  auto kind_of = [](const std::string& raw) {
    try {
      parse_generation(raw);
    } catch (const ParseError& e) {
      return std::make_pair(e.kind(), e.detail());
    }
    return std::make_pair(ParseErrorKind::NoJson, std::string("no error"));
  };
  EXPECT_EQ(kind_of("no json here"), std::make_pair(ParseErrorKind::NoJson, std::string()));
  EXPECT_EQ(kind_of(R"({"answer_choice": "C"})"), std::make_pair(ParseErrorKind::MissingField, std::string("step_by_step_thinking")));
  EXPECT_EQ(kind_of(answer_json("CD")).first, ParseErrorKind::BadChoice);
  EXPECT_EQ(kind_of(answer_json("7")).first, ParseErrorKind::BadChoice);
  EXPECT_EQ(kind_of(answer_json("A", "MAYBE")).first, ParseErrorKind::BadRelevance);
}

TEST(Generator, EchoesCannedCompletion) {
  StubLlm stub([](const std::string&, int) { return StubReply{200, completion_body("canned {text}")}; });
  HttpGenerator gen(fast_config(stub.endpoint(), 0));
  EXPECT_EQ(gen.generate("hello"), "canned {text}");
  const auto req = json::parse(stub.requests().at(0));
  EXPECT_EQ(req.at("model"), "llama-3.3-8b-instruct");
  EXPECT_EQ(req.at("temperature"), 0.0);
  EXPECT_EQ(req.at("messages").at(0).at("content"), "hello");
}

TEST(Generator, RetriesTransientFailures) {
  StubLlm stub([](const std::string&, int call) {
    return call < 2 ? StubReply{500, "oops"} : StubReply{200, completion_body("ok")};
  });
  std::vector<long> sleeps;
  HttpGenerator gen(fast_config(stub.endpoint(), 3), [&](std::chrono::milliseconds d) { sleeps.push_back(d.count()); });
  EXPECT_EQ(gen.generate("p"), "ok");
  EXPECT_EQ(stub.calls(), 3);
  EXPECT_EQ(sleeps, (std::vector<long>{1, 2}));
}

TEST(Generator, ZeroRetriesExhaustsImmediately) {
  StubLlm stub([](const std::string&, int) { return StubReply{503, "busy"}; });
  HttpGenerator gen(fast_config(stub.endpoint(), 0));
  try {
    gen.generate("p");
    FAIL();
  } catch (const GeneratorError& e) {
    EXPECT_EQ(e.kind(), GeneratorErrorKind::RetriesExhausted);
    EXPECT_EQ(e.attempts(), 1);
    EXPECT_EQ(e.status(), 503);
    EXPECT_EQ(e.last_cause(), GeneratorErrorKind::HttpStatus);
  }
  EXPECT_EQ(stub.calls(), 1);
}

TEST(Generator, ClientErrorIsNotRetried) {
  StubLlm stub([](const std::string&, int) { return StubReply{400, "bad"}; });
  HttpGenerator gen(fast_config(stub.endpoint(), 3));
  try {
    gen.generate("p");
    FAIL();
  } catch (const GeneratorError& e) {
    EXPECT_EQ(e.kind(), GeneratorErrorKind::HttpStatus);
    EXPECT_EQ(e.status(), 400);
  }
  EXPECT_EQ(stub.calls(), 1);
}

TEST(Generator, TimeoutAndBadShape) {
  StubLlm slow([](const std::string&, int) { return StubReply{200, completion_body("late"), 400}; });
  auto cfg = fast_config(slow.endpoint(), 0);
  cfg.timeout = std::chrono::milliseconds(100);
  try {
    HttpGenerator(cfg).generate("p");
    FAIL();
  } catch (const GeneratorError& e) {
    EXPECT_EQ(e.kind(), GeneratorErrorKind::RetriesExhausted);
    EXPECT_EQ(e.last_cause(), GeneratorErrorKind::Timeout);
  }
  StubLlm odd([](const std::string&, int) { return StubReply{200, R"({"choices": []})"}; });
  try {
    HttpGenerator(fast_config(odd.endpoint(), 2)).generate("p");
    FAIL();
  } catch (const GeneratorError& e) {
    EXPECT_EQ(e.kind(), GeneratorErrorKind::BadResponse);
  }
}

TEST(Generator, ConnectionRefusedAndConfigChecks) {
  std::string endpoint;
  {
    StubLlm gone([](const std::string&, int) { return StubReply{}; });
    endpoint = gone.endpoint();
  }
  try {
    HttpGenerator(fast_config(endpoint, 1)).generate("p");
    FAIL();
  } catch (const GeneratorError& e) {
    EXPECT_EQ(e.kind(), GeneratorErrorKind::RetriesExhausted);
    EXPECT_EQ(e.attempts(), 2);
    EXPECT_EQ(e.last_cause(), GeneratorErrorKind::Connection);
  }
  EXPECT_THROW(HttpGenerator(fast_config("https://example.org/x", 0)), InvalidArgument);
  EXPECT_THROW(HttpGenerator(fast_config("nohost", 0)), InvalidArgument);
  auto cfg = fast_config(endpoint, -1);
  EXPECT_THROW(HttpGenerator{cfg}, InvalidArgument);
}

TEST(Generator, BearerTokenFromEnvironment) {
  StubLlm stub([](const std::string&, int) { return StubReply{200, completion_body("ok")}; });
  auto cfg = fast_config(stub.endpoint(), 0);
  cfg.api_key_env = "LIRANK_TEST_TOKEN_VAR";
  ::setenv("LIRANK_TEST_TOKEN_VAR", "s3cret", 1);
  HttpGenerator(cfg).generate("p");
  ::unsetenv("LIRANK_TEST_TOKEN_VAR");
  HttpGenerator(cfg).generate("p");
  EXPECT_EQ(stub.auth_headers(), (std::vector<std::string>{"Bearer s3cret", ""}));
}

// ---------------------------------------------------------------------------

class RagLoop : public ::testing::Test {
 protected:
  void SetUp() override {
    fx_ = make_mini_fixture();
    corpus_ = Corpus(fx_.docs);
    flat_ = std::make_unique<FlatIndex>(FlatIndex::build(fx_.doc_dense, SimilarityKind::Cosine));
    tokens_ = std::make_unique<TokenStore>(fx_.doc_tokens.front().second.dim());
    for (const auto& [id, m] : fx_.doc_tokens) tokens_->add(id, m);
    pipeline_ = std::make_unique<Pipeline>(PipelineConfig{}, *flat_, nullptr, tokens_.get());
    for (std::size_t i = 0; i < fx_.items.size(); ++i) {
      inputs_[fx_.items[i].id] = QueryInput{fx_.items[i].id, fx_.query_dense[i].second, fx_.query_tokens[i].second};
      key_by_question_[fx_.items[i].question] = fx_.items[i].answer_key;
    }
  }

  MiniFixture fx_;
  Corpus corpus_;
  std::unique_ptr<FlatIndex> flat_;
  std::unique_ptr<TokenStore> tokens_;
  std::unique_ptr<Pipeline> pipeline_;
  std::map<std::string, QueryInput> inputs_;
  std::map<std::string, std::string> key_by_question_;
};

TEST_F(RagLoop, StubAnsweringKeyIsPerfect) {
  StubLlm stub([&](const std::string& body, int) {
    return StubReply{200, completion_body(answer_json(key_by_question_.at(question_of(body))))};
  });
  HttpGenerator gen(fast_config(stub.endpoint(), 0));
  RagEvalOptions opts;
  opts.concurrency = 4;
  const auto r = run_rag_eval(fx_.items, inputs_, pipeline_.get(), corpus_, gen, opts);
  EXPECT_EQ(r.accuracy.accuracy(), 1.0);
  ASSERT_EQ(r.trace.size(), fx_.items.size());
  for (std::size_t i = 0; i < r.trace.size(); ++i) {
    EXPECT_EQ(r.trace[i].item_id, fx_.items[i].id);
    EXPECT_EQ(r.trace[i].retrieved_doc_ids.size(), 5u);
    EXPECT_EQ(r.trace[i].prompt_hash.size(), 16u);
  }
}

TEST_F(RagLoop, ConstantAnswerMatchesKeyShare) {
  std::size_t keyed_a = 0;
  for (const auto& it : fx_.items) keyed_a += it.answer_key == "A";
  ScriptedGenerator gen([](const std::string&) { return answer_json("A"); });
  const auto r = run_rag_eval(fx_.items, inputs_, pipeline_.get(), corpus_, gen);
  EXPECT_DOUBLE_EQ(r.accuracy.accuracy(), static_cast<double>(keyed_a) / fx_.items.size());
  EXPECT_DOUBLE_EQ(r.accuracy.accuracy(), 0.25);
}

TEST_F(RagLoop, OneMalformedItemIsIsolated) {
  const std::string bad_question = fx_.items[5].question;
  ScriptedGenerator gen([&](const std::string& prompt) {
    for (const auto& [q, key] : key_by_question_) {
      if (prompt.find("**Question:** " + q + "\n") != std::string::npos) {
        return q == bad_question ? std::string("I think it is B, no JSON") : answer_json(key);
      }
    }
    return std::string();
  });
  const auto r = run_rag_eval(fx_.items, inputs_, pipeline_.get(), corpus_, gen);
  EXPECT_EQ(r.accuracy.overall.correct, fx_.items.size() - 1);
  EXPECT_EQ(r.parse_failures, 1u);
  EXPECT_FALSE(r.trace[5].parsed_answer.has_value());
  EXPECT_NE(r.trace[5].error.find("no JSON"), std::string::npos);
}

TEST_F(RagLoop, SystemicGeneratorFailureAborts) {
  StubLlm stub([](const std::string&, int) { return StubReply{500, "down"}; });
  HttpGenerator gen(fast_config(stub.endpoint(), 0));
  EXPECT_THROW(run_rag_eval(fx_.items, inputs_, pipeline_.get(), corpus_, gen), GeneratorError);
}

TEST_F(RagLoop, PartialGeneratorFailureCountsWrong) {
  StubLlm stub([&](const std::string& body, int) {
    const auto q = question_of(body);
    if (q == fx_.items[0].question) return StubReply{500, "down"};
    return StubReply{200, completion_body(answer_json(key_by_question_.at(q)))};
  });
  HttpGenerator gen(fast_config(stub.endpoint(), 0));
  const auto r = run_rag_eval(fx_.items, inputs_, nullptr, corpus_, gen);
  EXPECT_EQ(r.generator_failures, 1u);
  EXPECT_EQ(r.accuracy.overall.correct, fx_.items.size() - 1);
  EXPECT_TRUE(r.trace[0].retrieved_doc_ids.empty());
}

TEST_F(RagLoop, PromptsAreDeterministicAndTraceIsWritten) {
  ScriptedGenerator gen([](const std::string&) { return answer_json("B"); });
  const auto a = run_rag_eval(fx_.items, inputs_, pipeline_.get(), corpus_, gen);
  RagEvalOptions opts;
  opts.concurrency = 3;
  const auto b = run_rag_eval(fx_.items, inputs_, pipeline_.get(), corpus_, gen, opts);
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    EXPECT_EQ(a.trace[i].prompt_hash, b.trace[i].prompt_hash);
    EXPECT_EQ(a.trace[i].retrieved_doc_ids, b.trace[i].retrieved_doc_ids);
  }
  TempDir dir;
  write_trace(a.trace, dir / "trace.jsonl");
  std::ifstream in(dir / "trace.jsonl");
  std::string line;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    const auto j = json::parse(line);
    EXPECT_TRUE(seen.insert(j.at("item_id").get<std::string>()).second);
    EXPECT_EQ(j.at("retrieved_doc_ids").size(), 5u);
    EXPECT_TRUE(j.contains("prompt_hash"));
    EXPECT_TRUE(j.contains("raw_response"));
    EXPECT_EQ(j.at("parsed_answer"), "B");
  }
  EXPECT_EQ(seen.size(), fx_.items.size());
}
