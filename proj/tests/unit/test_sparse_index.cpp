#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "lirank/bm25.hpp"
#include "lirank/errors.hpp"
#include "lirank/io.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

using namespace lirank;
using namespace lirank::testing;

namespace {

using Terms = std::vector<std::string>;

Bm25Oracle oracle_for(const std::vector<Document>& docs) {
  Bm25Oracle o;
  for (const auto& d : docs) o.docs.push_back(tokenize(d.title + " " + d.text));
  return o;
}

std::vector<std::string> ids_of(const std::vector<Document>& docs) {
  std::vector<std::string> ids;
  for (const auto& d : docs) ids.push_back(d.id);
  return ids;
}

}  // namespace

TEST(Tokenize, Examples) {
  EXPECT_EQ(tokenize("Acute Myocardial-Infarction"), (Terms{"acute", "myocardial", "infarction"}));
  EXPECT_EQ(tokenize(""), Terms{});
  EXPECT_EQ(tokenize("BM25 BM25"), (Terms{"bm25", "bm25"}));
}

TEST(Tokenize, NonAsciiLettersAreTermCharacters) {
  EXPECT_EQ(tokenize("Ménière's—disease"), (Terms{"ménière", "s", "disease"}));
  EXPECT_EQ(tokenize("  ;;  "), Terms{});
}

TEST(Build, DocLengthsAndAverage) {
  auto one = SparseIndex::build({{"d", "", "x y"}});
  EXPECT_EQ(one.doc_lengths(), (std::vector<std::uint32_t>{2}));
  EXPECT_DOUBLE_EQ(one.avg_doc_length(), 2.0);
  auto two = SparseIndex::build({{"a", "", "x y"}, {"b", "", "p q r s"}});
  EXPECT_DOUBLE_EQ(two.avg_doc_length(), 3.0);
}

TEST(Build, TitleIsIndexed) {
  auto idx = SparseIndex::build({{"a", "Heart", "failure"}});
  EXPECT_EQ(idx.document_frequency("heart"), 1u);
  EXPECT_EQ(idx.doc_lengths()[0], 2u);
}

TEST(Build, ParameterAndCorpusChecks) {
  EXPECT_THROW(SparseIndex::build({}), InvalidArgument);
  EXPECT_THROW(SparseIndex::build({{"a", "", "x"}}, Bm25Params{0.0, 0.75}), InvalidArgument);
  EXPECT_THROW(SparseIndex::build({{"a", "", "x"}}, Bm25Params{1.2, 1.5}), InvalidArgument);
}

TEST(Score, SingleDocWorkedExample) {
  auto idx = SparseIndex::build({{"d", "", "a"}});
  const Terms q{"a"};
  // IDF = ln(1 + 0.5/1.5) = ln(4/3); tf part = 2.2 / 2.2 = 1
  EXPECT_NEAR(idx.score(q, 0), std::log(4.0 / 3.0), 1e-12);
  EXPECT_NEAR(idx.score(q, 0), 0.287682, 1e-6);
}

TEST(Score, RepeatedQueryTermCountsOnce) {
  auto idx = SparseIndex::build({{"d", "", "a b"}, {"e", "", "a c c"}});
  EXPECT_DOUBLE_EQ(idx.score(Terms{"a", "a"}, 1), idx.score(Terms{"a"}, 1));
}

TEST(Score, AbsentTermContributesZero) {
  auto idx = SparseIndex::build({{"d", "", "a b"}});
  EXPECT_DOUBLE_EQ(idx.score(Terms{"a", "zzz"}, 0), idx.score(Terms{"a"}, 0));
  EXPECT_EQ(idx.score(Terms{"zzz"}, 0), 0.0);
  EXPECT_THROW(idx.score(Terms{"a"}, 1), InvalidArgument);
}

TEST(Score, ToyCorpusMatchesOracle) {
  const auto docs = io::read_corpus(fixtures_dir() / "bm25_toy.jsonl");
  ASSERT_EQ(docs.size(), 5u);
  const auto idx = SparseIndex::build(docs);
  const auto oracle = oracle_for(docs);
  const std::vector<Terms> queries = {{"aspirin"},  {"platelet", "function"}, {"bleeding", "risk"},
                                      {"statins"},  {"aspirin", "platelet", "bleeding"}, {"unknown"},
                                      {"and", "and"}};
  for (const auto& q : queries) {
    for (std::size_t d = 0; d < docs.size(); ++d) {
      EXPECT_NEAR(idx.score(q, d), static_cast<double>(oracle.score(q, d)), 1e-6) << "doc " << d << " q " << q[0];
    }
  }
}

TEST(Score, ToyCorpusHandArithmetic) {
  // t2 "aspirin aspirin and bleeding risk in elderly patients": len 8; avgdl = (5+8+4+10+5)/5 = 6.4;
  // df(aspirin) = 2 of N = 5.
  const auto docs = io::read_corpus(fixtures_dir() / "bm25_toy.jsonl");
  const auto idx = SparseIndex::build(docs);
  EXPECT_DOUBLE_EQ(idx.avg_doc_length(), 6.4);
  const double idf = std::log(1.0 + (5 - 2 + 0.5) / (2 + 0.5));
  const double tf_part = 2 * 2.2 / (2 + 1.2 * (1 - 0.75 + 0.75 * 8 / 6.4));
  EXPECT_NEAR(idx.score(Terms{"aspirin"}, 1), idf * tf_part, 1e-12);
}

TEST(Search, FullDepthEqualsBruteForce) {
  const auto docs = io::read_corpus(fixtures_dir() / "mini" / "corpus.jsonl");
  const auto idx = SparseIndex::build(docs);
  const auto oracle = oracle_for(docs);
  const auto ids = ids_of(docs);
  for (const std::string text : {"aspirin platelet", "insulin glucose metformin", "stroke", "renal renal hepatic"}) {
    const auto run = idx.search(text, docs.size(), "q");
    const auto expected = oracle.ranking(tokenize(text), ids);
    ASSERT_EQ(run.candidates.size(), expected.size()) << text;
    for (std::size_t i = 0; i < expected.size(); ++i) {
      EXPECT_EQ(run.candidates[i].doc_id, ids[expected[i]]) << text << " rank " << i;
    }
    validate_run(run);
  }
}

TEST(Search, NoIndexedTermsAndOversizedK) {
  const auto idx = SparseIndex::build({{"a", "", "x y"}, {"b", "", "y z"}, {"c", "", "w"}});
  EXPECT_TRUE(idx.search("qqq", 5).candidates.empty());
  const auto run = idx.search("y", 10);
  ASSERT_EQ(run.candidates.size(), 2u);
  // Equal scores: doc_id ascending.
  EXPECT_EQ(run.candidates[0].doc_id, "a");
  EXPECT_EQ(run.candidates[1].doc_id, "b");
}

TEST(Search, ThreeDocToyOrder) {
  // Hand check: "cancer" df=2 of 3; c1 has tf 2 (len 3), c2 tf 1 (len 2).
  const std::vector<Document> docs = {{"c1", "", "cancer cancer risk"}, {"c2", "", "cancer drug"}, {"c3", "", "drug"}};
  const auto idx = SparseIndex::build(docs);
  const auto run = idx.search("cancer", 3);
  ASSERT_EQ(run.candidates.size(), 2u);
  const double idf = std::log(1.0 + 1.5 / 2.5);
  const double avg = 2.0;
  const double s1 = idf * 2 * 2.2 / (2 + 1.2 * (0.25 + 0.75 * 3 / avg));
  const double s2 = idf * 1 * 2.2 / (1 + 1.2 * (0.25 + 0.75 * 2 / avg));
  EXPECT_EQ(run.candidates[0].doc_id, s1 > s2 ? "c1" : "c2");
  EXPECT_NEAR(run.candidates[0].score, std::max(s1, s2), 1e-12);
  EXPECT_NEAR(run.candidates[1].score, std::min(s1, s2), 1e-12);
}

TEST(Search, UnrelatedDocOnlyShiftsNAndAvgdl) {
  std::vector<Document> docs = {{"a", "", "heart failure therapy"}, {"b", "", "heart attack"}};
  const auto before = SparseIndex::build(docs);
  docs.push_back({"z", "", "unrelated words only here"});
  const auto after = SparseIndex::build(docs);
  // The oracle with the new N and avgdl reproduces the changed scores exactly.
  const auto oracle = oracle_for(docs);
  const Terms q{"heart", "therapy"};
  for (std::size_t d = 0; d < 2; ++d) {
    EXPECT_NEAR(after.score(q, d), static_cast<double>(oracle.score(q, d)), 1e-12);
    EXPECT_NE(after.score(q, d), before.score(q, d));
  }
  EXPECT_EQ(after.score(q, 2), 0.0);
}

TEST(Persistence, RoundTrip) {
  const auto idx = SparseIndex::build(io::read_corpus(fixtures_dir() / "mini" / "corpus.jsonl"));
  std::stringstream buf;
  idx.encode(buf);
  const std::string bytes = buf.str();
  const auto back = SparseIndex::decode(buf);
  EXPECT_EQ(back, idx);
  std::stringstream again;
  back.encode(again);
  EXPECT_EQ(again.str(), bytes);

  std::string bad = bytes;
  bad[0] = 'Z';
  std::istringstream in(bad);
  try {
    SparseIndex::decode(in);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatErrorKind::BadMagic);
  }
}
