#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "bm25_oracle.hpp"
#include "desk_corpus.hpp"
#include "ragctl/retriever.hpp"

namespace {

using ragctl::build_index;
using ragctl::InvertedIndex;
using ragctl::Paragraph;
using ragctl::retrieve_topk;
using ragctl::score_bm25;
using ragctl::tokenize;

std::vector<Paragraph> make_paragraphs(const std::vector<std::string>& texts) {
  std::vector<Paragraph> out;
  for (std::size_t i = 0; i < texts.size(); ++i)
    out.push_back(Paragraph{static_cast<int>(i), texts[i], ""});
  return out;
}

TEST(Tokenize, FixedVectors) {
  EXPECT_EQ(tokenize("Hello, World!"),
            (std::vector<std::string>{"hello", "world"}));
  EXPECT_EQ(tokenize(""), (std::vector<std::string>{}));
  EXPECT_EQ(tokenize("k=5 top-k"),
            (std::vector<std::string>{"k", "5", "top", "k"}));
  EXPECT_EQ(tokenize("a1b2"), (std::vector<std::string>{"a1b2"}));
  EXPECT_EQ(tokenize("--- ---"), (std::vector<std::string>{}));
}

TEST(BuildIndex, TinyCorpusCounts) {
  const InvertedIndex index = build_index(make_paragraphs({"a b a"}));
  EXPECT_EQ(index.num_docs, 1);
  ASSERT_EQ(index.doc_lengths, (std::vector<int>{3}));
  EXPECT_DOUBLE_EQ(index.avg_doc_length, 3.0);
  ASSERT_EQ(index.postings.at("a").size(), 1u);
  EXPECT_EQ(index.postings.at("a")[0].tf, 2);
  EXPECT_EQ(index.postings.at("b")[0].tf, 1);
  EXPECT_EQ(index.vocabulary.at("a"), 1);
}

TEST(BuildIndex, IdenticalParagraphsShareDf) {
  const InvertedIndex index =
      build_index(make_paragraphs({"x y z", "x y z"}));
  for (const auto& [term, df] : index.vocabulary) EXPECT_EQ(df, 2) << term;
}

TEST(BuildIndex, EmptyCorpusRejected) {
  EXPECT_THROW(build_index({}), ragctl::validation_error);
}

TEST(ScoreBm25, IdfWorkedExample) {
  // N=2, df=1, tf=1, doc length equal to avgdl: the tf factor cancels
  // to 1 and the score reduces to idf = ln(1 + 1.5/1.5) = ln 2.
  const InvertedIndex index = build_index(make_paragraphs({"x y", "z w"}));
  EXPECT_NEAR(score_bm25(index, {"x"}, 0), std::log(2.0), 1e-12);
  EXPECT_NEAR(score_bm25(index, {"x"}, 0), 0.693147, 1e-6);
}

TEST(ScoreBm25, AbsentTermScoresZero) {
  const InvertedIndex index = build_index(make_paragraphs({"x y", "z w"}));
  EXPECT_DOUBLE_EQ(score_bm25(index, {"q"}, 0), 0.0);
  EXPECT_DOUBLE_EQ(score_bm25(index, {"x"}, 1), 0.0);
}

TEST(ScoreBm25, UnknownDocIdIsRangeError) {
  const InvertedIndex index = build_index(make_paragraphs({"x"}));
  EXPECT_THROW(score_bm25(index, {"x"}, 5), std::out_of_range);
  EXPECT_THROW(score_bm25(index, {"x"}, -1), std::out_of_range);
}

TEST(RetrieveTopk, RefusalDepthZeroIsEmpty) {
  const InvertedIndex index = build_index(make_paragraphs({"x y"}));
  const auto result = retrieve_topk(index, "x", 0);
  EXPECT_TRUE(result.doc_ids.empty());
  EXPECT_TRUE(result.scores.empty());
}

TEST(RetrieveTopk, OnlyPositiveScorersReturned) {
  const InvertedIndex index = build_index(make_paragraphs({"x", "y"}));
  const auto result = retrieve_topk(index, "y", 2);
  ASSERT_EQ(result.doc_ids, (std::vector<int>{1}));
  const auto none = retrieve_topk(index, "zz", 2);
  EXPECT_TRUE(none.doc_ids.empty());
}

TEST(RetrieveTopk, TiesBreakByAscendingDocId) {
  const InvertedIndex index =
      build_index(make_paragraphs({"x y", "x y", "x y"}));
  const auto result = retrieve_topk(index, "x", 3);
  EXPECT_EQ(result.doc_ids, (std::vector<int>{0, 1, 2}));
  EXPECT_DOUBLE_EQ(result.scores[0], result.scores[2]);
}

TEST(RetrieveTopk, FullTextQueryRanksItsParagraphFirst) {
  const std::vector<std::string> texts = {
      "alpha beta gamma delta", "beta gamma epsilon", "zeta eta theta"};
  const InvertedIndex index = build_index(make_paragraphs(texts));
  const auto result = retrieve_topk(index, texts[0], 1);
  ASSERT_EQ(result.doc_ids.size(), 1u);
  EXPECT_EQ(result.doc_ids[0], 0);
}

// Randomized corpora against the naive reference scorer. The acceptance
// suite runs the full 50-corpus version; this is the fast variant.
TEST(RetrieveTopk, MatchesBruteForceOracle) {
  const std::vector<std::string> vocab = {"t0", "t1", "t2", "t3",
                                          "t4", "t5", "t6", "t7"};
  std::mt19937_64 rng(991);
  for (int trial = 0; trial < 10; ++trial) {
    const int n_docs = 2 + static_cast<int>(ragctl::bounded_uniform(rng, 9));
    std::vector<std::string> texts;
    std::vector<std::vector<std::string>> docs;
    for (int d = 0; d < n_docs; ++d) {
      const int len = 1 + static_cast<int>(ragctl::bounded_uniform(rng, 8));
      std::vector<std::string> tokens;
      for (int t = 0; t < len; ++t)
        tokens.push_back(vocab[ragctl::bounded_uniform(rng, vocab.size())]);
      docs.push_back(tokens);
      std::string text;
      for (const auto& tok : tokens) text += (text.empty() ? "" : " ") + tok;
      texts.push_back(text);
    }
    const InvertedIndex index = build_index(make_paragraphs(texts));

    const int qlen = 1 + static_cast<int>(ragctl::bounded_uniform(rng, 4));
    std::vector<std::string> query;
    std::string query_text;
    for (int t = 0; t < qlen; ++t) {
      query.push_back(vocab[ragctl::bounded_uniform(rng, vocab.size())]);
      query_text += (query_text.empty() ? "" : " ") + query.back();
    }

    const auto expected_scores = bm25_oracle::score_all(docs, query);
    for (int d = 0; d < n_docs; ++d)
      EXPECT_NEAR(score_bm25(index, query, d),
                  expected_scores[static_cast<std::size_t>(d)], 1e-9)
          << "trial " << trial << " doc " << d;

    for (int k : {1, 3, n_docs}) {
      const auto got = retrieve_topk(index, query_text, k);
      const auto want = bm25_oracle::topk(expected_scores, k);
      EXPECT_EQ(got.doc_ids, want) << "trial " << trial << " k=" << k;
    }
  }
}

TEST(RetrieveTopk, PrefixPropertyOnDeskCorpus) {
  const ragctl::Corpus corpus = desk::make_corpus(desk::Spec{});
  const InvertedIndex index = build_index(corpus.paragraphs);
  for (std::size_t i = 0; i < corpus.questions.size(); i += 37) {
    const auto& q = corpus.questions[i].question;
    const auto top2 = retrieve_topk(index, q, 2);
    const auto top5 = retrieve_topk(index, q, 5);
    const auto top10 = retrieve_topk(index, q, 10);
    ASSERT_LE(top2.doc_ids.size(), top5.doc_ids.size());
    for (std::size_t j = 0; j < top2.doc_ids.size(); ++j)
      EXPECT_EQ(top2.doc_ids[j], top5.doc_ids[j]) << q;
    for (std::size_t j = 0; j < top5.doc_ids.size(); ++j)
      EXPECT_EQ(top5.doc_ids[j], top10.doc_ids[j]) << q;
  }
}

TEST(RetrieveTopk, RetrievalPrefixHelperEqualsDirectQuery) {
  const ragctl::Corpus corpus = desk::make_corpus(desk::Spec{});
  const InvertedIndex index = build_index(corpus.paragraphs);
  const auto& q = corpus.questions[5].question;
  const auto probe = retrieve_topk(index, q, 10);
  for (int k : {0, 2, 5, 10}) {
    const auto direct = retrieve_topk(index, q, k);
    const auto sliced = ragctl::retrieval_prefix(probe, k);
    EXPECT_EQ(direct.doc_ids, sliced.doc_ids);
    EXPECT_EQ(direct.scores, sliced.scores);
  }
}

// A document sharing no query terms can still shift BM25 scores through
// avgdl and idf, but it can never itself be retrieved and never changes
// which other documents are retrievable.
TEST(RetrieveTopk, UnrelatedDocumentNeverEntersResults) {
  const std::vector<std::string> base = {"x y z", "x w", "y z w"};
  const std::string query = "x y";
  const InvertedIndex before = build_index(make_paragraphs(base));
  const auto before_all = retrieve_topk(before, query, 10);

  std::vector<std::string> extended = base;
  extended.push_back("unrelated filler terms only");
  const InvertedIndex after = build_index(make_paragraphs(extended));
  const auto after_all = retrieve_topk(after, query, 10);

  std::vector<int> before_ids = before_all.doc_ids;
  std::vector<int> after_ids = after_all.doc_ids;
  std::sort(before_ids.begin(), before_ids.end());
  std::sort(after_ids.begin(), after_ids.end());
  EXPECT_EQ(before_ids, after_ids);
  for (int id : after_all.doc_ids) EXPECT_NE(id, 3);
}

TEST(IndexArtifact, RoundTripPreservesRetrieval) {
  const ragctl::Corpus corpus = desk::make_corpus(desk::Spec{});
  const InvertedIndex index = build_index(corpus.paragraphs);
  const auto j = ragctl::index_to_json(index, 0xabcdefull);
  const ragctl::IndexArtifact art = ragctl::index_from_json(j);
  EXPECT_EQ(art.corpus_hash, 0xabcdefull);
  for (std::size_t i = 0; i < corpus.questions.size(); i += 53) {
    const auto& q = corpus.questions[i].question;
    const auto a = retrieve_topk(index, q, 10);
    const auto b = retrieve_topk(art.index, q, 10);
    EXPECT_EQ(a.doc_ids, b.doc_ids);
    EXPECT_EQ(a.scores, b.scores);
  }
}

TEST(IndexArtifact, UnsupportedVersionRejected) {
  const InvertedIndex index = build_index(make_paragraphs({"x"}));
  auto j = ragctl::index_to_json(index, 1);
  j["schema_version"] = 99;
  EXPECT_THROW(ragctl::index_from_json(j), ragctl::version_error);
}

}  // namespace
