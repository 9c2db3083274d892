#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "errlens/ngram_scorer.hpp"
#include "test_support.hpp"

using namespace errlens;

TEST(OracleModelTest, HandComputedUnigram) {
  // "a b a": counts a=2, b=1; vocab {a, b, <unk>}; beta 1 => (2+1)/(3+3).
  const OracleModel m("a b a", 1.0, 0.0);
  EXPECT_NEAR(oracle_logprob(m, std::nullopt, Token{"a"}), std::log(0.5), 1e-15);
  EXPECT_NEAR(oracle_logprob(m, Token{"b"}, Token{"a"}), std::log(0.5), 1e-15);
  EXPECT_NEAR(oracle_logprob(m, std::nullopt, Token{"b"}), std::log(2.0 / 6.0), 1e-15);
}

TEST(OracleModelTest, UnknownTokenGetsSmoothingFloor) {
  const OracleModel m("a b a", 1.0, 0.0);
  const double floor = std::log(1.0 / 6.0);
  EXPECT_NEAR(oracle_logprob(m, std::nullopt, Token{"zzz"}), floor, 1e-15);
  for (const auto& w : m.vocab())
    if (w != OracleModel::kUnk) {
      EXPECT_GT(oracle_logprob(m, std::nullopt, Token{w}), floor);
    }
}

TEST(OracleModelTest, RejectsBadParameters) {
  EXPECT_THROW(OracleModel("a", 0.0, 0.3), ArgumentError);
  EXPECT_THROW(OracleModel("a", 0.1, 1.5), ArgumentError);
}

TEST(OracleModelTest, DistributionsNormalizeForAnyContext) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto words = support::random_words(rng, 3 + trial % 12);
    const OracleModel m(text::join(words));
    std::vector<std::optional<Token>> contexts = {std::nullopt, Token{"never-seen"}};
    for (const auto& w : m.vocab()) contexts.push_back(Token{w});
    for (const auto& prev : contexts) {
      double sum = 0.0;
      for (const auto& w : m.vocab()) {
        const double p = std::exp(oracle_logprob(m, prev, Token{w}));
        EXPECT_GT(p, 0.0);
        EXPECT_LE(p, 1.0);
        sum += p;
      }
      EXPECT_NEAR(sum, 1.0, 1e-9);
    }
  }
}

TEST(OracleModelTest, ConditionTokensOutscoreOthersWithoutInterpolation) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const OracleModel m(text::join(support::random_words(rng, 6)), 0.1, 0.0);
    const double oov = oracle_logprob(m, std::nullopt, Token{"outsider"});
    for (const auto& w : m.vocab())
      if (w != OracleModel::kUnk) {
        EXPECT_GT(oracle_logprob(m, Token{w}, Token{w}), oov);
      }
  }
}

TEST(OracleTopkTest, SingleBest) {
  const OracleModel m("a b a", 1.0, 0.0);
  const auto top = oracle_topk(m, std::nullopt, 1);
  ASSERT_EQ(top.size(), 1u);
  EXPECT_EQ(top[0].token.surface, "a");
  EXPECT_NEAR(top[0].logprob, std::log(0.5), 1e-15);
}

TEST(OracleTopkTest, FullVocabularySumsToOne) {
  const OracleModel m("the cat sat on the mat");
  for (const auto& prev : {std::optional<Token>{}, std::optional<Token>{Token{"the"}}}) {
    const auto all = oracle_topk(m, prev, static_cast<int>(m.vocab().size()));
    ASSERT_EQ(all.size(), m.vocab().size());
    double sum = 0.0;
    for (const auto& c : all) sum += std::exp(c.logprob);
    EXPECT_NEAR(sum, 1.0, 1e-9);
    EXPECT_EQ(oracle_topk(m, prev, 1000).size(), m.vocab().size());
  }
}

TEST(OracleTopkTest, SortedWithLexicographicTieBreakAndPrefixStable) {
  const OracleModel m("d c b a e");
  for (int k = 1; k < static_cast<int>(m.vocab().size()); ++k) {
    const auto a = oracle_topk(m, Token{"c"}, k);
    const auto b = oracle_topk(m, Token{"c"}, k + 1);
    ASSERT_EQ(a.size(), static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
    for (std::size_t i = 1; i < b.size(); ++i) {
      EXPECT_GE(b[i - 1].logprob, b[i].logprob);
      if (b[i - 1].logprob == b[i].logprob) {
        EXPECT_LT(b[i - 1].token.surface, b[i].token.surface);
      }
    }
  }
  // Unigram-only ties among a..e resolve alphabetically.
  const auto uni = oracle_topk(m, std::nullopt, 5);
  EXPECT_EQ(uni[0].token.surface, "a");
  EXPECT_EQ(uni[4].token.surface, "e");
  EXPECT_THROW(oracle_topk(m, std::nullopt, 0), ArgumentError);
}

TEST(NgramBackendTest, DeterministicAndNeverOffersUnk) {
  NgramBackend b;
  const ScoreRequest r{"a b c d", "a b x d", {}};
  EXPECT_EQ(b.score(r), b.score(r));
  const auto cands = b.topk("a b c d", std::vector<Token>{Token{"a"}}, 100);
  EXPECT_EQ(cands.size(), 4u);
  for (const auto& c : cands) EXPECT_NE(c.token.surface, OracleModel::kUnk);
  EXPECT_EQ(cands.front().token.surface, "b");
}

TEST(NgramBackendTest, DecoderPrefixConditionsFirstToken) {
  NgramBackend b;
  const auto plain = b.score({"a b c", "b c", {}});
  const auto prefixed = b.score({"a b c", "b c", PromptSet{{}, {"a"}}});
  EXPECT_GT(prefixed.logprobs()[0], plain.logprobs()[0]);
  EXPECT_EQ(prefixed.logprobs()[1], plain.logprobs()[1]);
  EXPECT_EQ(prefixed.size(), 2u);
}

TEST(NgramBackendTest, DetokenizeRoundTrips) {
  NgramBackend b;
  const auto s = b.score({"x", "Hello , world .", {}});
  EXPECT_EQ(text::words(b.detokenize(s.tokens())), surfaces(s.tokens()));
  EXPECT_EQ(surfaces(s.tokens()), (std::vector<std::string>{"Hello", ",", "world", "."}));
}
