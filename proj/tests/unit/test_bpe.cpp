#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <random>

#include "trm/bpe/mem_tokens.hpp"
#include "trm/error.hpp"

using namespace trm::bpe;

namespace {

constexpr TokenId a = 0, b = 1, c = 2, d = 3;

std::vector<Sequence> repeat(std::initializer_list<std::pair<Sequence, int>> parts) {
  std::vector<Sequence> out;
  for (const auto& [s, n] : parts)
    for (int i = 0; i < n; ++i) out.push_back(s);
  return out;
}

// Skewed corpus of length-L sequences over L layers of K codes (global ids).
std::vector<Sequence> random_corpus(std::size_t n, std::size_t layers, std::size_t k,
                                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::geometric_distribution<int> geo(0.35);
  std::vector<Sequence> out;
  for (std::size_t i = 0; i < n; ++i) {
    Sequence s;
    for (std::size_t l = 0; l < layers; ++l)
      s.push_back(static_cast<TokenId>(l * k + std::min<int>(geo(rng), k - 1)));
    out.push_back(s);
  }
  return out;
}

// Independent expansion: walk the rule list directly.
Sequence oracle_expand(const std::vector<MergeRule>& rules, TokenId gen_vocab, TokenId id) {
  if (id < gen_vocab) return {id};
  for (const auto& r : rules)
    if (r.merged == id) {
      Sequence s = oracle_expand(rules, gen_vocab, r.left);
      Sequence t = oracle_expand(rules, gen_vocab, r.right);
      s.insert(s.end(), t.begin(), t.end());
      return s;
    }
  ADD_FAILURE() << "no rule for id " << id;
  return {};
}

bool contains_span(const Sequence& hay, const Sequence& needle) {
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

}  // namespace

TEST(Bpe, LengthOneSequencesGiveNoRules) {
  EXPECT_TRUE(bpe_train(repeat({{{a}, 5}, {{b}, 3}}), 4, 10).empty());
}

TEST(Bpe, FirstMergeIsMostFrequentPair) {
  auto corpus = repeat({{{a, b, c}, 3}, {{a, b, d}, 2}});
  auto t = bpe_train(corpus, 4, 10);
  ASSERT_FALSE(t.empty());
  EXPECT_EQ(t.rules()[0], (MergeRule{a, b, 4, 5}));
}

TEST(Bpe, BudgetAndMinFrequencyRespected) {
  auto corpus = random_corpus(300, 4, 8, 3);
  EXPECT_LE(bpe_train(corpus, 32, 1).size(), 1u);
  EXPECT_TRUE(bpe_train(corpus, 32, 0).empty());
  for (std::uint64_t minf : {2u, 5u, 20u}) {
    auto t = bpe_train(corpus, 32, 1000, minf);
    for (const auto& r : t.rules()) EXPECT_GE(r.frequency, minf);
  }
}

TEST(Bpe, FirstMergeMatchesBruteForcePairCount) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto corpus = random_corpus(200, 4, 6, seed);
    std::map<std::pair<TokenId, TokenId>, std::uint64_t> counts;
    for (const auto& s : corpus)
      for (std::size_t i = 0; i + 1 < s.size(); ++i) counts[{s[i], s[i + 1]}]++;
    std::pair<TokenId, TokenId> best{};
    std::uint64_t bf = 0;
    for (const auto& [p, f] : counts)
      if (f > bf || (f == bf && p < best)) best = p, bf = f;
    auto t = bpe_train(corpus, 24, 1);
    ASSERT_EQ(t.size(), 1u);
    EXPECT_EQ(t.rules()[0].left, best.first);
    EXPECT_EQ(t.rules()[0].right, best.second);
    EXPECT_EQ(t.rules()[0].frequency, bf);
  }
}

TEST(Bpe, TieBreaksToSmallestPair) {
  auto t = bpe_train(repeat({{{c, d}, 2}, {{a, b}, 2}}), 4, 1);
  EXPECT_EQ(t.rules()[0].left, a);
  EXPECT_EQ(t.rules()[0].right, b);
}

TEST(Bpe, OverlapsCountedReplacementNonOverlapping) {
  auto t = bpe_train(repeat({{{a, a, a}, 1}}), 4, 1, 1);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t.rules()[0].frequency, 2u);
  EXPECT_EQ(merge_sequence(t, {a, a, a}), (Sequence{4, a}));
}

TEST(Bpe, EncodeSmallExamples) {
  MergeTable empty(4, 10, 2);
  EXPECT_TRUE(bpe_encode(empty, Sequence{a, b, c}).empty());
  MergeTable one(4, 10, 2);
  one.add_rule({a, b, 4, 3});
  EXPECT_EQ(bpe_encode(one, Sequence{a, b, c}), (std::vector<TokenId>{4}));
  EXPECT_THROW(bpe_encode(one, Sequence{a, 9}), trm::InputError);
}

TEST(Bpe, EveryMemTokenExpandsToItsSpan) {
  auto train = random_corpus(2000, 4, 8, 11);
  auto table = bpe_train(train, 32, 200, 2);
  ASSERT_GT(table.size(), 10u);
  auto probe = random_corpus(1000, 4, 8, 12);
  for (const auto& s : probe) {
    const Sequence merged = merge_sequence(table, s);
    // Concatenated expansions of the merged sequence rebuild the input.
    Sequence rebuilt;
    for (TokenId t : merged) {
      auto e = oracle_expand(table.rules(), 32, t);
      EXPECT_EQ(table.expand(t), e);
      rebuilt.insert(rebuilt.end(), e.begin(), e.end());
    }
    ASSERT_EQ(rebuilt, s);
    for (TokenId m : bpe_encode(table, s)) {
      EXPECT_TRUE(table.is_mem(m));
      EXPECT_TRUE(contains_span(s, oracle_expand(table.rules(), 32, m)));
    }
    EXPECT_EQ(merge_sequence(table, merged), merged);
  }
}

TEST(Bpe, MergeTableFileRoundTrip) {
  auto table = bpe_train(random_corpus(500, 3, 5, 2), 15, 30);
  auto path = std::filesystem::temp_directory_path() / "trm_test_merges.txt";
  table.save(path);
  EXPECT_EQ(MergeTable::load(path), table);
  std::filesystem::remove(path);
}

TEST(Ngram, HandExamples) {
  EXPECT_EQ(ngram_tokens(repeat({{{a, b}, 4}}), 3).size(), 0u);
  auto v = ngram_tokens(repeat({{{a, b, c}, 3}}), 2);
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v.frequency.at({a, b}), 3u);
  EXPECT_EQ(v.frequency.at({b, c}), 3u);
  EXPECT_EQ(v.id.at({a, b}), 0u);
  EXPECT_EQ(v.id.at({b, c}), 1u);
  auto same = ngram_tokens(repeat({{{a, a, a}, 1}}), 2);
  ASSERT_EQ(same.size(), 1u);
  EXPECT_EQ(same.frequency.at({a, a}), 2u);
}

TEST(Ngram, PrefixHandExamples) {
  auto v = prefix_ngram_tokens(repeat({{{a, b, c}, 2}}), 3);
  EXPECT_EQ(v.size(), 3u);
  EXPECT_EQ(v.frequency.at({a}), 2u);
  EXPECT_EQ(v.frequency.at({a, b}), 2u);
  EXPECT_EQ(v.frequency.at({a, b, c}), 2u);
  auto uni = prefix_ngram_tokens(repeat({{{a, b}, 1}, {{c, d}, 1}}), 1);
  EXPECT_EQ(uni.size(), 2u);
  EXPECT_TRUE(uni.frequency.count({a}) && uni.frequency.count({c}));
  auto corpus = random_corpus(50, 4, 3, 1);
  auto full = prefix_ngram_tokens(corpus, 4);
  for (const auto& s : corpus) EXPECT_EQ(prefix_encode(full, s, 4).size(), 4u);
}
