#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

// BPE over gen-token sequences. Sequences hold global gen-token ids
// (layer offset + code), so equal codes on different layers stay distinct.
// Merged ids are allocated as gen_vocab + rule index.

namespace trm::bpe {

using TokenId = std::uint32_t;
using Sequence = std::vector<TokenId>;

struct MergeRule {
  TokenId left = 0;
  TokenId right = 0;
  TokenId merged = 0;
  std::uint64_t frequency = 0;

  friend bool operator==(const MergeRule&, const MergeRule&) = default;
};

class MergeTable {
 public:
  MergeTable() = default;
  MergeTable(TokenId gen_vocab, std::size_t budget, std::uint64_t min_frequency)
      : gen_vocab_(gen_vocab), budget_(budget), min_frequency_(min_frequency) {}

  TokenId gen_vocab() const { return gen_vocab_; }
  std::size_t budget() const { return budget_; }
  std::uint64_t min_frequency() const { return min_frequency_; }
  const std::vector<MergeRule>& rules() const { return rules_; }
  std::size_t size() const { return rules_.size(); }
  bool empty() const { return rules_.empty(); }

  bool is_mem(TokenId id) const { return id >= gen_vocab_ && id < gen_vocab_ + rules_.size(); }

  /// Appends a rule; `merged` must be the next free id.
  void add_rule(MergeRule rule);

  /// Gen-token span a token stands for (itself for a gen-token).
  Sequence expand(TokenId id) const;

  /// Header "# gen_vocab=V budget=B min_frequency=m", then one
  /// "left right merged frequency" line per rule in training order.
  void save(const std::filesystem::path& path) const;
  static MergeTable load(const std::filesystem::path& path);

  friend bool operator==(const MergeTable&, const MergeTable&) = default;

 private:
  TokenId gen_vocab_ = 0;
  std::size_t budget_ = 0;
  std::uint64_t min_frequency_ = 2;
  std::vector<MergeRule> rules_;
};

/// Merges the most frequent adjacent pair (overlapping occurrences counted;
/// ties to the smallest (left, right)) until `budget` rules exist or the top
/// frequency drops below `min_frequency`. `counts` weights each sequence
/// (all ones when empty).
MergeTable bpe_train(const std::vector<Sequence>& corpus, const std::vector<std::uint64_t>& counts,
                     TokenId gen_vocab, std::size_t budget, std::uint64_t min_frequency = 2);
MergeTable bpe_train(const std::vector<Sequence>& corpus, TokenId gen_vocab,
                     std::size_t budget, std::uint64_t min_frequency = 2);

/// Applies the rules in training order, each left to right without overlap,
/// until nothing changes.
Sequence merge_sequence(const MergeTable& table, Sequence seq);

/// The mem-tokens of a gen-token sequence. Throws InputError on a gen id
/// outside the table's vocabulary.
std::vector<TokenId> bpe_encode(const MergeTable& table, std::span<const TokenId> seq);

/// Contiguous-span vocabulary with frequencies; ids are assigned in
/// lexicographic order of the span, starting at `first_id`.
struct NgramVocab {
  std::map<Sequence, std::uint64_t> frequency;
  std::map<Sequence, TokenId> id;

  std::size_t size() const { return frequency.size(); }
};

/// Contiguous n-grams (overlaps counted) with frequency >= min_frequency.
NgramVocab ngram_tokens(const std::vector<Sequence>& corpus, std::size_t n,
                        std::uint64_t min_frequency = 1, TokenId first_id = 0);

/// Prefixes [s1], [s1,s2], ... up to max_len per sequence, frequency-thresholded.
NgramVocab prefix_ngram_tokens(const std::vector<Sequence>& corpus, std::size_t max_len,
                               std::uint64_t min_frequency = 1, TokenId first_id = 0);

/// Ids of the vocabulary entries occurring in `seq` (n-grams or prefixes).
std::vector<TokenId> ngram_encode(const NgramVocab& vocab, std::span<const TokenId> seq,
                                  std::size_t n);
std::vector<TokenId> prefix_encode(const NgramVocab& vocab, std::span<const TokenId> seq,
                                   std::size_t max_len);

}  // namespace trm::bpe
