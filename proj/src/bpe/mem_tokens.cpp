#include "trm/bpe/mem_tokens.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>

#include "trm/error.hpp"

namespace trm::bpe {

void MergeTable::add_rule(MergeRule rule) {
  if (rule.merged != gen_vocab_ + rules_.size())
    throw InputError("merge rule id " + std::to_string(rule.merged) + " is not sequential");
  if (rule.left >= rule.merged || rule.right >= rule.merged)
    throw InputError("merge rule refers to an id that does not exist yet");
  rules_.push_back(rule);
}

Sequence MergeTable::expand(TokenId id) const {
  if (id < gen_vocab_) return {id};
  if (!is_mem(id)) throw InputError("unknown token id " + std::to_string(id));
  const auto& r = rules_[id - gen_vocab_];
  Sequence out = expand(r.left);
  const Sequence tail = expand(r.right);
  out.insert(out.end(), tail.begin(), tail.end());
  return out;
}

void MergeTable::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write merge table: " + path.string());
  out << "# gen_vocab=" << gen_vocab_ << " budget=" << budget_
      << " min_frequency=" << min_frequency_ << "\n";
  for (const auto& r : rules_)
    out << r.left << ' ' << r.right << ' ' << r.merged << ' ' << r.frequency << '\n';
}

MergeTable MergeTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open merge table: " + path.string());
  std::string header;
  std::getline(in, header);
  unsigned long long v = 0, b = 0, m = 0;
  if (std::sscanf(header.c_str(), "# gen_vocab=%llu budget=%llu min_frequency=%llu", &v, &b,
                  &m) != 3)
    throw InputError("bad merge table header in " + path.string());
  MergeTable t(static_cast<TokenId>(v), b, m);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    MergeRule r;
    if (!(ls >> r.left >> r.right >> r.merged >> r.frequency))
      throw InputError("bad merge rule line: " + line);
    t.add_rule(r);
  }
  return t;
}

namespace {

// Left-to-right, non-overlapping replacement of (l, r) by m. Returns true if
// anything changed.
bool replace_pair(Sequence& s, TokenId l, TokenId r, TokenId m) {
  if (s.size() < 2) return false;
  std::size_t w = 0;
  bool changed = false;
  for (std::size_t i = 0; i < s.size();) {
    if (i + 1 < s.size() && s[i] == l && s[i + 1] == r) {
      s[w++] = m;
      i += 2;
      changed = true;
    } else {
      s[w++] = s[i++];
    }
  }
  s.resize(w);
  return changed;
}

}  // namespace

MergeTable bpe_train(const std::vector<Sequence>& corpus, const std::vector<std::uint64_t>& counts,
                     TokenId gen_vocab, std::size_t budget, std::uint64_t min_frequency) {
  if (!counts.empty() && counts.size() != corpus.size())
    throw ConfigError("bpe_train: counts and corpus sizes differ");
  // Identical sequences are merged identically, so work on unique words.
  std::map<Sequence, std::uint64_t> unique;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    for (TokenId t : corpus[i])
      if (t >= gen_vocab) throw InputError("bpe_train: token outside gen vocabulary");
    unique[corpus[i]] += counts.empty() ? 1 : counts[i];
  }
  std::vector<std::pair<Sequence, std::uint64_t>> words(unique.begin(), unique.end());

  MergeTable table(gen_vocab, budget, min_frequency);
  while (table.size() < budget) {
    std::map<std::pair<TokenId, TokenId>, std::uint64_t> pairs;
    for (const auto& [w, c] : words)
      for (std::size_t i = 0; i + 1 < w.size(); ++i) pairs[{w[i], w[i + 1]}] += c;
    if (pairs.empty()) break;
    // std::map iterates in (left, right) order, so the first maximum wins ties.
    auto best = pairs.begin();
    for (auto it = pairs.begin(); it != pairs.end(); ++it)
      if (it->second > best->second) best = it;
    if (best->second < min_frequency || best->second == 0) break;

    const TokenId merged = static_cast<TokenId>(gen_vocab + table.size());
    table.add_rule({best->first.first, best->first.second, merged, best->second});
    for (auto& [w, c] : words) replace_pair(w, best->first.first, best->first.second, merged);
  }
  return table;
}

MergeTable bpe_train(const std::vector<Sequence>& corpus, TokenId gen_vocab,
                     std::size_t budget, std::uint64_t min_frequency) {
  return bpe_train(corpus, {}, gen_vocab, budget, min_frequency);
}

Sequence merge_sequence(const MergeTable& table, Sequence seq) {
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& r : table.rules()) changed |= replace_pair(seq, r.left, r.right, r.merged);
  }
  return seq;
}

std::vector<TokenId> bpe_encode(const MergeTable& table, std::span<const TokenId> seq) {
  for (TokenId t : seq)
    if (t >= table.gen_vocab())
      throw InputError("bpe_encode: gen-token " + std::to_string(t) + " outside vocabulary of " +
                       std::to_string(table.gen_vocab()));
  std::vector<TokenId> out;
  for (TokenId t : merge_sequence(table, Sequence(seq.begin(), seq.end())))
    if (table.is_mem(t)) out.push_back(t);
  return out;
}

namespace {

NgramVocab finalize(std::map<Sequence, std::uint64_t> freq, std::uint64_t min_frequency,
                    TokenId first_id) {
  NgramVocab v;
  for (auto& [span, f] : freq) {
    if (f < min_frequency) continue;
    v.id[span] = static_cast<TokenId>(first_id + v.frequency.size());
    v.frequency[span] = f;
  }
  return v;
}

}  // namespace

NgramVocab ngram_tokens(const std::vector<Sequence>& corpus, std::size_t n,
                        std::uint64_t min_frequency, TokenId first_id) {
  if (n < 2) throw ConfigError("ngram_tokens: n must be >= 2");
  std::map<Sequence, std::uint64_t> freq;
  for (const auto& s : corpus)
    for (std::size_t i = 0; i + n <= s.size(); ++i) ++freq[Sequence(s.begin() + i, s.begin() + i + n)];
  return finalize(std::move(freq), min_frequency, first_id);
}

NgramVocab prefix_ngram_tokens(const std::vector<Sequence>& corpus, std::size_t max_len,
                               std::uint64_t min_frequency, TokenId first_id) {
  if (max_len == 0) throw ConfigError("prefix_ngram_tokens: max_len must be >= 1");
  std::map<Sequence, std::uint64_t> freq;
  for (const auto& s : corpus) {
    if (max_len > s.size()) throw ConfigError("prefix_ngram_tokens: max_len exceeds L");
    for (std::size_t k = 1; k <= max_len; ++k) ++freq[Sequence(s.begin(), s.begin() + k)];
  }
  return finalize(std::move(freq), min_frequency, first_id);
}

std::vector<TokenId> ngram_encode(const NgramVocab& vocab, std::span<const TokenId> seq,
                                  std::size_t n) {
  std::vector<TokenId> out;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) {
    auto it = vocab.id.find(Sequence(seq.begin() + i, seq.begin() + i + n));
    if (it != vocab.id.end()) out.push_back(it->second);
  }
  return out;
}

std::vector<TokenId> prefix_encode(const NgramVocab& vocab, std::span<const TokenId> seq,
                                   std::size_t max_len) {
  std::vector<TokenId> out;
  for (std::size_t k = 1; k <= std::min(max_len, seq.size()); ++k) {
    auto it = vocab.id.find(Sequence(seq.begin(), seq.begin() + k));
    if (it != vocab.id.end()) out.push_back(it->second);
  }
  return out;
}

}  // namespace trm::bpe
