#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "trm/nn/layers.hpp"

namespace trm::embed {

/// Bucket hash: mix64(id + (seed + 1) * 0x9E3779B97F4A7C15), with mix64 the
/// splitmix64 finalizer (xor-shift 30, * 0xBF58476D1CE4E5B9, xor-shift 27,
/// * 0x94D049BB133111EB, xor-shift 31).
std::uint64_t hash64(std::uint64_t id, std::uint64_t seed);

enum class Addressing {
  hashed,  // hash64(id, seed) mod bucket_count
  direct,  // row = id; ids must be < bucket_count
};

/// Embedding rows addressed by id. Registered as an embedding parameter
/// "<name>" so the optimizer updates touched rows only.
class HashedTable {
 public:
  HashedTable() = default;
  /// Rows start uniform in +-sqrt(3 / dim) (unit expected squared norm).
  HashedTable(nn::ParamStore& store, const std::string& name, std::size_t bucket_count,
              std::size_t dim, std::uint64_t seed, Rng& rng,
              Addressing addressing = Addressing::hashed);

  std::size_t bucket_count() const { return buckets_; }
  std::size_t dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }
  nn::Param& param() { return *p_; }
  const nn::Param& param() const { return *p_; }

  Addressing addressing() const { return addressing_; }
  /// Throws InputError for a direct id out of range.
  std::size_t bucket(std::uint64_t id) const;
  std::span<const double> lookup(std::uint64_t id) const { return p_->value.row(bucket(id)); }
  /// Adds `grad` into the id's row gradient and marks the row touched.
  void accumulate(std::uint64_t id, std::span<const double> grad, double scale = 1.0);

 private:
  std::size_t buckets_ = 0;
  std::size_t dim_ = 0;
  std::uint64_t seed_ = 0;
  Addressing addressing_ = Addressing::hashed;
  nn::Param* p_ = nullptr;
};

/// Baseline item pathway: the item id's own bucket row.
inline std::span<const double> id_embed(std::uint64_t item_id, const HashedTable& table) {
  return table.lookup(item_id);
}

enum class Pooling { sum, mean };

struct HybridConfig {
  std::size_t gen_layers = 3;  // L, gen tokens per item
  std::vector<std::size_t> deep_hidden{32};
  double dropout = 0.1;
  Pooling pooling = Pooling::sum;
  std::size_t out_dim = 16;
  bool use_wide = true;  // false: gen-only

  void validate() const;
};

/// Item embedding = deep(gen tokens) + wide(mem tokens). The deep path is an
/// MLP over the concatenated gen-token rows with inverted dropout on its
/// output; the wide path pools mem-token rows through one Linear.
class HybridEmbedder {
 public:
  struct Cache {
    nn::Tensor2 deep_in;
    nn::Mlp::Cache deep;
    std::vector<double> mask;  // empty when dropout is off
    nn::Tensor2 pooled;
    std::vector<std::vector<std::uint32_t>> gen;
    std::vector<std::vector<std::uint32_t>> mem;
  };

  HybridEmbedder() = default;
  /// `mem` may be null when cfg.use_wide is false. Tables must outlive this.
  HybridEmbedder(nn::ParamStore& store, const std::string& name, const HybridConfig& cfg,
                 HashedTable* gen, HashedTable* mem, Rng& rng);

  const HybridConfig& config() const { return cfg_; }
  std::size_t out_dim() const { return cfg_.out_dim; }

  /// One row per item. Dropout is applied only when `train` is set, drawing
  /// from `rng`. Throws ConfigError when a gen sequence is not length L.
  nn::Tensor2 forward(const std::vector<std::vector<std::uint32_t>>& gen_tokens,
                      const std::vector<std::vector<std::uint32_t>>& mem_tokens, bool train,
                      Rng* rng, Cache* cache) const;
  void backward(const Cache& cache, const nn::Tensor2& dy);

 private:
  HybridConfig cfg_;
  HashedTable* gen_ = nullptr;
  HashedTable* mem_ = nullptr;
  nn::Mlp deep_;
  nn::Linear wide_;
};

}  // namespace trm::embed
