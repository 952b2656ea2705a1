#include "trm/embed/hybrid.hpp"

#include <cmath>

#include "trm/error.hpp"
#include "trm/util/seed.hpp"

namespace trm::embed {

std::uint64_t hash64(std::uint64_t id, std::uint64_t seed) {
  return mix64(id + (seed + 1) * 0x9E3779B97F4A7C15ULL);
}

HashedTable::HashedTable(nn::ParamStore& store, const std::string& name,
                         std::size_t bucket_count, std::size_t dim, std::uint64_t seed,
                         Rng& rng, Addressing addressing)
    : buckets_(bucket_count), dim_(dim), seed_(seed), addressing_(addressing) {
  if (bucket_count == 0 || dim == 0)
    throw ConfigError(name + ": bucket_count and dim must be positive");
  p_ = &store.add(name, bucket_count, dim, nn::ParamKind::embedding);
  const double a = std::sqrt(3.0 / static_cast<double>(dim));
  std::uniform_real_distribution<double> u(-a, a);
  for (double& v : p_->value.values()) v = u(rng);
}

std::size_t HashedTable::bucket(std::uint64_t id) const {
  if (addressing_ == Addressing::hashed) return hash64(id, seed_) % buckets_;
  if (id >= buckets_)
    throw InputError("embedding id " + std::to_string(id) + " outside a table of " +
                     std::to_string(buckets_) + " rows");
  return id;
}

void HashedTable::accumulate(std::uint64_t id, std::span<const double> grad, double scale) {
  const std::size_t r = bucket(id);
  p_->touch_row(r);
  auto g = p_->grad.row(r);
  for (std::size_t j = 0; j < dim_; ++j) g[j] += scale * grad[j];
}

void HybridConfig::validate() const {
  if (gen_layers == 0) throw ConfigError("hybrid: gen_layers must be >= 1");
  if (out_dim == 0) throw ConfigError("hybrid: out_dim must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("hybrid: dropout must lie in [0, 1)");
  for (std::size_t w : deep_hidden)
    if (w == 0) throw ConfigError("hybrid: zero-width deep layer");
}

HybridEmbedder::HybridEmbedder(nn::ParamStore& store, const std::string& name,
                               const HybridConfig& cfg, HashedTable* gen, HashedTable* mem,
                               Rng& rng)
    : cfg_(cfg), gen_(gen), mem_(mem) {
  cfg_.validate();
  if (gen == nullptr) throw ConfigError("hybrid: gen table required");
  if (cfg_.use_wide && mem == nullptr) throw ConfigError("hybrid: wide path needs a mem table");
  std::vector<std::size_t> widths{cfg_.gen_layers * gen->dim()};
  widths.insert(widths.end(), cfg_.deep_hidden.begin(), cfg_.deep_hidden.end());
  widths.push_back(cfg_.out_dim);
  deep_ = nn::Mlp(store, name + ".deep", widths, nn::Activation::relu, rng);
  if (cfg_.use_wide) wide_ = nn::Linear(store, name + ".wide", mem->dim(), cfg_.out_dim, rng);
}

nn::Tensor2 HybridEmbedder::forward(const std::vector<std::vector<std::uint32_t>>& gen_tokens,
                                    const std::vector<std::vector<std::uint32_t>>& mem_tokens,
                                    bool train, Rng* rng, Cache* cache) const {
  const std::size_t b = gen_tokens.size();
  const std::size_t d = gen_->dim();
  const std::size_t l = cfg_.gen_layers;
  if (cfg_.use_wide && mem_tokens.size() != b)
    throw ConfigError("hybrid: gen and mem batches differ in size");

  nn::Tensor2 deep_in(b, l * d);
  for (std::size_t i = 0; i < b; ++i) {
    if (gen_tokens[i].size() != l)
      throw ConfigError("hybrid: expected " + std::to_string(l) + " gen tokens, got " +
                        std::to_string(gen_tokens[i].size()));
    for (std::size_t t = 0; t < l; ++t) {
      const auto row = gen_->lookup(gen_tokens[i][t]);
      std::copy(row.begin(), row.end(), deep_in.row(i).begin() + t * d);
    }
  }
  nn::Mlp::Cache deep_cache;
  nn::Tensor2 out = deep_.forward(deep_in, cache ? &deep_cache : nullptr);

  std::vector<double> mask;
  if (train && cfg_.dropout > 0.0) {
    if (rng == nullptr) throw ConfigError("hybrid: training-mode dropout needs a generator");
    mask = nn::dropout_mask(out.size(), cfg_.dropout, *rng);
    for (std::size_t k = 0; k < out.size(); ++k) out.values()[k] *= mask[k];
  }

  nn::Tensor2 pooled;
  if (cfg_.use_wide) {
    pooled = nn::Tensor2(b, mem_->dim());
    for (std::size_t i = 0; i < b; ++i) {
      for (std::uint32_t m : mem_tokens[i]) {
        const auto row = mem_->lookup(m);
        for (std::size_t j = 0; j < row.size(); ++j) pooled(i, j) += row[j];
      }
      if (cfg_.pooling == Pooling::mean && !mem_tokens[i].empty())
        for (double& v : pooled.row(i)) v /= static_cast<double>(mem_tokens[i].size());
    }
    const nn::Tensor2 w = wide_.forward(pooled);
    for (std::size_t k = 0; k < out.size(); ++k) out.values()[k] += w.values()[k];
  }

  if (cache != nullptr) {
    cache->deep_in = std::move(deep_in);
    cache->deep = std::move(deep_cache);
    cache->mask = std::move(mask);
    cache->pooled = std::move(pooled);
    cache->gen = gen_tokens;
    cache->mem = cfg_.use_wide ? mem_tokens : std::vector<std::vector<std::uint32_t>>{};
  }
  return out;
}

void HybridEmbedder::backward(const Cache& cache, const nn::Tensor2& dy) {
  const std::size_t d = gen_->dim();
  nn::Tensor2 ddeep = dy;
  if (!cache.mask.empty())
    for (std::size_t k = 0; k < ddeep.size(); ++k) ddeep.values()[k] *= cache.mask[k];
  const nn::Tensor2 din = deep_.backward(cache.deep, std::move(ddeep));
  for (std::size_t i = 0; i < cache.gen.size(); ++i)
    for (std::size_t t = 0; t < cache.gen[i].size(); ++t)
      gen_->accumulate(cache.gen[i][t], din.row(i).subspan(t * d, d));

  if (!cfg_.use_wide) return;
  const nn::Tensor2 dpool = wide_.backward(cache.pooled, dy);
  for (std::size_t i = 0; i < cache.mem.size(); ++i) {
    if (cache.mem[i].empty()) continue;
    const double scale =
        cfg_.pooling == Pooling::mean ? 1.0 / static_cast<double>(cache.mem[i].size()) : 1.0;
    for (std::uint32_t m : cache.mem[i]) mem_->accumulate(m, dpool.row(i), scale);
  }
}

}  // namespace trm::embed
