#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <unordered_set>

#include "trm/embed/hybrid.hpp"
#include "trm/error.hpp"
#include "trm/nn/grad_check.hpp"
#include "trm/nn/optim.hpp"

using namespace trm;
using namespace trm::embed;

namespace {

using Seqs = std::vector<std::vector<std::uint32_t>>;

struct Model {
  nn::ParamStore store;
  HashedTable gen, mem;
  HybridEmbedder emb;

  Model(const HybridConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    gen = HashedTable(store, "gen", 64, 4, 11, rng);
    mem = HashedTable(store, "mem", 32, 4, 12, rng);
    emb = HybridEmbedder(store, "item", cfg, &gen, cfg.use_wide ? &mem : nullptr, rng);
  }
};

HybridConfig small_config(bool wide, double p) {
  HybridConfig cfg;
  cfg.gen_layers = 3;
  cfg.deep_hidden = {6};
  cfg.out_dim = 5;
  cfg.dropout = p;
  cfg.use_wide = wide;
  return cfg;
}

}  // namespace

TEST(Hash, DeterministicAndSeeded) {
  EXPECT_EQ(hash64(42, 7), hash64(42, 7));
  EXPECT_NE(hash64(42, 7), hash64(42, 8));
  EXPECT_NE(hash64(42, 7), hash64(43, 7));
}

TEST(HashedTable, LookupSemantics) {
  nn::ParamStore store;
  Rng rng(1);
  HashedTable t(store, "t", 128, 8, 3, rng);
  auto a = t.lookup(99);
  auto b = t.lookup(99);
  EXPECT_EQ(a.data(), b.data());
  // A never-seen id still resolves to a bucket row; a reused id maps to the same one.
  EXPECT_EQ(id_embed(123456789, t).size(), 8u);
  EXPECT_EQ(id_embed(5, t).data(), t.lookup(5).data());

  HashedTable one(store, "one", 1, 4, 3, rng);
  for (std::uint64_t id = 0; id < 50; ++id) EXPECT_EQ(one.lookup(id).data(), one.lookup(0).data());
  EXPECT_EQ(store.get("t").kind, nn::ParamKind::embedding);
  EXPECT_THROW(HashedTable(store, "zero", 0, 4, 1, rng), ConfigError);
}

TEST(HashedTable, CollisionRateMatchesBirthdayEstimate) {
  const double n = 10000, m = 4096;
  // Expected ids landing in an already-occupied bucket.
  const double expected = n - m * (1.0 - std::exp(-n / m));
  double mean = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    nn::ParamStore store;
    Rng rng(seed);
    HashedTable t(store, "t", 4096, 1, seed, rng);
    std::unordered_set<std::size_t> used;
    // Ids spread like a real catalog: sparse, not 0..n-1.
    std::mt19937_64 ids(seed + 100);
    for (int i = 0; i < 10000; ++i) used.insert(t.bucket(ids()));
    mean += (n - static_cast<double>(used.size())) / 20.0;
  }
  EXPECT_NEAR(mean / expected, 1.0, 0.10);
}

TEST(Hybrid, GenOnlyEqualsHybridWithZeroWide) {
  Model gen_only(small_config(false, 0.0), 5);
  Model hybrid(small_config(true, 0.0), 5);
  hybrid.store.get("item.wide.w").value.fill(0.0);
  Seqs gen{{0, 5, 9}, {1, 6, 12}, {3, 3, 3}};
  Seqs mem(3);
  const auto a = gen_only.emb.forward(gen, {}, false, nullptr, nullptr);
  const auto b = hybrid.emb.forward(gen, mem, false, nullptr, nullptr);
  EXPECT_EQ(a, b);

  // Empty mem list: the wide path contributes its bias only.
  hybrid.store.get("item.wide.b").value.fill(0.25);
  const auto c = hybrid.emb.forward(gen, mem, false, nullptr, nullptr);
  for (std::size_t k = 0; k < c.size(); ++k) EXPECT_EQ(c.values()[k], a.values()[k] + 0.25);
}

TEST(Hybrid, EvalModeIsDeterministic) {
  Model m(small_config(true, 0.5), 2);
  Seqs gen{{1, 2, 3}}, mem{{70, 71}};
  Rng r1(1), r2(2);
  EXPECT_EQ(m.emb.forward(gen, mem, false, &r1, nullptr), m.emb.forward(gen, mem, false, &r2, nullptr));
  EXPECT_THROW(m.emb.forward({{1, 2}}, mem, false, nullptr, nullptr), ConfigError);
}

TEST(Hybrid, InvertedDropoutIsUnbiased) {
  Model m(small_config(false, 0.5), 3);
  Seqs gen{{4, 8, 15}};
  const auto ref = m.emb.forward(gen, {}, false, nullptr, nullptr);
  std::vector<double> mean(ref.size(), 0.0);
  Rng rng(17);
  const int samples = 10000;
  for (int s = 0; s < samples; ++s) {
    const auto y = m.emb.forward(gen, {}, true, &rng, nullptr);
    for (std::size_t k = 0; k < y.size(); ++k) mean[k] += y.values()[k] / samples;
  }
  double err = 0.0, norm = 0.0;
  for (std::size_t k = 0; k < mean.size(); ++k) {
    err += (mean[k] - ref.values()[k]) * (mean[k] - ref.values()[k]);
    norm += ref.values()[k] * ref.values()[k];
  }
  EXPECT_LT(std::sqrt(err / norm), 0.02);
}

TEST(Hybrid, OnlyTouchedRowsChange) {
  Model m(small_config(true, 0.0), 4);
  const auto gen_before = m.gen.param().value;
  const auto mem_before = m.mem.param().value;
  Seqs gen{{2, 9, 33}}, mem{{100, 101}};
  HybridEmbedder::Cache cache;
  const auto y = m.emb.forward(gen, mem, true, nullptr, &cache);
  nn::Tensor2 dy(1, y.cols(), 1.0);
  m.emb.backward(cache, dy);
  nn::OptimizerState opt;
  nn::optimizer_step(m.store, opt);

  std::set<std::size_t> gen_rows{m.gen.bucket(2), m.gen.bucket(9), m.gen.bucket(33)};
  std::set<std::size_t> mem_rows{m.mem.bucket(100), m.mem.bucket(101)};
  for (std::size_t r = 0; r < 64; ++r) {
    const bool changed = !std::equal(gen_before.row(r).begin(), gen_before.row(r).end(),
                                     m.gen.param().value.row(r).begin());
    EXPECT_EQ(changed, gen_rows.count(r) == 1) << "gen row " << r;
  }
  for (std::size_t r = 0; r < 32; ++r) {
    const bool changed = !std::equal(mem_before.row(r).begin(), mem_before.row(r).end(),
                                     m.mem.param().value.row(r).begin());
    EXPECT_EQ(changed, mem_rows.count(r) == 1) << "mem row " << r;
  }
}

TEST(Hybrid, GradientMatchesFiniteDifferences) {
  for (Pooling pool : {Pooling::sum, Pooling::mean}) {
    auto cfg = small_config(true, 0.3);
    cfg.pooling = pool;
    Model m(cfg, 6);
    Seqs gen{{1, 2, 3}, {4, 2, 7}, {1, 8, 9}};
    Seqs mem{{40, 41}, {}, {42, 40, 43}};
    nn::Tensor2 target(3, 5);
    Rng trng(9);
    std::normal_distribution<double> g;
    for (double& v : target.values()) v = g(trng);
    auto loss = [&](bool acc) {
      Rng drop(123);  // same mask on every evaluation
      HybridEmbedder::Cache cache;
      const auto y = m.emb.forward(gen, mem, true, &drop, &cache);
      double l = 0.0;
      nn::Tensor2 dy(y.rows(), y.cols());
      for (std::size_t k = 0; k < y.size(); ++k) {
        const double r = y.values()[k] - target.values()[k];
        l += 0.5 * r * r;
        dy.values()[k] = r;
      }
      if (acc) m.emb.backward(cache, dy);
      return l;
    };
    EXPECT_LT(nn::grad_check(loss, m.store, 1e-5), 1e-4);
  }
}

TEST(HashedTable, DirectAddressing) {
  nn::ParamStore store;
  Rng rng(3);
  HashedTable t(store, "gen", 5, 2, 0, rng, Addressing::direct);
  for (std::uint64_t id = 0; id < 5; ++id) EXPECT_EQ(t.bucket(id), id);
  EXPECT_THROW(t.bucket(5), InputError);
}
