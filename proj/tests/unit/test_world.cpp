#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "trm/error.hpp"
#include "trm/nn/loss.hpp"
#include "trm/world/world.hpp"

using namespace trm;
using namespace trm::world;

namespace {

WorldConfig small(std::uint64_t seed) {
  WorldConfig c;
  c.items = 200;
  c.epochs = 4;
  c.events_per_epoch = 1000;
  c.seed = seed;
  return c;
}

// One user, one query, anchor at +1 with radius 2: eta*(z) = -1 + max(0, 2 - |z - 1|),
// which is exactly z on {-1, +1}.
BayesModel two_point_bayes() {
  BayesModel b;
  b.anchors = nn::Tensor2{{1.0}};
  b.radii = {2.0};
  b.smoothness = 1.0;
  b.lipschitz = 1.0;
  b.offset = -1.0;
  b.user_weights = nn::Tensor2{{1.0}};
  b.query_weights = nn::Tensor2{{0.0}};
  return b;
}

}  // namespace

TEST(Bayes, DirectEvaluation) {
  BayesModel b;
  b.anchors = nn::Tensor2{{0.5, -1.0}};
  b.radii = {1.0};
  b.lipschitz = 2.0;
  b.offset = 0.0;
  b.user_weights = nn::Tensor2{{3.0}};
  b.query_weights = nn::Tensor2{{0.0}};
  const std::vector<double> z{0.5, -1.0};
  EXPECT_DOUBLE_EQ(b.eta(0, 0, z), 2.0);
  EXPECT_NEAR(b.prob(0, 0, z), 0.8808, 1e-4);

  auto two = two_point_bayes();
  EXPECT_DOUBLE_EQ(two.eta(0, 0, std::vector<double>{1.0}), 1.0);
  EXPECT_DOUBLE_EQ(two.eta(0, 0, std::vector<double>{-1.0}), -1.0);
}

TEST(Bayes, FlatWorldIsConstant) {
  auto cfg = small(3);
  cfg.offset = 0.7;
  auto b = build_bayes(cfg);
  b.user_weights.fill(0.0);
  b.query_weights.fill(0.0);
  const auto cat = gen_catalog(cfg);
  for (const auto& it : cat.items) EXPECT_EQ(b.prob(1, 2, it.z), nn::sigmoid(0.7));
}

TEST(Bayes, RejectsBadSmoothness) {
  auto cfg = small(1);
  cfg.smoothness = 1.5;
  EXPECT_THROW(build_bayes(cfg), ConfigError);
  cfg.smoothness = 0.0;
  EXPECT_THROW(build_bayes(cfg), ConfigError);
  cfg.smoothness = 0.5;
  cfg.lipschitz = 0.0;
  EXPECT_THROW(build_bayes(cfg), ConfigError);
}

TEST(Bayes, HolderCertificatePasses) {
  auto cfg = small(5);
  cfg.anchors = 1;
  cfg.smoothness = 1.0;
  cfg.lipschitz = 1.0;
  const auto one = holder_certificate(build_bayes(cfg), 100000, 9);
  EXPECT_EQ(one.violations, 0u);
  EXPECT_LE(one.max_ratio, 1.0 + 1e-9);
  EXPECT_GT(one.max_ratio, 0.1);

  for (double s : {0.3, 0.6, 1.0}) {
    auto c = small(6);
    c.smoothness = s;
    EXPECT_TRUE(holder_certificate(build_bayes(c), 100000, 10).passed()) << "s=" << s;
  }
}

TEST(Catalog, NoChurnIsStatic) {
  auto cfg = small(2);
  cfg.churn_rate = 0.0;
  const auto cat = gen_catalog(cfg);
  EXPECT_EQ(cat.items.size(), cfg.items);
  for (std::size_t e = 1; e < cat.epochs(); ++e) EXPECT_EQ(cat.alive(e), cat.alive(0));
}

TEST(Catalog, UniformChurnSurvivorsMatchClosedForm) {
  const double expected = expected_survivors(1000, 0.1, 10);
  EXPECT_NEAR(expected, 348.678, 1e-3);
  double mean = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    WorldConfig cfg;
    cfg.items = 1000;
    cfg.epochs = 11;  // ten churn rounds
    cfg.churn_rate = 0.1;
    cfg.churn_mode = ChurnMode::uniform;
    cfg.seed = seed;
    const auto cat = gen_catalog(cfg);
    std::size_t survivors = 0;
    for (const auto& it : cat.items) survivors += it.birth == 0 && it.retire == kAlive;
    mean += static_cast<double>(survivors) / 20.0;
    for (std::size_t e = 1; e < cat.epochs(); ++e) EXPECT_EQ(cat.retired_per_epoch[e], 100u);
  }
  EXPECT_NEAR(mean / expected, 1.0, 0.05);
}

TEST(Catalog, OldestBiasedChurnRetiresOlderItems) {
  WorldConfig cfg;
  cfg.items = 1000;
  cfg.epochs = 11;
  cfg.seed = 4;
  cfg.churn_mode = ChurnMode::uniform;
  const auto uni = gen_catalog(cfg);
  cfg.churn_mode = ChurnMode::oldest;
  const auto old = gen_catalog(cfg);
  auto cohort = [](const Catalog& c) {
    std::size_t n = 0;
    for (const auto& it : c.items) n += it.birth == 0 && it.retire == kAlive;
    return n;
  };
  EXPECT_LT(cohort(old), cohort(uni));
}

TEST(Events, ZipfTopShareMatchesHarmonicSums) {
  auto cfg = small(8);
  cfg.items = 1000;
  cfg.epochs = 1;
  const auto cat = gen_catalog(cfg);
  const auto log = sample_events(cat, build_bayes(cfg), 1, 100000, 77);
  std::size_t top = 0;
  for (const auto& e : log.events) top += cat.items[e.item].slot < 10;
  const double expected = zipf_top_share(1000, 10, 1.0);
  EXPECT_NEAR(expected, 2.9289682539682538 / 7.4854708605503451, 1e-12);
  EXPECT_NEAR(static_cast<double>(top) / 1e5 / expected, 1.0, 0.05);
}

TEST(Events, FlatWorldPositiveRate) {
  auto cfg = small(9);
  cfg.offset = 0.0;
  auto b = build_bayes(cfg);
  b.user_weights.fill(0.0);
  b.query_weights.fill(0.0);
  const auto cat = gen_catalog(cfg);
  const auto log = sample_events(cat, b, 1, 100000, 5);
  double pos = 0.0;
  for (const auto& e : log.events) pos += e.ctr;
  EXPECT_NEAR(pos / 1e5, 0.5, 0.01);
}

TEST(Events, DeterministicAndStructural) {
  const auto a = build_world(small(11));
  const auto b = build_world(small(11));
  ASSERT_EQ(a.log.events.size(), b.log.events.size());
  for (std::size_t i = 0; i < a.log.events.size(); ++i) {
    const auto& x = a.log.events[i];
    const auto& y = b.log.events[i];
    ASSERT_TRUE(x.epoch == y.epoch && x.user == y.user && x.query == y.query &&
                x.item == y.item && x.ctr == y.ctr && x.real_play == y.real_play);
    EXPECT_TRUE(a.catalog.items[x.item].alive_at(x.epoch));
    EXPECT_LE(x.real_play, x.ctr);
  }
  EXPECT_EQ(a.content.entries(), b.content.entries());
}

TEST(BayesRisks, TwoPointEnumeration) {
  const auto b = two_point_bayes();
  Population pop;
  pop.z = nn::Tensor2{{1.0}, {-1.0}};
  pop.weight = {0.5, 0.5};
  // A single code at 0 puts both items in one cell.
  rq::ResidualQuantizer q({rq::Codebook{0, nn::Tensor2{{0.0}}}});
  const auto r = bayes_risks(b, pop, q);
  const double p1 = nn::sigmoid(1.0);
  const double oracle = p1 * std::log(p1 / 0.5) + (1 - p1) * std::log((1 - p1) / 0.5);
  EXPECT_NEAR(r.delta_quant, oracle, 1e-12);
  EXPECT_NEAR(r.delta_quant, 0.1113, 1e-3);
  EXPECT_NEAR(r.l_inf, nn::binary_entropy(p1), 1e-12);
  EXPECT_NEAR(r.l_inf_tok, std::log(2.0), 1e-12);
  EXPECT_EQ(r.cells, 1u);
}

TEST(BayesRisks, ZeroCasesAndRefinement) {
  auto cfg = small(12);
  cfg.items = 80;
  cfg.users = 3;
  cfg.queries = 4;
  const auto b = build_bayes(cfg);
  const auto cat = gen_catalog(cfg);
  const auto pop = exposure_population(cat, 0);

  std::vector<std::size_t> own(pop.z.rows());
  for (std::size_t i = 0; i < own.size(); ++i) own[i] = i;
  EXPECT_EQ(bayes_risks(b, pop, own).delta_quant, 0.0);

  auto flat = b;
  flat.user_weights.fill(0.0);
  flat.query_weights.fill(0.0);
  std::vector<std::size_t> one(pop.z.rows(), 0);
  EXPECT_NEAR(bayes_risks(flat, pop, one).delta_quant, 0.0, 1e-15);

  double prev = INFINITY;
  for (std::size_t layers = 1; layers <= 3; ++layers) {
    const auto fit = rq::rq_fit(pop.z, std::vector<std::size_t>(layers, 4), 3);
    const auto r = bayes_risks(b, pop, fit.quantizer);
    EXPECT_GE(r.delta_quant, 0.0);
    EXPECT_LE(r.delta_quant, prev + 1e-15);
    prev = r.delta_quant;
  }
  EXPECT_THROW(bayes_risks(b, pop, own, 10), CapacityError);
}

TEST(ClickPairs, FromEvents) {
  const auto w = build_world(small(13));
  const auto pairs = click_pairs(w.log, 3, 2);
  EXPECT_FALSE(pairs.query_item.empty());
  EXPECT_FALSE(pairs.item_item.empty());
  for (const auto& p : pairs.query_item) {
    EXPECT_TRUE(w.content.contains(p.anchor));
    EXPECT_TRUE(w.content.contains(p.positive));
  }
}

TEST(Export, RoundTripAndDeterminism) {
  const auto dir = std::filesystem::temp_directory_path() / "trm_world_test";
  std::filesystem::remove_all(dir);
  const auto w = build_world(small(14));
  const auto cert = holder_certificate(w.bayes, 1000, 1);
  const auto files = export_world(w, dir / "a", cert);
  export_world(build_world(small(14)), dir / "b", cert);
  for (const auto& f : files)
    EXPECT_EQ(file_hash(dir / "a" / f), file_hash(dir / "b" / f)) << f;
  const auto back = load_world(dir / "a");
  EXPECT_EQ(back.log.events.size(), w.log.events.size());
  EXPECT_THROW(load_world(dir / "missing"), InputError);
  std::filesystem::remove_all(dir);
}
