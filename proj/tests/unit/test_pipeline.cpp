#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "trm/error.hpp"
#include "trm/nn/loss.hpp"
#include "trm/pipeline/config.hpp"
#include "trm/pipeline/experiment.hpp"

using namespace trm;
using namespace trm::pipeline;
using nlohmann::json;

namespace {

RunConfig tiny_config() {
  RunConfig c;
  c.world.items = 80;
  c.world.users = 3;
  c.world.queries = 4;
  c.world.epochs = 3;
  c.world.events_per_epoch = 800;
  c.world.anchor_radius = 2.5;
  c.world.seed = 5;
  c.tokenizer.layers = {8, 8, 8};
  c.tokenizer.bpe_budget = 16;
  c.tokenizer.adapter.steps = 40;
  c.model.tower_hidden = {8, 8};
  c.model.gen_transformer_layers = 1;
  c.train.passes = 1;
  c.verify.holder_pairs = 1000;
  c.verify.decomposition_features = {4, 8, 16, 32};
  return c;
}

const world::World& tiny_world() {
  static const world::World w = world::build_world(tiny_config().world);
  return w;
}

const Tokenization& tiny_tokens() {
  static const Tokenization t = tokenize(tiny_world(), tiny_config().tokenizer, true, 9);
  return t;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("trm_pipeline_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(RunConfig, DefaultsRoundTrip) {
  const RunConfig c;
  const json j = to_json(c);
  EXPECT_EQ(to_json(parse_run_config(j)), j);
  EXPECT_EQ(to_json(parse_run_config(json::object())), j);
}

TEST(RunConfig, PartialSectionsKeepDefaults) {
  const auto c = parse_run_config(json{{"model", {{"lambda", 0.25}}}, {"train", {{"seeds", {3, 4}}}}});
  EXPECT_EQ(c.model.lambda, 0.25);
  EXPECT_EQ(c.model.variant, "trm-mlp");
  EXPECT_EQ(c.train.seeds, (std::vector<std::uint64_t>{3, 4}));
  EXPECT_EQ(c.train.batch, 64u);
}

TEST(RunConfig, RejectsBadInput) {
  EXPECT_THROW(parse_run_config(json{{"extra", 1}}), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"model", {{"widths", 3}}}}), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"train", {{"batch", "64"}}}}), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"train", {{"batch", -1}}}}), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"train", {{"passes", 0}}}}), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"model", {{"pooling", "max"}}}}), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"model", {{"variant", "bert"}}}}), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"sweep", {{"widths", {4, 8, 16}}}}}), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"eval", {{"age_edges", {0, 3, 3}}}}}), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"world", {{"nope", 1}}}}), ConfigError);
  EXPECT_THROW(parse_run_config(json::array()), ConfigError);
}

TEST(RunConfig, MissingFileIsInputError) {
  EXPECT_THROW(load_run_config("/nonexistent/config.json"), InputError);
}

TEST(Variant, Matrix) {
  struct Row {
    const char* name;
    model::ItemPathway pathway;
    model::TowerKind tower;
    bool wide, ntp, align;
    double lambda;
  };
  using P = model::ItemPathway;
  using T = model::TowerKind;
  const Row rows[] = {{"id-mlp", P::id, T::mlp, false, false, false, 0.0},
                      {"id-transformer", P::id, T::transformer, false, false, false, 0.0},
                      {"trm-mlp", P::tokens, T::mlp, true, true, true, 0.1},
                      {"trm-transformer", P::tokens, T::transformer, true, true, true, 0.1},
                      {"gen-only", P::tokens, T::mlp, false, false, true, 0.0},
                      {"hybrid", P::tokens, T::mlp, true, false, true, 0.0}};
  for (const auto& r : rows) {
    const auto v = resolve_variant(r.name, {}, 0.1);
    EXPECT_EQ(v.pathway, r.pathway) << r.name;
    EXPECT_EQ(v.tower, r.tower) << r.name;
    EXPECT_EQ(v.wide, r.wide) << r.name;
    EXPECT_EQ(v.ntp, r.ntp) << r.name;
    EXPECT_EQ(v.align, r.align) << r.name;
    EXPECT_EQ(v.lambda, r.lambda) << r.name;
  }
  EXPECT_EQ(variant_names().size(), 6u);
}

TEST(Variant, Ablations) {
  const auto v = resolve_variant("trm-mlp", {"w/o-ntp", "w/o-hybrid", "w/o-align"}, 0.1);
  EXPECT_FALSE(v.ntp);
  EXPECT_EQ(v.lambda, 0.0);
  EXPECT_FALSE(v.wide);
  EXPECT_FALSE(v.align);
  EXPECT_EQ(v.name, "trm-mlp+w/o-ntp+w/o-hybrid+w/o-align");
  EXPECT_THROW(resolve_variant("id-mlp", {"w/o-ntp"}, 0.1), ConfigError);
  EXPECT_THROW(resolve_variant("trm-mlp", {"w/o-tower"}, 0.1), ConfigError);
}

TEST(Tokenize, LayersEightGiveVocab24AndCoverEveryItem) {
  const auto& w = tiny_world();
  const auto& t = tiny_tokens();
  EXPECT_EQ(t.quantizer.vocab_size(), 24u);
  EXPECT_EQ(t.tokens.size(), w.catalog.items.size());
  for (std::size_t l = 1; l < t.layer_mse.size(); ++l) EXPECT_LE(t.layer_mse[l], t.layer_mse[l - 1]);
  EXPECT_LE(t.merges.size(), 16u);
  EXPECT_FALSE(t.align_losses.empty());

  std::set<std::uint64_t> fit;
  for (std::size_t e = 0; e + 1 < w.cfg.epochs; ++e)
    for (auto id : w.catalog.alive(e)) fit.insert(id);
  EXPECT_EQ(t.fit_items, fit.size());

  for (const auto& s : t.tokens) {
    ASSERT_EQ(s.gen_tokens.size(), 3u);
    std::vector<bpe::TokenId> global;
    for (std::size_t l = 0; l < 3; ++l) global.push_back(t.quantizer.global_id(l, s.gen_tokens[l]));
    EXPECT_EQ(s.mem_tokens, bpe::bpe_encode(t.merges, global));
    for (auto m : s.mem_tokens) {
      const auto span = t.merges.expand(m);
      EXPECT_NE(std::search(global.begin(), global.end(), span.begin(), span.end()), global.end());
    }
  }
}

TEST(Tokenize, BudgetZeroLeavesNoMemTokens) {
  auto cfg = tiny_config().tokenizer;
  cfg.bpe_budget = 0;
  const auto t = tokenize(tiny_world(), cfg, false, 9);
  EXPECT_TRUE(t.merges.empty());
  EXPECT_TRUE(t.align_losses.empty());
  for (const auto& s : t.tokens) EXPECT_TRUE(s.mem_tokens.empty());
}

TEST(Tokenize, SameSeedSameTokens) {
  const auto again = tokenize(tiny_world(), tiny_config().tokenizer, true, 9);
  EXPECT_EQ(again.tokens, tiny_tokens().tokens);
  EXPECT_EQ(again.merges, tiny_tokens().merges);
}

TEST(Tokenize, SaveLoadRoundTrip) {
  const auto dir = temp_dir("tokens");
  const auto files = save_tokenization(tiny_tokens(), dir);
  EXPECT_EQ(files.size(), 4u);
  const auto t = load_tokenization(dir);
  EXPECT_EQ(t.tokens, tiny_tokens().tokens);
  EXPECT_EQ(t.merges, tiny_tokens().merges);
  EXPECT_TRUE(t.quantizer == tiny_tokens().quantizer);
  EXPECT_EQ(t.aligned, true);
  EXPECT_EQ(t.layer_mse, tiny_tokens().layer_mse);
  EXPECT_THROW(load_tokenization(dir / "missing"), InputError);
}

TEST(Examples, MirrorTheEventLog) {
  const auto& w = tiny_world();
  const auto ex = build_examples(w, &tiny_tokens(), model::ItemPathway::tokens, 1, 2);
  std::vector<world::Event> events;
  for (const auto& e : w.log.events)
    if (e.epoch == 1) events.push_back(e);
  ASSERT_EQ(ex.size(), events.size());
  for (std::size_t i = 0; i < ex.size(); ++i) {
    const auto& e = events[i];
    EXPECT_EQ(ex[i].ctr, e.ctr);
    EXPECT_EQ(ex[i].real_play, e.real_play);
    EXPECT_EQ(ex[i].query, e.query);
    EXPECT_EQ(ex[i].age, 1.0 - static_cast<double>(w.catalog.items[e.item].birth));
    const auto q = w.bayes.query_weights.row(e.query);
    EXPECT_TRUE(std::equal(q.begin(), q.end(), ex[i].xq.begin()));
    EXPECT_EQ(std::get<rq::TokenSequence>(ex[i].item), tiny_tokens().tokens[e.item]);
  }
  const auto ids = build_examples(w, nullptr, model::ItemPathway::id, 0, 1);
  for (const auto& x : ids) EXPECT_TRUE(std::holds_alternative<std::uint64_t>(x.item));
  EXPECT_THROW(build_examples(w, nullptr, model::ItemPathway::tokens, 0, 1), ConfigError);
}

TEST(PopulationLoss, ZeroLogitsGiveLn2) {
  const auto cfg = tiny_config();
  for (const char* name : {"id-mlp", "gen-only"}) {
    const auto v = resolve_variant(name, {}, 0.1);
    const Tokenization* tok = v.pathway == model::ItemPathway::id ? nullptr : &tiny_tokens();
    model::RankModel m(model_config(cfg, v, tiny_world(), tok), 3);
    m.tower().output().weight().value.fill(0.0);
    m.tower().output().bias()->value.fill(0.0);
    EXPECT_NEAR(population_loss(m, tiny_world(), tok), std::log(2.0), 1e-12) << name;
  }
}

TEST(PopulationLoss, NeverBelowTheBayesFloors) {
  const auto cfg = tiny_config();
  const auto& w = tiny_world();
  const auto pop = world::exposure_population(w.catalog, eval_epoch(w));
  const auto risks = world::bayes_risks(w.bayes, pop, token_cells(pop, tiny_tokens()));
  RunOptions opts;
  opts.population_loss = true;
  const auto id = run_variant(w, nullptr, cfg, resolve_variant("id-mlp", {}, 0.1), 2, opts);
  const auto gen =
      run_variant(w, &tiny_tokens(), cfg, resolve_variant("gen-only", {}, 0.1), 2, opts);
  EXPECT_GE(id.population_loss, risks.l_inf);
  EXPECT_GE(gen.population_loss, risks.l_inf_tok);
  EXPECT_GE(risks.l_inf_tok, risks.l_inf);
}

TEST(TokenCells, OneCellPerDistinctSequence) {
  const auto& w = tiny_world();
  const auto pop = world::exposure_population(w.catalog, eval_epoch(w));
  const auto cells = token_cells(pop, tiny_tokens());
  std::set<std::vector<std::uint32_t>> distinct;
  for (std::size_t i = 0; i < pop.ids.size(); ++i) {
    distinct.insert(tiny_tokens().tokens[pop.ids[i]].gen_tokens);
    for (std::size_t j = 0; j < i; ++j)
      EXPECT_EQ(cells[i] == cells[j], tiny_tokens().tokens[pop.ids[i]].gen_tokens ==
                                          tiny_tokens().tokens[pop.ids[j]].gen_tokens);
  }
  EXPECT_EQ(*std::max_element(cells.begin(), cells.end()) + 1, distinct.size());
}

TEST(RunVariant, ShapesAndSharedTower) {
  const auto cfg = tiny_config();
  const auto& w = tiny_world();
  const auto id = run_variant(w, nullptr, cfg, resolve_variant("id-mlp", {}, 0.1), 4);
  const auto trm = run_variant(w, &tiny_tokens(), cfg, resolve_variant("trm-mlp", {}, 0.1), 4);
  for (const auto* r : {&id, &trm}) {
    ASSERT_EQ(r->rows.size(), w.cfg.epochs - 1);
    EXPECT_EQ(r->norms.variance.size(), w.cfg.epochs);
    EXPECT_EQ(r->buckets.size(), cfg.eval.age_edges.size() - 1);
    for (const auto& row : r->rows)
      for (std::size_t h = 0; h < model::kHeads; ++h) {
        EXPECT_GE(row.auc[h], 0.0);
        EXPECT_LE(row.auc[h], 1.0);
      }
  }
  EXPECT_EQ(id.norms.kind, "id");
  EXPECT_EQ(trm.norms.kind, "token");
  EXPECT_EQ(id.tower_params, trm.tower_params);
  EXPECT_GT(trm.total_params, trm.tower_params);
  for (const auto& row : id.rows) EXPECT_EQ(row.l_g, 0.0);
  for (const auto& row : trm.rows) EXPECT_GT(row.l_g, 0.0);
}

TEST(RunVariant, AlignmentMismatchIsAConfigError) {
  EXPECT_THROW(run_variant(tiny_world(), &tiny_tokens(), tiny_config(),
                           resolve_variant("trm-mlp", {"w/o-align"}, 0.1), 1),
               ConfigError);
}

TEST(RunVariant, NeedsAHeldOutEpoch) {
  auto cfg = tiny_config();
  cfg.world.epochs = 1;
  const auto w = world::build_world(cfg.world);
  EXPECT_THROW(run_variant(w, nullptr, cfg, resolve_variant("id-mlp", {}, 0.1), 1), ConfigError);
}

TEST(ScalingSweep, CurvesEchoTheirPoints) {
  const auto cfg = tiny_config();
  const auto s = scaling_sweep(tiny_world(), tiny_tokens(), cfg, 6);
  for (const auto* c : {&s.id, &s.token}) {
    ASSERT_EQ(c->points.size(), cfg.sweep.widths.size());
    for (std::size_t i = 1; i < c->points.size(); ++i) EXPECT_GT(c->points[i].n, c->points[i - 1].n);
    EXPECT_TRUE(c->fixed_fit.has_value() || !c->errors.empty());
  }
  EXPECT_EQ(s.id.floor, s.risks.l_inf);
  EXPECT_EQ(s.token.floor, s.risks.l_inf_tok);
  EXPECT_EQ(s.token.variant, "gen-only");
  const json j = to_json(s);
  EXPECT_EQ(j["id"]["points"].size(), cfg.sweep.widths.size());
  EXPECT_EQ(j["token"]["points"][0]["loss"].get<double>(), s.token.points[0].loss);
}

TEST(TheoryChecks, DefaultSuitePasses) {
  const auto rep = verify_appendix(tiny_config());
  EXPECT_FALSE(rep.nothing_to_verify);
  EXPECT_TRUE(rep.passed());
  std::set<std::string> names;
  for (const auto& c : rep.checks) {
    names.insert(c.name);
    if (c.gating) {
      EXPECT_TRUE(c.passed) << c.name;
    }
  }
  EXPECT_TRUE(names.count("holder_certificate"));
  EXPECT_TRUE(names.count("floor_bound[depth=3]"));
  EXPECT_TRUE(names.count("moment_bound[depth=1]"));
  EXPECT_TRUE(names.count("beta_sd_monotone"));
  EXPECT_TRUE(names.count("decomposition"));
}

TEST(TheoryChecks, EmptyWorldHasNothingToVerify) {
  auto cfg = tiny_config();
  cfg.world.items = 0;
  const auto rep = verify_appendix(cfg);
  EXPECT_TRUE(rep.nothing_to_verify);
  EXPECT_TRUE(rep.checks.empty());
  EXPECT_TRUE(rep.passed());
}

TEST(TheoryChecks, ZeroedCentroidsStillSatisfyTheBounds) {
  auto cfg = tiny_config();
  cfg.verify.corrupt_quantizer = true;
  const auto rep = verify_appendix(cfg);
  std::size_t zeroed = 0, slack = 0;
  for (const auto& c : rep.checks) {
    if (c.name.find("[zeroed]") != std::string::npos) {
      ++zeroed;
      EXPECT_TRUE(c.passed) << c.name;
    }
    if (c.name.rfind("slack_shrinks", 0) == 0) {
      ++slack;
      EXPECT_FALSE(c.gating);
      EXPECT_TRUE(c.detail.contains("fitted_slack"));
      EXPECT_TRUE(c.detail.contains("zeroed_slack"));
    }
  }
  EXPECT_EQ(zeroed, 2 * cfg.tokenizer.layers.size());
  EXPECT_EQ(slack, cfg.tokenizer.layers.size());
  EXPECT_TRUE(rep.passed());
}

TEST(TheoryChecks, OversizedWorldHitsTheEnumerationCap) {
  auto cfg = tiny_config();
  cfg.world.items = 600;
  cfg.world.users = cfg.world.queries = 300;
  EXPECT_THROW(verify_appendix(cfg), CapacityError);
}
