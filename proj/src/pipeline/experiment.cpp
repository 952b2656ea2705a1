#include "trm/pipeline/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "trm/error.hpp"
#include "trm/nn/loss.hpp"
#include "trm/util/seed.hpp"

namespace trm::pipeline {

using nlohmann::json;

namespace {

// Seed sub-streams of one run seed.
enum : std::uint64_t { kAlignStream = 11, kRqStream, kTrainerStream, kHolderStream, kDecompStream };

constexpr std::size_t kEvalChunk = 1024;

std::string join(const std::vector<std::uint32_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<std::uint32_t> split_ids(const std::string& s) {
  std::vector<std::uint32_t> out;
  std::istringstream in(s);
  std::uint64_t x = 0;
  while (in >> x) out.push_back(static_cast<std::uint32_t>(x));
  if (!in.eof()) throw InputError("bad token list '" + s + "'");
  return out;
}

std::vector<std::uint32_t> global_ids(const rq::ResidualQuantizer& q,
                                      const std::vector<std::uint32_t>& codes) {
  std::vector<std::uint32_t> g(codes.size());
  for (std::size_t l = 0; l < codes.size(); ++l) g[l] = q.global_id(l, codes[l]);
  return g;
}

double metric_or_nan(auto&& f) {
  try {
    return f();
  } catch (const MetricError&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

nn::Tensor2 predict_all(const model::RankModel& m, std::span<const model::RankExample> data) {
  nn::Tensor2 out(data.size(), model::kHeads);
  for (std::size_t b = 0; b < data.size(); b += kEvalChunk) {
    const std::size_t n = std::min(kEvalChunk, data.size() - b);
    const nn::Tensor2 logits = m.predict(data.subspan(b, n));
    std::copy(logits.values().begin(), logits.values().end(), out.row(b).begin());
  }
  return out;
}

// Norm of each alive item's embedding-table representation: its id row, or
// its gen-token rows concatenated and scaled by 1/sqrt(L) (rows start at unit
// expected squared norm in both tables).
std::vector<double> norm_snapshot(const model::RankModel& m, const world::World& w,
                                  const Tokenization* tok, std::size_t epoch) {
  std::vector<double> norms;
  if (const auto* ids = m.id_table()) {
    for (auto id : w.catalog.alive(epoch)) norms.push_back(nn::l2_norm(ids->lookup(id)));
    return norms;
  }
  const auto* gen = m.gen_table();
  const auto& q = tok->quantizer;
  for (auto id : w.catalog.alive(epoch)) {
    const auto& codes = tok->tokens[id].gen_tokens;
    double sq = 0.0;
    for (std::size_t l = 0; l < codes.size(); ++l)
      for (double x : gen->lookup(q.global_id(l, codes[l]))) sq += x * x;
    norms.push_back(std::sqrt(sq / static_cast<double>(codes.size())));
  }
  return norms;
}

world::WorldConfig decomposition_world(const RunConfig& cfg) {
  world::WorldConfig c = cfg.world;
  c.items = cfg.verify.decomposition_items;
  c.users = c.queries = cfg.verify.decomposition_contexts;
  c.epochs = 1;
  return c;
}

rq::ResidualQuantizer zeroed(const rq::ResidualQuantizer& q) {
  std::vector<rq::Codebook> books;
  for (std::size_t l = 0; l < q.layers(); ++l) {
    rq::Codebook cb = q.codebook(l);
    cb.centroids.fill(0.0);
    books.push_back(std::move(cb));
  }
  return rq::ResidualQuantizer(std::move(books));
}

json fit_json(const analysis::ScalingFit& f) {
  return {{"l_inf", f.l_inf},         {"a", f.a},
          {"beta", f.beta},           {"beta_se", f.beta_se},
          {"residual_norm", f.residual_norm}, {"method", f.method},
          {"identifiable", f.identifiable}};
}

json points_json(const std::vector<analysis::ScalingPoint>& pts) {
  json a = json::array();
  for (const auto& p : pts) a.push_back({{"n", p.n}, {"loss", p.loss}});
  return a;
}

}  // namespace

std::size_t eval_epoch(const world::World& w) {
  if (w.cfg.epochs < 2) throw ConfigError("world.epochs must be >= 2: one training and one eval epoch");
  return w.cfg.epochs - 1;
}

Tokenization tokenize(const world::World& w, const TokenizerConfig& cfg, bool align,
                      std::uint64_t seed) {
  const std::size_t last_train = eval_epoch(w);
  Tokenization t;
  t.aligned = align;

  align::EmbeddingSource source = w.content;
  if (align) {
    const auto pairs = world::click_pairs(w.log, last_train, cfg.min_coclicks);
    align::AlignmentAdapter adapter(source.dim());
    t.align_losses = adapter.train(source, pairs.query_item, pairs.item_item, cfg.adapter,
                                   derive_seed(seed, kAlignStream));
    source = adapter.apply(source);
  }

  std::set<std::uint64_t> fit_ids;
  for (std::size_t e = 0; e < last_train; ++e)
    for (auto id : w.catalog.alive(e)) fit_ids.insert(id);
  nn::Tensor2 fit(fit_ids.size(), source.dim());
  std::size_t r = 0;
  for (auto id : fit_ids) {
    const auto v = source.get("item:" + std::to_string(id));
    std::copy(v.begin(), v.end(), fit.row(r++).begin());
  }
  t.fit_items = fit_ids.size();
  auto fitted = rq::rq_fit(fit, cfg.layers, derive_seed(seed, kRqStream));
  t.quantizer = std::move(fitted.quantizer);
  t.layer_mse = std::move(fitted.layer_mse);

  const auto& items = w.catalog.items;
  std::vector<bpe::Sequence> global(items.size());
  t.tokens.resize(items.size());
  for (const auto& item : items) {
    t.tokens[item.id] = rq::rq_encode(t.quantizer, source.get("item:" + std::to_string(item.id)));
    global[item.id] = global_ids(t.quantizer, t.tokens[item.id].gen_tokens);
  }

  std::vector<std::uint64_t> exposures(items.size(), 0);
  for (const auto& e : w.log.events)
    if (e.epoch < last_train) ++exposures[e.item];
  std::vector<bpe::Sequence> corpus;
  std::vector<std::uint64_t> counts;
  for (std::size_t id = 0; id < items.size(); ++id) {
    if (exposures[id] == 0) continue;
    corpus.push_back(global[id]);
    counts.push_back(exposures[id]);
  }
  t.merges = bpe::bpe_train(corpus, counts, static_cast<bpe::TokenId>(t.quantizer.vocab_size()),
                            cfg.bpe_budget, cfg.min_frequency);
  for (std::size_t id = 0; id < items.size(); ++id)
    t.tokens[id].mem_tokens = bpe::bpe_encode(t.merges, global[id]);
  return t;
}

json tokenize_report(const Tokenization& t) {
  bool monotone = true;
  for (std::size_t l = 1; l < t.layer_mse.size(); ++l)
    monotone = monotone && t.layer_mse[l] <= t.layer_mse[l - 1];
  std::set<std::vector<std::uint32_t>> distinct;
  std::size_t with_mem = 0;
  for (const auto& s : t.tokens) {
    distinct.insert(s.gen_tokens);
    with_mem += !s.mem_tokens.empty();
  }
  return {{"aligned", t.aligned},
          {"layer_sizes", t.quantizer.layer_sizes()},
          {"vocab_size", t.quantizer.vocab_size()},
          {"layer_mse", t.layer_mse},
          {"mse_non_increasing", monotone},
          {"fit_items", t.fit_items},
          {"items", t.tokens.size()},
          {"distinct_sequences", distinct.size()},
          {"merge_rules", t.merges.size()},
          {"bpe_budget", t.merges.budget()},
          {"bpe_min_frequency", t.merges.min_frequency()},
          {"items_with_mem_tokens", with_mem},
          {"align_first_loss", t.align_losses.empty() ? json() : json(t.align_losses.front())},
          {"align_last_loss", t.align_losses.empty() ? json() : json(t.align_losses.back())}};
}

std::vector<std::string> save_tokenization(const Tokenization& t, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  t.quantizer.save(dir / "quantizer.bin");
  t.merges.save(dir / "merges.txt");
  {
    std::ofstream out(dir / "tokens.csv");
    out << "item,gen_tokens,mem_tokens\n";
    for (std::size_t id = 0; id < t.tokens.size(); ++id)
      out << id << ',' << join(t.tokens[id].gen_tokens) << ',' << join(t.tokens[id].mem_tokens)
          << '\n';
    if (!out) throw InputError("cannot write " + (dir / "tokens.csv").string());
  }
  std::ofstream rep(dir / "tokenize_report.json");
  rep << tokenize_report(t).dump(2) << '\n';
  if (!rep) throw InputError("cannot write " + (dir / "tokenize_report.json").string());
  return {"quantizer.bin", "merges.txt", "tokens.csv", "tokenize_report.json"};
}

Tokenization load_tokenization(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw InputError("no token directory " + dir.string());
  Tokenization t;
  t.quantizer = rq::ResidualQuantizer::load(dir / "quantizer.bin");
  t.merges = bpe::MergeTable::load(dir / "merges.txt");
  std::ifstream rep(dir / "tokenize_report.json");
  if (!rep) throw InputError("missing " + (dir / "tokenize_report.json").string());
  try {
    const json j = json::parse(rep);
    t.aligned = j.at("aligned").get<bool>();
    t.layer_mse = j.at("layer_mse").get<std::vector<double>>();
    t.fit_items = j.at("fit_items").get<std::size_t>();
  } catch (const json::exception& e) {
    throw InputError("tokenize_report.json: " + std::string(e.what()));
  }

  std::ifstream in(dir / "tokens.csv");
  if (!in) throw InputError("missing " + (dir / "tokens.csv").string());
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto a = line.find(',');
    const auto b = line.find(',', a == std::string::npos ? a : a + 1);
    if (a == std::string::npos || b == std::string::npos)
      throw InputError("tokens.csv: bad line '" + line + "'");
    if (std::stoull(line.substr(0, a)) != t.tokens.size())
      throw InputError("tokens.csv: items out of order");
    rq::TokenSequence s;
    s.gen_tokens = split_ids(line.substr(a + 1, b - a - 1));
    s.mem_tokens = split_ids(line.substr(b + 1));
    if (s.gen_tokens.size() != t.quantizer.layers())
      throw InputError("tokens.csv: sequence length does not match the quantizer");
    t.tokens.push_back(std::move(s));
  }
  return t;
}

std::vector<model::RankExample> build_examples(const world::World& w, const Tokenization* tok,
                                               model::ItemPathway pathway, std::size_t first,
                                               std::size_t last) {
  if (pathway == model::ItemPathway::tokens && tok == nullptr)
    throw ConfigError("token pathway needs a tokenization");
  if (tok && tok->tokens.size() != w.catalog.items.size())
    throw InputError("tokenization covers " + std::to_string(tok->tokens.size()) +
                     " items, world has " + std::to_string(w.catalog.items.size()));
  std::vector<model::RankExample> out;
  for (const auto& e : w.log.events) {
    if (e.epoch < first || e.epoch >= last) continue;
    model::RankExample x;
    const auto q = w.bayes.query_weights.row(e.query);
    const auto u = w.bayes.user_weights.row(e.user);
    x.xq.assign(q.begin(), q.end());
    x.xu.assign(u.begin(), u.end());
    if (pathway == model::ItemPathway::id)
      x.item = e.item;
    else
      x.item = tok->tokens[e.item];
    x.ctr = e.ctr;
    x.real_play = e.real_play;
    x.query = e.query;
    x.age = static_cast<double>(w.log.age(e, w.catalog));
    out.push_back(std::move(x));
  }
  return out;
}

model::ModelConfig model_config(const RunConfig& cfg, const Variant& v, const world::World& w,
                                const Tokenization* tok) {
  const auto& m = cfg.model;
  model::ModelConfig mc;
  mc.pathway = v.pathway;
  mc.tower.kind = v.tower;
  mc.tower.hidden = m.tower_hidden;
  mc.tower.d_model = m.tower_d_model;
  mc.tower.layers = m.tower_layers;
  mc.tower.heads = m.tower_heads;
  mc.tower.ffn = 2 * m.tower_d_model;
  mc.query_dim = w.bayes.query_weights.cols();
  mc.user_dim = w.bayes.user_weights.cols();
  mc.item_dim = m.item_dim;
  mc.id_buckets = m.id_buckets;
  if (v.pathway == model::ItemPathway::tokens) {
    if (!tok) throw ConfigError("variant " + v.name + " needs a tokenization");
    mc.codebook_sizes = tok->quantizer.layer_sizes();
  }
  mc.gen_dim = m.gen_dim;
  mc.mem_buckets = m.mem_buckets;
  mc.mem_dim = m.mem_dim;
  mc.hybrid.deep_hidden = m.deep_hidden;
  mc.hybrid.dropout = m.dropout;
  mc.hybrid.pooling = m.pooling == "mean" ? embed::Pooling::mean : embed::Pooling::sum;
  mc.hybrid.use_wide = v.wide;
  mc.ntp = v.ntp;
  mc.gen.n_q = m.n_q;
  mc.gen.n_u = m.n_u;
  mc.gen.layers = m.gen_transformer_layers;
  mc.gen.heads = m.gen_heads;
  mc.gen.d_model = m.gen_d_model;
  mc.gen.ffn = 2 * m.gen_d_model;
  mc.gen.positional = m.positional;
  return mc;
}

double population_loss(const model::RankModel& m, const world::World& w, const Tokenization* tok) {
  const std::size_t epoch = eval_epoch(w);
  const auto pop = world::exposure_population(w.catalog, epoch);
  const std::size_t users = w.bayes.users(), queries = w.bayes.queries();
  std::vector<model::RankExample> batch;
  std::vector<double> target, weight;
  double loss = 0.0;
  auto flush = [&] {
    if (batch.empty()) return;
    const nn::Tensor2 logits = m.predict(batch);
    for (std::size_t i = 0; i < batch.size(); ++i)
      loss += weight[i] * nn::bce_from_logit(target[i], logits(i, 0));
    batch.clear();
    target.clear();
    weight.clear();
  };
  for (std::size_t i = 0; i < pop.ids.size(); ++i) {
    const std::uint64_t id = pop.ids[i];
    for (std::size_t u = 0; u < users; ++u)
      for (std::size_t q = 0; q < queries; ++q) {
        model::RankExample x;
        const auto qr = w.bayes.query_weights.row(q);
        const auto ur = w.bayes.user_weights.row(u);
        x.xq.assign(qr.begin(), qr.end());
        x.xu.assign(ur.begin(), ur.end());
        if (m.config().pathway == model::ItemPathway::id)
          x.item = id;
        else
          x.item = tok->tokens.at(id);
        batch.push_back(std::move(x));
        target.push_back(w.bayes.prob(u, q, pop.z.row(i)));
        weight.push_back(pop.weight[i] / static_cast<double>(users * queries));
        if (batch.size() == kEvalChunk) flush();
      }
  }
  flush();
  return loss;
}

RunResult run_variant(const world::World& w, const Tokenization* tok, const RunConfig& cfg,
                      const Variant& v, std::uint64_t seed, const RunOptions& opts) {
  const std::size_t last = eval_epoch(w);
  if (v.pathway == model::ItemPathway::tokens && tok && tok->aligned != v.align)
    throw ConfigError("variant " + v.name + (v.align ? " needs aligned" : " needs unaligned") +
                      " tokens");
  RunConfig local = cfg;
  if (opts.tower_hidden) local.model.tower_hidden = *opts.tower_hidden;
  model::RankModel m(model_config(local, v, w, tok), seed);

  RunResult res;
  res.variant = v.name;
  res.seed = seed;
  for (const auto& name : m.params().names())
    if (name.rfind("tower.", 0) == 0) res.tower_params += m.params().get(name).count();
  res.total_params = m.params().total_count();

  const auto eval = build_examples(w, tok, v.pathway, last, last + 1);
  model::TrainConfig tc;
  tc.batch = cfg.train.batch;
  tc.learning_rate = cfg.train.learning_rate;
  tc.lambda = v.lambda;
  model::Trainer trainer(m, tc, derive_seed(seed, kTrainerStream));

  std::vector<std::vector<double>> snapshots{norm_snapshot(m, w, tok, 0)};
  nn::Tensor2 logits;
  for (std::size_t epoch = 0; epoch < last; ++epoch) {
    const auto data = build_examples(w, tok, v.pathway, epoch, epoch + 1);
    EvalRow row;
    row.epoch = epoch;
    if (!data.empty()) {
      for (std::size_t p = 0; p < cfg.train.passes; ++p) {
        const auto e = trainer.run_epoch(data);
        row.l_d += e.l_d / cfg.train.passes;
        row.l_g += e.l_g / cfg.train.passes;
      }
    }
    snapshots.push_back(norm_snapshot(m, w, tok, epoch + 1));
    if (!eval.empty()) {
      logits = predict_all(m, eval);
      std::vector<double> scores(eval.size());
      std::vector<int> labels(eval.size());
      std::vector<std::uint64_t> queries(eval.size());
      for (std::size_t h = 0; h < model::kHeads; ++h) {
        for (std::size_t i = 0; i < eval.size(); ++i) {
          scores[i] = logits(i, h);
          labels[i] = h == 0 ? eval[i].ctr : eval[i].real_play;
          queries[i] = eval[i].query;
        }
        row.auc[h] = metric_or_nan([&] { return analysis::auc(scores, labels); });
        row.qauc[h] = metric_or_nan([&] { return analysis::qauc(scores, labels, queries).value; });
      }
    }
    res.rows.push_back(row);
  }
  res.norms = analysis::norm_variance(snapshots, v.pathway == model::ItemPathway::id ? "id" : "token");

  if (!eval.empty()) {
    std::vector<double> ages(eval.size()), scores(eval.size());
    std::vector<int> labels(eval.size());
    for (std::size_t i = 0; i < eval.size(); ++i) {
      ages[i] = eval[i].age;
      scores[i] = logits(i, 0);
      labels[i] = eval[i].ctr;
    }
    res.buckets = analysis::lifetime_buckets(ages, scores, labels, cfg.eval.age_edges,
                                             cfg.eval.min_bucket_count);
  }
  if (opts.population_loss) res.population_loss = population_loss(m, w, tok);
  if (!opts.checkpoint.empty()) m.params().save(opts.checkpoint);
  return res;
}

std::vector<std::size_t> token_cells(const world::Population& pop, const Tokenization& tok) {
  std::map<std::vector<std::uint32_t>, std::size_t> index;
  std::vector<std::size_t> cells;
  for (auto id : pop.ids) {
    const auto& g = tok.tokens.at(id).gen_tokens;
    cells.push_back(index.emplace(g, index.size()).first->second);
  }
  return cells;
}

std::optional<bool> SweepResult::token_steeper() const {
  if (!token.fixed_fit || !id.fixed_fit) return std::nullopt;
  return token.fixed_fit->beta > id.fixed_fit->beta;
}

SweepResult scaling_sweep(const world::World& w, const Tokenization& tok, const RunConfig& cfg,
                          std::uint64_t seed) {
  SweepResult s;
  s.seed = seed;
  const auto pop = world::exposure_population(w.catalog, eval_epoch(w));
  s.risks = world::bayes_risks(w.bayes, pop, token_cells(pop, tok));

  auto sweep = [&](const std::string& name, double floor, SweepCurve& curve) {
    const Variant v = resolve_variant(name, {}, cfg.model.lambda);
    curve.variant = v.name;
    curve.floor = floor;
    const Tokenization* t = v.pathway == model::ItemPathway::tokens ? &tok : nullptr;
    for (auto width : cfg.sweep.widths) {
      RunOptions opts;
      opts.tower_hidden = std::vector<std::size_t>{width, width};
      opts.population_loss = true;
      const auto r = run_variant(w, t, cfg, v, seed, opts);
      curve.points.push_back({static_cast<double>(r.tower_params), r.population_loss, std::nullopt});
    }
    try {
      curve.fixed_fit = analysis::fit_power_law_fixed_floor(curve.points, floor);
    } catch (const std::exception& e) {
      curve.errors.push_back(std::string("fixed-floor fit: ") + e.what());
    }
    try {
      curve.joint_fit = analysis::fit_power_law(curve.points);
    } catch (const std::exception& e) {
      curve.errors.push_back(std::string("joint fit: ") + e.what());
    }
  };
  sweep(cfg.sweep.id_variant, s.risks.l_inf, s.id);
  sweep(cfg.sweep.token_variant, s.risks.l_inf_tok, s.token);
  return s;
}

json to_json(const SweepResult& s) {
  auto curve = [](const SweepCurve& c) {
    return json{{"variant", c.variant},
                {"floor", c.floor},
                {"points", points_json(c.points)},
                {"fixed_floor_fit", c.fixed_fit ? fit_json(*c.fixed_fit) : json()},
                {"joint_fit", c.joint_fit ? fit_json(*c.joint_fit) : json()},
                {"errors", c.errors}};
  };
  const auto steeper = s.token_steeper();
  return {{"seed", s.seed},
          {"l_inf", s.risks.l_inf},
          {"l_inf_tok", s.risks.l_inf_tok},
          {"delta_quant", s.risks.delta_quant},
          {"cells", s.risks.cells},
          {"id", curve(s.id)},
          {"token", curve(s.token)},
          {"beta_token_gt_id", steeper ? json(*steeper) : json()}};
}

bool VerifyReport::passed() const {
  return std::all_of(checks.begin(), checks.end(),
                     [](const Check& c) { return c.passed || !c.gating; });
}

VerifyReport verify_appendix(const RunConfig& cfg) {
  VerifyReport rep;
  if (cfg.world.items == 0 || cfg.world.epochs == 0) {
    rep.nothing_to_verify = true;
    return rep;
  }
  const auto& wc = cfg.world;
  wc.validate();
  const auto bayes = world::build_bayes(wc);
  const auto catalog = world::gen_catalog(wc);
  const auto pop = world::exposure_population(catalog, wc.epochs - 1);

  const auto cert = world::holder_certificate(bayes, cfg.verify.holder_pairs,
                                              derive_seed(wc.seed, kHolderStream));
  rep.checks.push_back({"holder_certificate", cert.passed(), true,
                        {{"pairs", cert.pairs}, {"violations", cert.violations},
                         {"max_ratio", cert.max_ratio}}});

  auto bound_checks = [&](const rq::ResidualQuantizer& q, const std::string& tag) {
    const auto fb = analysis::verify_floor_bound(bayes, pop, q);
    rep.checks.push_back({"floor_bound" + tag, fb.holds, true,
                          {{"delta_quant", fb.delta_quant}, {"delta_s", fb.delta_s},
                           {"bound", fb.bound}, {"slack", fb.slack}}});
    const auto rows = analysis::verify_moment_bound(q, pop.z, cfg.verify.s_grid, pop.weight);
    json table = json::array();
    bool all = true;
    for (const auto& r : rows) {
      table.push_back({{"s", r.s}, {"delta_s", r.delta_s}, {"bound", r.bound}, {"holds", r.holds}});
      all = all && r.holds;
    }
    rep.checks.push_back({"moment_bound" + tag, all, true, table});
    return fb;
  };

  const auto& layers = cfg.tokenizer.layers;
  for (std::size_t depth = 1; depth <= layers.size(); ++depth) {
    const std::vector<std::size_t> sizes(layers.begin(), layers.begin() + depth);
    const auto q = rq::rq_fit(pop.z, sizes, derive_seed(wc.seed, kRqStream)).quantizer;
    const std::string tag = "[depth=" + std::to_string(depth) + "]";
    const auto fitted = bound_checks(q, tag);
    if (cfg.verify.corrupt_quantizer) {
      const auto corrupt = bound_checks(zeroed(q), tag + "[zeroed]");
      rep.checks.push_back({"slack_shrinks" + tag, corrupt.slack < fitted.slack, false,
                            {{"fitted_slack", fitted.slack}, {"zeroed_slack", corrupt.slack},
                             {"fitted_bound", fitted.bound}, {"zeroed_bound", corrupt.bound}}});
    }
  }

  rep.checks.push_back({"beta_sd_monotone",
                        analysis::beta_sd_monotone(cfg.verify.s_grid, cfg.verify.d_grid), true,
                        {{"s_grid", cfg.verify.s_grid}, {"d_grid", cfg.verify.d_grid}}});

  const auto dw = decomposition_world(cfg);
  const auto db = world::build_bayes(dw);
  const auto dpop = world::exposure_population(world::gen_catalog(dw), 0);
  const auto dq = rq::rq_fit(dpop.z, cfg.verify.decomposition_layers,
                             derive_seed(wc.seed, kDecompStream))
                      .quantizer;
  analysis::DecompositionConfig dc;
  dc.features = cfg.verify.decomposition_features;
  dc.seed = derive_seed(wc.seed, kDecompStream + 1);
  const auto d = analysis::verify_decomposition(db, dpop, dq, dc);
  rep.checks.push_back({"decomposition", d.holds, cfg.verify.gate_decomposition,
                        {{"l_inf", d.risks.l_inf},
                         {"l_inf_tok", d.risks.l_inf_tok},
                         {"delta_quant", d.risks.delta_quant},
                         {"full", points_json(d.full)},
                         {"quantized", points_json(d.quantized)},
                         {"fit_full", fit_json(d.fit_full)},
                         {"fit_joint", fit_json(d.fit_joint)},
                         {"fit_shifted", fit_json(d.fit_shifted)},
                         {"beta_gap", d.beta_gap},
                         {"tolerance", d.tolerance}}});
  return rep;
}

json to_json(const VerifyReport& r) {
  json checks = json::array();
  for (const auto& c : r.checks)
    checks.push_back({{"name", c.name}, {"passed", c.passed}, {"gating", c.gating},
                      {"detail", c.detail}});
  return {{"passed", r.passed()}, {"nothing_to_verify", r.nothing_to_verify}, {"checks", checks}};
}

}  // namespace trm::pipeline
