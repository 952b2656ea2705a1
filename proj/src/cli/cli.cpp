#include "trm/cli/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "trm/error.hpp"
#include "trm/pipeline/config.hpp"
#include "trm/pipeline/experiment.hpp"
#include "trm/util/seed.hpp"
#include "trm/world/world_json.hpp"

namespace trm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum : std::uint64_t { kTokenizerStream = 1 };

struct Options {
  std::string command;
  fs::path config;
  fs::path out;
  std::uint64_t seed = 0;
  fs::path world;
  fs::path tokens;
  std::string variant;
  std::vector<std::string> ablations;
};

// A run directory: every file written through it is hashed into
// manifest.json, except timing.json.
class RunDir {
 public:
  RunDir(const Options& opt, const pipeline::RunConfig& cfg) : opt_(opt), root_(opt.out) {
    fs::create_directories(root_);
    resolved_ = pipeline::to_json(cfg);
    write_json("resolved_config.json", resolved_);
  }

  const fs::path& root() const { return root_; }

  void write_json(const std::string& name, const json& j) {
    write_text(name, j.dump(2) + "\n");
  }
  void write_text(const std::string& name, const std::string& text) {
    const fs::path p = root_ / name;
    fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary);
    f << text;
    if (!f) throw InputError("cannot write " + p.string());
    files_.push_back(name);
  }
  void add(const std::string& name) { files_.push_back(name); }

  void finish() {
    json files = json::object();
    std::sort(files_.begin(), files_.end());
    files_.erase(std::unique(files_.begin(), files_.end()), files_.end());
    for (const auto& f : files_) files[f] = hex(world::file_hash(root_ / f));
    const std::string resolved = resolved_.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : resolved) h = (h ^ c) * 0x100000001b3ULL;
    std::ofstream m(root_ / "manifest.json");
    m << json{{"command", opt_.command},
              {"seed", opt_.seed},
              {"config_hash", hex(h)},
              {"files", files}}
             .dump(2)
      << "\n";
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::ofstream t(root_ / "timing.json");
    t << json{{"seconds", secs}}.dump(2) << "\n";
  }

  static std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
    return buf;
  }

 private:
  Options opt_;
  fs::path root_;
  json resolved_;
  std::vector<std::string> files_;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string num(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(); }

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd r;
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return r;
}

pipeline::RunConfig resolve_config(const Options& opt) {
  pipeline::RunConfig cfg = pipeline::load_run_config(opt.config);
  cfg.world.seed = opt.seed;
  if (!opt.variant.empty()) cfg.model.variant = opt.variant;
  for (const auto& a : opt.ablations) cfg.model.ablations.push_back(a);
  pipeline::resolve_variant(cfg.model.variant, cfg.model.ablations, cfg.model.lambda);
  return cfg;
}

// The world from --world, else built from the config (world.seed = --seed).
world::World obtain_world(const Options& opt, pipeline::RunConfig& cfg) {
  if (opt.world.empty()) return world::build_world(cfg.world);
  if (!fs::is_directory(opt.world)) throw InputError("world directory " + opt.world.string() + " does not exist");
  world::World w = world::load_world(opt.world);
  cfg.world = w.cfg;
  return w;
}

std::vector<std::uint64_t> training_seeds(const Options& opt, const pipeline::RunConfig& cfg) {
  return cfg.train.seeds.empty() ? std::vector<std::uint64_t>{opt.seed} : cfg.train.seeds;
}

pipeline::Tokenization obtain_tokens(const Options& opt, const pipeline::RunConfig& cfg,
                                     const world::World& w, bool align, RunDir& dir) {
  if (!opt.tokens.empty()) return pipeline::load_tokenization(opt.tokens);
  auto tok = pipeline::tokenize(w, cfg.tokenizer, align, derive_seed(opt.seed, kTokenizerStream));
  for (const auto& f : pipeline::save_tokenization(tok, dir.root() / "tokens")) dir.add("tokens/" + f);
  return tok;
}

int cmd_simulate(const Options& opt, std::ostream& out) {
  auto cfg = resolve_config(opt);
  const auto w = world::build_world(cfg.world);
  const auto cert = world::holder_certificate(w.bayes, cfg.verify.holder_pairs,
                                              derive_seed(opt.seed, 7));
  RunDir dir(opt, cfg);
  for (const auto& f : world::export_world(w, dir.root(), cert)) dir.add(f);
  dir.finish();
  out << "simulate: " << w.catalog.items.size() << " items, " << w.log.events.size()
      << " events; Hoelder certificate " << (cert.passed() ? "passed" : "FAILED") << " ("
      << cert.violations << "/" << cert.pairs << " violations)\n";
  return cert.passed() ? kOk : kVerificationFailure;
}

int cmd_tokenize(const Options& opt, std::ostream& out) {
  auto cfg = resolve_config(opt);
  const auto w = obtain_world(opt, cfg);
  const auto v = pipeline::resolve_variant(cfg.model.variant, cfg.model.ablations, cfg.model.lambda);
  const bool align = v.pathway == model::ItemPathway::id || v.align;
  RunDir dir(opt, cfg);
  const auto tok = pipeline::tokenize(w, cfg.tokenizer, align, derive_seed(opt.seed, kTokenizerStream));
  for (const auto& f : pipeline::save_tokenization(tok, dir.root())) dir.add(f);
  dir.finish();
  const auto rep = pipeline::tokenize_report(tok);
  out << "tokenize: vocab " << tok.quantizer.vocab_size() << ", " << tok.merges.size()
      << " merge rules, " << rep["distinct_sequences"] << " distinct sequences, residual MSE "
      << (rep["mse_non_increasing"].get<bool>() ? "non-increasing" : "INCREASING") << "\n";
  return kOk;
}

json bucket_json(const std::vector<analysis::BucketAuc>& bs) {
  json a = json::array();
  for (const auto& b : bs)
    a.push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count},
                 {"auc", b.auc ? json(*b.auc) : json()}, {"status", analysis::to_string(b.status)}});
  return a;
}

int cmd_train(const Options& opt, std::ostream& out) {
  auto cfg = resolve_config(opt);
  const auto w = obtain_world(opt, cfg);
  const auto v = pipeline::resolve_variant(cfg.model.variant, cfg.model.ablations, cfg.model.lambda);
  RunDir dir(opt, cfg);
  std::optional<pipeline::Tokenization> tok;
  if (v.pathway == model::ItemPathway::tokens) tok = obtain_tokens(opt, cfg, w, v.align, dir);

  std::string csv = "run_id,seed,epoch,head,auc,qauc,l_d,l_g\n";
  json runs = json::array();
  std::map<std::string, std::vector<double>> finals;
  static const char* heads[model::kHeads] = {"ctr", "real_play"};
  for (auto seed : training_seeds(opt, cfg)) {
    pipeline::RunOptions ro;
    ro.population_loss = true;
    const std::string ckpt = "checkpoint_" + std::to_string(seed) + ".bin";
    ro.checkpoint = dir.root() / ckpt;
    const auto r = pipeline::run_variant(w, tok ? &*tok : nullptr, cfg, v, seed, ro);
    dir.add(ckpt);
    const std::string id = v.name + "@" + std::to_string(seed);
    for (const auto& row : r.rows)
      for (std::size_t h = 0; h < model::kHeads; ++h)
        csv += id + "," + std::to_string(seed) + "," + std::to_string(row.epoch) + "," + heads[h] +
               "," + num(row.auc[h]) + "," + num(row.qauc[h]) + "," + num(row.l_d) + "," +
               num(row.l_g) + "\n";
    const auto& last = r.rows.back();
    for (std::size_t h = 0; h < model::kHeads; ++h) {
      finals[std::string("auc_") + heads[h]].push_back(last.auc[h]);
      finals[std::string("qauc_") + heads[h]].push_back(last.qauc[h]);
    }
    finals["l_d"].push_back(last.l_d);
    finals["l_g"].push_back(last.l_g);
    finals["population_loss"].push_back(r.population_loss);
    finals["norm_variance_mean_abs_delta"].push_back(r.norms.mean_abs_delta());
    runs.push_back({{"run_id", id},
                    {"seed", seed},
                    {"tower_params", r.tower_params},
                    {"total_params", r.total_params},
                    {"population_loss", r.population_loss},
                    {"lifetime_buckets", bucket_json(r.buckets)},
                    {"norm_variance", {{"kind", r.norms.kind},
                                       {"variance", r.norms.variance},
                                       {"deltas", r.norms.deltas},
                                       {"mean_abs_delta", r.norms.mean_abs_delta()}}}});
    out << id << ": auc " << num(last.auc[0]) << " qauc " << num(last.qauc[0]) << " L_d "
        << num(last.l_d) << " L_g " << num(last.l_g) << "\n";
  }
  json agg = json::object();
  for (const auto& [k, xs] : finals) {
    const auto ms = mean_std(xs);
    agg[k] = {{"mean", finite_or_null(ms.mean)}, {"std", finite_or_null(ms.std)}, {"n", xs.size()}};
  }
  dir.write_text("metrics.csv", csv);
  dir.write_json("summary.json", {{"variant", v.name},
                                  {"lambda", v.lambda},
                                  {"ntp", v.ntp},
                                  {"wide", v.wide},
                                  {"aligned", v.align},
                                  {"runs", runs},
                                  {"final_epoch", agg}});
  dir.finish();
  return kOk;
}

int cmd_sweep(const Options& opt, std::ostream& out) {
  auto cfg = resolve_config(opt);
  const auto w = obtain_world(opt, cfg);
  RunDir dir(opt, cfg);
  const auto tv = pipeline::resolve_variant(cfg.sweep.token_variant, {}, cfg.model.lambda);
  const auto tok = obtain_tokens(opt, cfg, w, tv.align, dir);
  json results = json::array();
  std::string csv = "seed,variant,n,loss\n";
  std::size_t steeper = 0, compared = 0;
  for (auto seed : training_seeds(opt, cfg)) {
    const auto s = pipeline::scaling_sweep(w, tok, cfg, seed);
    for (const auto* c : {&s.id, &s.token})
      for (const auto& p : c->points)
        csv += std::to_string(seed) + "," + c->variant + "," + num(p.n) + "," + num(p.loss) + "\n";
    results.push_back(pipeline::to_json(s));
    const auto st = s.token_steeper();
    if (st) {
      ++compared;
      steeper += *st;
    }
    out << "seed " << seed << ": beta_id "
        << (s.id.fixed_fit ? num(s.id.fixed_fit->beta) : "fit failed") << ", beta_tok "
        << (s.token.fixed_fit ? num(s.token.fixed_fit->beta) : "fit failed") << "\n";
  }
  dir.write_text("sweep_points.csv", csv);
  dir.write_json("sweep.json", {{"widths", cfg.sweep.widths},
                                {"seeds", results},
                                {"beta_token_gt_id", steeper},
                                {"compared", compared}});
  dir.finish();
  out << "beta_tok > beta_id on " << steeper << "/" << compared << " seeds\n";
  return kOk;
}

int cmd_verify(const Options& opt, std::ostream& out) {
  auto cfg = resolve_config(opt);
  RunDir dir(opt, cfg);
  pipeline::VerifyReport rep;
  try {
    rep = pipeline::verify_appendix(cfg);
  } catch (const CapacityError& e) {
    throw CapacityError(std::string(e.what()) +
                        "; reduce world.items, world.users or world.queries so that items x "
                        "contexts fits the enumeration cap");
  }
  dir.write_json("verify_report.json", pipeline::to_json(rep));
  std::string csv = "check,passed,gating\n";
  for (const auto& c : rep.checks)
    csv += c.name + "," + (c.passed ? "1" : "0") + "," + (c.gating ? "1" : "0") + "\n";
  dir.write_text("checks.csv", csv);
  dir.finish();
  if (rep.nothing_to_verify) {
    out << "nothing to verify: the world is empty\n";
    return kOk;
  }
  for (const auto& c : rep.checks)
    out << (c.passed ? "PASS " : "FAIL ") << c.name << (c.gating ? "" : " (reported only)") << "\n";
  return rep.passed() ? kOk : kVerificationFailure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Semantic-token ranking lab", "trm_lab"};
  app.require_subcommand(1);
  Options opt;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "run config (JSON)")->required();
    sub->add_option("--out", opt.out, "output directory")->required();
    sub->add_option("--seed", opt.seed, "master seed")->required();
  };
  auto* sim = app.add_subcommand("simulate", "generate a synthetic world");
  auto* tok = app.add_subcommand("tokenize", "fit gen-tokens and mem-tokens");
  auto* train = app.add_subcommand("train", "train a model variant");
  auto* sweep = app.add_subcommand("scaling-sweep", "tower-size sweep for ID and token models");
  auto* verify = app.add_subcommand("verify-appendix", "theory checks on the configured world");
  for (auto* s : {sim, tok, train, sweep, verify}) add_common(s);
  for (auto* s : {tok, train, sweep})
    s->add_option("--world", opt.world, "world directory written by simulate");
  for (auto* s : {train, sweep})
    s->add_option("--tokens", opt.tokens, "token directory written by tokenize");
  train->add_option("--variant", opt.variant, "model variant");
  train->add_option("--ablation", opt.ablations, "w/o-align, w/o-hybrid or w/o-ntp (repeatable)");
  tok->add_option("--variant", opt.variant, "variant whose alignment setting to use");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return kUsageError;
  }
  opt.command = app.get_subcommands().front()->get_name();

  try {
    if (opt.command == "simulate") return cmd_simulate(opt, out);
    if (opt.command == "tokenize") return cmd_tokenize(opt, out);
    if (opt.command == "train") return cmd_train(opt, out);
    if (opt.command == "scaling-sweep") return cmd_sweep(opt, out);
    return cmd_verify(opt, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsageError;
  } catch (const InputError& e) {
    err << "input error: " << e.what() << "\n";
    return kUsageError;
  } catch (const CapacityError& e) {
    err << "capacity error: " << e.what() << "\n";
    return kUsageError;
  } catch (const TrainingError& e) {
    err << "training failed: " << e.what() << "\n";
    return kVerificationFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kVerificationFailure;
  }
}

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace trm::cli
