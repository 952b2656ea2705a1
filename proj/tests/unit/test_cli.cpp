#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "trm/cli/cli.hpp"
#include "trm/pipeline/config.hpp"
#include "trm/world/world.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using trm::cli::kOk;
using trm::cli::kUsageError;
using trm::cli::kVerificationFailure;

namespace {

const std::string kTiny = std::string(TRM_CONFIG_DIR) + "/tiny.json";

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = trm::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("trm_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

// Tiny config with overrides merged in.
std::string config_with(const std::string& name, const json& patch) {
  json j = read_json(kTiny);
  j.merge_patch(patch);
  const auto p = fs::temp_directory_path() / ("trm_cli_cfg_" + name + ".json");
  std::ofstream(p) << j.dump(2);
  return p.string();
}

std::size_t count_lines(const std::string& s) { return std::count(s.begin(), s.end(), '\n'); }

// Every file in the manifest except timing.json must match byte for byte.
void expect_same_outputs(const fs::path& a, const fs::path& b) {
  const auto ma = read_json(a / "manifest.json");
  EXPECT_EQ(ma, read_json(b / "manifest.json"));
  for (const auto& [name, hash] : ma["files"].items())
    EXPECT_EQ(slurp(a / name), slurp(b / name)) << name;
}

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run({"--help"}).code, kOk);
  EXPECT_NE(run({"--help"}).out.find("trm_lab"), std::string::npos);
  EXPECT_EQ(run({}).code, kUsageError);
  EXPECT_EQ(run({"frobnicate"}).code, kUsageError);
  const auto out = scratch("usage");
  EXPECT_EQ(run({"simulate", "--config", kTiny, "--out", out.string()}).code, kUsageError);
  EXPECT_EQ(run({"simulate", "--config", kTiny, "--out", out.string(), "--seed", "-3"}).code,
            kUsageError);
  EXPECT_EQ(run({"simulate", "--config", "/nonexistent.json", "--out", out.string(), "--seed", "1"}).code,
            kUsageError);
  const auto bad = config_with("bad", {{"model", {{"widths", 1}}}});
  const auto r = run({"simulate", "--config", bad, "--out", out.string(), "--seed", "1"});
  EXPECT_EQ(r.code, kUsageError);
  EXPECT_NE(r.err.find("unknown key 'widths'"), std::string::npos);
  EXPECT_EQ(run({"train", "--config", kTiny, "--out", out.string(), "--seed", "1", "--variant",
                 "id-mlp", "--ablation", "w/o-ntp"})
                .code,
            kUsageError);
  EXPECT_EQ(run({"train", "--config", kTiny, "--out", out.string(), "--seed", "1", "--world",
                 (out / "missing").string()})
                .code,
            kUsageError);
}

TEST(Cli, SimulateWritesAReproducibleWorld) {
  const auto a = scratch("sim_a"), b = scratch("sim_b");
  const auto r = run({"simulate", "--config", kTiny, "--out", a.string(), "--seed", "11"});
  ASSERT_EQ(r.code, kOk) << r.err;
  ASSERT_EQ(run({"simulate", "--config", kTiny, "--out", b.string(), "--seed", "11"}).code, kOk);
  expect_same_outputs(a, b);
  EXPECT_TRUE(fs::exists(a / "resolved_config.json"));
  EXPECT_TRUE(fs::exists(a / "timing.json"));
  EXPECT_EQ(read_json(a / "manifest.json")["seed"], 11);

  auto cfg = trm::pipeline::load_run_config(kTiny);
  cfg.world.seed = 11;
  const auto w = trm::world::build_world(cfg.world);
  const auto s = read_json(a / "summary.json");
  EXPECT_EQ(s["items_total"], w.catalog.items.size());
  EXPECT_EQ(s["events"], w.log.events.size());
  EXPECT_EQ(s["churn"]["retired_per_epoch"], w.catalog.retired_per_epoch);
  EXPECT_TRUE(s["holder_certificate_passed"].get<bool>());

  const auto c = scratch("sim_c");
  ASSERT_EQ(run({"simulate", "--config", kTiny, "--out", c.string(), "--seed", "12"}).code, kOk);
  EXPECT_NE(read_json(c / "summary.json")["events_fnv1a"], s["events_fnv1a"]);
}

TEST(Cli, TokenizeThenTrainFromSavedArtifacts) {
  const auto world = scratch("tt_world"), tokens = scratch("tt_tokens"), again = scratch("tt_again");
  ASSERT_EQ(run({"simulate", "--config", kTiny, "--out", world.string(), "--seed", "3"}).code, kOk);
  const auto r = run({"tokenize", "--config", kTiny, "--out", tokens.string(), "--seed", "3",
                      "--world", world.string()});
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto rep = read_json(tokens / "tokenize_report.json");
  EXPECT_EQ(rep["vocab_size"], 24);
  const std::size_t items = read_json(world / "summary.json")["items_total"];
  EXPECT_EQ(rep["items"], items);
  EXPECT_TRUE(rep["mse_non_increasing"].get<bool>());
  EXPECT_LE(rep["merge_rules"].get<std::size_t>(), 32u);
  EXPECT_EQ(count_lines(slurp(tokens / "tokens.csv")), items + 1);
  ASSERT_EQ(run({"tokenize", "--config", kTiny, "--out", again.string(), "--seed", "3", "--world",
                 world.string()})
                .code,
            kOk);
  EXPECT_EQ(slurp(tokens / "tokens.csv"), slurp(again / "tokens.csv"));

  const auto train = scratch("tt_train");
  const auto t = run({"train", "--config", kTiny, "--out", train.string(), "--seed", "3", "--world",
                      world.string(), "--tokens", tokens.string()});
  ASSERT_EQ(t.code, kOk) << t.err;
  EXPECT_FALSE(fs::exists(train / "tokens"));
  EXPECT_TRUE(fs::exists(train / "checkpoint_3.bin"));

  // Tokens fitted with alignment cannot feed a w/o-align run.
  const auto mismatch = scratch("tt_mismatch");
  EXPECT_EQ(run({"train", "--config", kTiny, "--out", mismatch.string(), "--seed", "3", "--world",
                 world.string(), "--tokens", tokens.string(), "--ablation", "w/o-align"})
                .code,
            kUsageError);
}

TEST(Cli, BudgetZeroStillTrains) {
  const auto cfg = config_with("budget0", {{"tokenizer", {{"bpe_budget", 0}}}});
  const auto tokens = scratch("b0_tokens"), train = scratch("b0_train");
  ASSERT_EQ(run({"tokenize", "--config", cfg, "--out", tokens.string(), "--seed", "2"}).code, kOk);
  EXPECT_EQ(read_json(tokens / "tokenize_report.json")["merge_rules"], 0);
  EXPECT_EQ(count_lines(slurp(tokens / "merges.txt")), 1u);  // header only
  const auto r = run({"train", "--config", cfg, "--out", train.string(), "--seed", "2", "--tokens",
                      tokens.string()});
  EXPECT_EQ(r.code, kOk) << r.err;
}

TEST(Cli, TrainSmokeWritesMetrics) {
  const auto out = scratch("train");
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = run({"train", "--config", kTiny, "--out", out.string(), "--seed", "4"});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_LT(secs, 60.0);
  const auto csv = slurp(out / "metrics.csv");
  EXPECT_EQ(csv.rfind("run_id,seed,epoch,head,auc,qauc,l_d,l_g\n", 0), 0u);
  EXPECT_EQ(count_lines(csv), 1u + 2 * 2);  // two training epochs, two heads
  EXPECT_NE(csv.find("trm-mlp@4,4,1,real_play,"), std::string::npos);
  const auto s = read_json(out / "summary.json");
  EXPECT_EQ(s["variant"], "trm-mlp");
  EXPECT_DOUBLE_EQ(s["lambda"].get<double>(), 0.1);
  const auto& f = s["final_epoch"];
  for (const char* k : {"auc_ctr", "auc_real_play", "qauc_ctr", "l_d", "l_g", "population_loss"}) {
    ASSERT_TRUE(f.contains(k)) << k;
    EXPECT_EQ(f[k]["n"], 1) << k;
    EXPECT_EQ(f[k]["std"], 0.0) << k;
  }
  const double auc = f["auc_ctr"]["mean"].get<double>();
  EXPECT_GT(auc, 0.0);
  EXPECT_LT(auc, 1.0);
  EXPECT_GT(f["l_g"]["mean"].get<double>(), 0.0);
  for (const auto& [name, hash] : read_json(out / "manifest.json")["files"].items())
    EXPECT_TRUE(fs::exists(out / name)) << name;
}

TEST(Cli, WithoutNtpHasNoGenerativeLoss) {
  const auto out = scratch("wo_ntp");
  const auto r = run({"train", "--config", kTiny, "--out", out.string(), "--seed", "4",
                      "--ablation", "w/o-ntp"});
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto s = read_json(out / "summary.json");
  EXPECT_EQ(s["lambda"], 0.0);
  EXPECT_FALSE(s["ntp"].get<bool>());
  std::istringstream csv(slurp(out / "metrics.csv"));
  std::string line;
  std::getline(csv, line);
  while (std::getline(csv, line)) EXPECT_EQ(line.substr(line.rfind(',') + 1), "0") << line;
}

TEST(Cli, SeveralSeedsAggregate) {
  const auto cfg = config_with("seeds", {{"train", {{"seeds", {21, 22}}}}});
  const auto out = scratch("seeds");
  const auto r = run({"train", "--config", cfg, "--out", out.string(), "--seed", "1", "--variant",
                      "id-mlp"});
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto csv = slurp(out / "metrics.csv");
  EXPECT_NE(csv.find("id-mlp@21,21,"), std::string::npos);
  EXPECT_NE(csv.find("id-mlp@22,22,"), std::string::npos);
  const auto s = read_json(out / "summary.json");
  EXPECT_EQ(s["runs"].size(), 2u);
  const auto& auc = s["final_epoch"]["auc_ctr"];
  EXPECT_EQ(auc["n"], 2);
  const double a = s["runs"][0]["population_loss"], b = s["runs"][1]["population_loss"];
  const auto& pl = s["final_epoch"]["population_loss"];
  EXPECT_NEAR(pl["mean"].get<double>(), (a + b) / 2, 1e-12);
  EXPECT_NEAR(pl["std"].get<double>(), std::abs(a - b) / std::sqrt(2.0), 1e-12);
}

TEST(Cli, DivergenceIsAFailureExit) {
  const auto cfg = config_with("diverge", {{"train", {{"learning_rate", 1e300}}}});
  const auto out = scratch("diverge");
  const auto r = run({"train", "--config", cfg, "--out", out.string(), "--seed", "1", "--variant",
                      "id-mlp"});
  EXPECT_EQ(r.code, kVerificationFailure);
  EXPECT_NE(r.err.find("training failed"), std::string::npos);
}

TEST(Cli, ScalingSweepEchoesItsPoints) {
  const auto out = scratch("sweep");
  const auto r = run({"scaling-sweep", "--config", kTiny, "--out", out.string(), "--seed", "8"});
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto s = read_json(out / "sweep.json");
  ASSERT_EQ(s["seeds"].size(), 1u);
  const auto& seed = s["seeds"][0];
  EXPECT_EQ(seed["id"]["points"].size(), s["widths"].size());
  EXPECT_EQ(seed["token"]["points"].size(), s["widths"].size());
  EXPECT_EQ(count_lines(slurp(out / "sweep_points.csv")), 1u + 2 * s["widths"].size());
  EXPECT_LE(s["beta_token_gt_id"].get<std::size_t>(), s["compared"].get<std::size_t>());
}

TEST(Cli, VerifyCommand) {
  const auto out = scratch("verify");
  const auto r = run({"verify-appendix", "--config", kTiny, "--out", out.string(), "--seed", "5"});
  EXPECT_EQ(r.code, kOk) << r.out << r.err;
  EXPECT_NE(r.out.find("PASS holder_certificate"), std::string::npos);
  EXPECT_NE(r.out.find("(reported only)"), std::string::npos);
  EXPECT_EQ(count_lines(slurp(out / "checks.csv")), 1u + count_lines(r.out));

  const auto empty = config_with("empty", {{"world", {{"items", 0}}}});
  const auto e = run({"verify-appendix", "--config", empty, "--out", scratch("verify_empty").string(),
                      "--seed", "5"});
  EXPECT_EQ(e.code, kOk);
  EXPECT_EQ(e.out, "nothing to verify: the world is empty\n");

  const auto corrupt = config_with("corrupt", {{"verify", {{"corrupt_quantizer", true}}}});
  const auto cdir = scratch("verify_corrupt");
  EXPECT_EQ(run({"verify-appendix", "--config", corrupt, "--out", cdir.string(), "--seed", "5"}).code,
            kOk);
  const auto rep = read_json(cdir / "verify_report.json");
  std::size_t slack = 0;
  for (const auto& c : rep["checks"])
    if (c["name"].get<std::string>().rfind("slack_shrinks", 0) == 0) ++slack;
  EXPECT_EQ(slack, 3u);

  const auto big = config_with("big", {{"world", {{"items", 600}, {"users", 300}, {"queries", 300}}}});
  const auto b = run({"verify-appendix", "--config", big, "--out", scratch("verify_big").string(),
                      "--seed", "5"});
  EXPECT_EQ(b.code, kUsageError);
  EXPECT_NE(b.err.find("reduce world.items"), std::string::npos);
}

TEST(Cli, EveryCommandIsDeterministic) {
  const std::vector<std::string> cmds = {"simulate", "tokenize", "train", "scaling-sweep",
                                         "verify-appendix"};
  for (const auto& cmd : cmds) {
    const auto a = scratch("det_a_" + cmd), b = scratch("det_b_" + cmd);
    ASSERT_EQ(run({cmd, "--config", kTiny, "--out", a.string(), "--seed", "17"}).code, kOk) << cmd;
    ASSERT_EQ(run({cmd, "--config", kTiny, "--out", b.string(), "--seed", "17"}).code, kOk) << cmd;
    expect_same_outputs(a, b);
  }
}
