#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "trm/analysis/metrics.hpp"
#include "trm/analysis/scaling.hpp"
#include "trm/analysis/theory.hpp"
#include "trm/bpe/mem_tokens.hpp"
#include "trm/model/rank.hpp"
#include "trm/pipeline/config.hpp"
#include "trm/rq/quantizer.hpp"
#include "trm/world/world.hpp"

namespace trm::pipeline {

// Protocol: world epochs 0 .. E-2 are training data, streamed in time order;
// epoch E-1 is held out for evaluation.
std::size_t eval_epoch(const world::World& w);

struct Tokenization {
  bool aligned = false;
  rq::ResidualQuantizer quantizer;
  std::vector<double> layer_mse;
  bpe::MergeTable merges;
  std::vector<rq::TokenSequence> tokens;  // by item id
  std::vector<double> align_losses;       // empty without alignment
  std::size_t fit_items = 0;              // items the quantizer was fitted on
};

/// Optional alignment adapter on training-epoch clicks, RQ-Kmeans on the
/// (aligned) content vectors of items alive during training, BPE over the
/// gen-token sequences weighted by training exposures, then every item is
/// encoded. Throws ConfigError when the world has no training epoch.
Tokenization tokenize(const world::World& w, const TokenizerConfig& cfg, bool align,
                      std::uint64_t seed);

/// quantizer.bin, merges.txt, tokens.csv. Returns the file names.
std::vector<std::string> save_tokenization(const Tokenization& t, const std::filesystem::path& dir);
/// Throws InputError when a file is missing or malformed.
Tokenization load_tokenization(const std::filesystem::path& dir);
nlohmann::json tokenize_report(const Tokenization& t);

/// Examples for the events of epochs [first, last). Token pathways need `tok`.
std::vector<model::RankExample> build_examples(const world::World& w, const Tokenization* tok,
                                               model::ItemPathway pathway, std::size_t first,
                                               std::size_t last);

model::ModelConfig model_config(const RunConfig& cfg, const Variant& v, const world::World& w,
                                const Tokenization* tok);

struct EvalRow {
  std::size_t epoch = 0;  // world epoch just trained on
  double l_d = 0.0;       // training means over the epoch's passes
  double l_g = 0.0;
  double auc[model::kHeads] = {};
  double qauc[model::kHeads] = {};
};

struct RunResult {
  std::string variant;
  std::uint64_t seed = 0;
  std::vector<EvalRow> rows;
  std::vector<analysis::BucketAuc> buckets;  // ctr head at the eval epoch
  analysis::NormVarianceSeries norms;
  double population_loss = 0.0;
  std::size_t tower_params = 0;
  std::size_t total_params = 0;
};

struct RunOptions {
  std::optional<std::vector<std::size_t>> tower_hidden;  // sweep override
  bool population_loss = false;
  std::filesystem::path checkpoint;  // empty: none
};

/// Trains one variant with the streaming protocol and evaluates it on the
/// held-out epoch after every training epoch. Norm snapshots: before
/// training and after each epoch, over the catalog alive at the next epoch
/// (ID rows) or over every gen-token row (token table).
RunResult run_variant(const world::World& w, const Tokenization* tok, const RunConfig& cfg,
                      const Variant& v, std::uint64_t seed, const RunOptions& opts = {});

/// Exposure-weighted soft-label BCE of the ctr head against p* over every
/// (user, query, item) at the eval epoch.
double population_loss(const model::RankModel& m, const world::World& w, const Tokenization* tok);

/// Cell of every population item: its gen-token sequence.
std::vector<std::size_t> token_cells(const world::Population& pop, const Tokenization& tok);

struct SweepCurve {
  std::string variant;
  std::vector<analysis::ScalingPoint> points;
  double floor = 0.0;
  std::optional<analysis::ScalingFit> fixed_fit;  // floor pinned
  std::optional<analysis::ScalingFit> joint_fit;  // free floor
  std::vector<std::string> errors;
};

struct SweepResult {
  std::uint64_t seed = 0;
  world::BayesRisks risks;
  SweepCurve id, token;
  /// beta_tok > beta_id on the pinned-floor fits; empty if either failed.
  std::optional<bool> token_steeper() const;
};

SweepResult scaling_sweep(const world::World& w, const Tokenization& tok, const RunConfig& cfg,
                          std::uint64_t seed);
nlohmann::json to_json(const SweepResult& s);

struct Check {
  std::string name;
  bool passed = false;
  bool gating = true;
  nlohmann::json detail;
};

struct VerifyReport {
  std::vector<Check> checks;
  bool nothing_to_verify = false;
  bool passed() const;
};

/// Hoelder certificate, floor-shift bound and moment bound for quantizers
/// of depth 1 .. L fitted on the population latents, beta_sd monotonicity,
/// and the decomposition check on a small enumerable world.
VerifyReport verify_appendix(const RunConfig& cfg);
nlohmann::json to_json(const VerifyReport& r);

}  // namespace trm::pipeline
