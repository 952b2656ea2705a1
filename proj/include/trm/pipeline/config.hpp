#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "trm/align/align.hpp"
#include "trm/model/rank.hpp"
#include "trm/world/world.hpp"

namespace trm::pipeline {

struct TokenizerConfig {
  std::vector<std::size_t> layers{16, 16, 16};
  std::size_t bpe_budget = 64;
  std::uint64_t min_frequency = 2;
  std::size_t min_coclicks = 2;  // item-item alignment pairs
  align::AdapterConfig adapter;
};

struct ModelSection {
  std::string variant = "trm-mlp";
  std::vector<std::string> ablations;  // w/o-align, w/o-hybrid, w/o-ntp
  std::size_t item_dim = 16;
  std::vector<std::size_t> tower_hidden{64, 64};
  std::size_t tower_d_model = 16;
  std::size_t tower_layers = 1;
  std::size_t tower_heads = 2;
  std::size_t id_buckets = 4096;
  std::size_t gen_dim = 8;
  std::size_t mem_buckets = 4096;
  std::size_t mem_dim = 8;
  std::vector<std::size_t> deep_hidden{32};
  double dropout = 0.1;
  std::string pooling = "sum";
  std::size_t n_q = 2;
  std::size_t n_u = 2;
  std::size_t gen_transformer_layers = 4;
  std::size_t gen_heads = 2;
  std::size_t gen_d_model = 16;
  bool positional = false;
  double lambda = 0.1;
};

struct TrainSection {
  std::size_t passes = 2;  // passes over each world epoch, in time order
  std::size_t batch = 64;
  double learning_rate = 5e-3;
  std::vector<std::uint64_t> seeds;  // empty: the command's --seed
};

struct EvalSection {
  std::vector<double> age_edges{0, 1, 3, 1e6};  // item age in epochs at the eval epoch
  std::size_t min_bucket_count = 30;
};

struct SweepSection {
  std::vector<std::size_t> widths{4, 8, 16, 32};
  std::string id_variant = "id-mlp";
  std::string token_variant = "gen-only";  // cell-limited, so its loss stays above L_inf_tok
};

struct VerifySection {
  std::size_t holder_pairs = 20000;
  std::vector<double> s_grid{0.25, 0.5, 1.0, 1.5, 2.0};
  std::vector<double> d_grid{1, 2, 4, 8, 16, 32};
  bool corrupt_quantizer = false;  // zero every centroid (stress run)
  bool gate_decomposition = false;
  // Enumerable world for the decomposition check.
  std::size_t decomposition_items = 120;
  std::size_t decomposition_contexts = 3;
  std::vector<std::size_t> decomposition_layers{4, 4};
  std::vector<std::size_t> decomposition_features{4, 8, 16, 32, 64, 128};
};

struct RunConfig {
  world::WorldConfig world;
  TokenizerConfig tokenizer;
  ModelSection model;
  TrainSection train;
  EvalSection eval;
  SweepSection sweep;
  VerifySection verify;
};

/// Missing keys keep their defaults; unknown keys or wrong types throw
/// ConfigError naming the key.
RunConfig parse_run_config(const nlohmann::json& j);
/// Throws InputError when the file cannot be read or parsed.
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& c);

/// A named model variant after ablations.
struct Variant {
  std::string name;
  model::ItemPathway pathway = model::ItemPathway::tokens;
  model::TowerKind tower = model::TowerKind::mlp;
  bool wide = true;   // mem-token wide path
  bool ntp = true;    // generative head
  bool align = true;  // collaborative alignment before quantization
  double lambda = 0.1;
};

/// Variants: id-mlp, id-transformer, trm-mlp, trm-transformer, gen-only,
/// hybrid. Ablations apply to token variants only. Throws ConfigError.
Variant resolve_variant(const std::string& name, const std::vector<std::string>& ablations,
                        double lambda);
const std::vector<std::string>& variant_names();

}  // namespace trm::pipeline
