#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "trm/embed/hybrid.hpp"
#include "trm/nn/attention.hpp"
#include "trm/nn/optim.hpp"
#include "trm/rq/quantizer.hpp"

namespace trm::model {

/// One logged impression. The item pathway is either a raw id (baseline) or
/// the item's token sequence with layer-local gen codes and mem-token ids.
struct RankExample {
  std::vector<double> xq;
  std::vector<double> xu;
  std::variant<std::uint64_t, rq::TokenSequence> item;
  std::uint8_t ctr = 0;
  std::uint8_t real_play = 0;
  std::uint64_t query = 0;  // QAUC group
  double age = 0.0;         // epochs since the item was born
};

inline constexpr std::size_t kHeads = 2;  // ctr, real_play

/// Visibility over n_ctx context positions followed by `semantic` positions:
/// context sees context only; semantic position i sees all context and the
/// semantic positions up to and including itself.
nn::AttentionMask semi_causal_mask(std::size_t n_ctx, std::size_t semantic);

struct GenHeadConfig {
  std::size_t n_q = 2;
  std::size_t n_u = 2;
  std::size_t layers = 4;
  std::size_t heads = 2;
  std::size_t d_model = 16;
  std::size_t ffn = 32;
  std::vector<std::size_t> codebook_sizes;  // K_l per layer
  bool positional = false;                  // learned encoding on semantic positions

  std::size_t n_ctx() const { return n_q + n_u; }
  void validate() const;
};

/// Next-token head over [X_Q tokens, X_U tokens, start, s_1 .. s_{L-1}].
/// The semantic inputs are rows of the shared gen-token table (global ids),
/// projected to the model width. Position l predicts s_{l+1} with its own
/// K_l-way output layer.
class GenHead {
 public:
  struct Cache {
    nn::Tensor2 xq, xu;
    nn::Tensor2 sem_rows;  // (B * P) x gen_dim, table rows of s_1 .. s_P
    std::vector<std::uint32_t> sem_ids;
    nn::Tensor2 hidden;    // stack output, (B * T) x d
    nn::TransformerStack::Cache stack;
    std::size_t batch = 0;
    std::size_t prefix = 0;  // P
  };

  GenHead() = default;
  GenHead(nn::ParamStore& store, const std::string& name, const GenHeadConfig& cfg,
          std::size_t query_dim, std::size_t user_dim, embed::HashedTable* gen_table, Rng& rng);

  const GenHeadConfig& config() const { return cfg_; }
  std::size_t semantic_layers() const { return cfg_.codebook_sizes.size(); }

  /// Logits for positions 0 .. min(m, L - 1), m the prefix length (equal
  /// across the batch). Position l sees only s_1 .. s_l. Throws InputError
  /// when the prefix is longer than L or a code is out of range.
  std::vector<nn::Tensor2> forward(const nn::Tensor2& xq, const nn::Tensor2& xu,
                                   const std::vector<std::vector<std::uint32_t>>& prefix,
                                   Cache* cache) const;
  /// Gradients go to the head's parameters and the shared table rows; the
  /// context features are inputs, not parameters.
  void backward(const Cache& cache, const std::vector<nn::Tensor2>& dlogits);

 private:
  GenHeadConfig cfg_;
  std::vector<std::size_t> offsets_;
  embed::HashedTable* table_ = nullptr;
  nn::Linear ctx_q_, ctx_u_, sem_in_;
  nn::Param* start_ = nullptr;
  nn::Param* pos_ = nullptr;
  nn::TransformerStack stack_;
  std::vector<nn::Linear> out_;
};

enum class TowerKind { mlp, transformer };
enum class ItemPathway { id, tokens };

const char* to_string(TowerKind k);
const char* to_string(ItemPathway p);

struct TowerConfig {
  TowerKind kind = TowerKind::mlp;
  std::vector<std::size_t> hidden{64, 64};  // mlp: three dense layers
  std::size_t d_model = 16;                 // transformer tower
  std::size_t layers = 1;
  std::size_t heads = 2;
  std::size_t ffn = 32;
};

/// Discriminative tower over [item | X_Q | X_U] with one logit per head.
/// The transformer variant embeds the three parts as three tokens, attends
/// over them without a mask and mean-pools.
class Tower {
 public:
  struct Cache {
    nn::Tensor2 x;
    nn::Mlp::Cache mlp;
    nn::Tensor2 tokens;
    nn::TransformerStack::Cache stack;
    nn::Tensor2 pooled;
  };

  Tower() = default;
  Tower(nn::ParamStore& store, const std::string& name, const TowerConfig& cfg,
        std::size_t item_dim, std::size_t query_dim, std::size_t user_dim, Rng& rng);

  nn::Tensor2 forward(const nn::Tensor2& x, Cache* cache) const;
  nn::Tensor2 backward(const Cache& cache, const nn::Tensor2& dy);
  /// The final layer, whose weights set the logits directly.
  nn::Linear& output();

 private:
  TowerConfig cfg_;
  std::size_t item_dim_ = 0, query_dim_ = 0, user_dim_ = 0;
  nn::Mlp mlp_;
  nn::Linear in_item_, in_q_, in_u_, out_;
  nn::TransformerStack stack_;
};

struct ModelConfig {
  ItemPathway pathway = ItemPathway::tokens;
  TowerConfig tower;
  std::size_t query_dim = 0;
  std::size_t user_dim = 0;
  std::size_t item_dim = 16;  // id row width and hybrid output width
  std::size_t id_buckets = 4096;
  // Token pathway.
  std::vector<std::size_t> codebook_sizes;
  std::size_t gen_dim = 8;
  std::size_t mem_buckets = 4096;
  std::size_t mem_dim = 8;
  embed::HybridConfig hybrid;  // gen_layers and out_dim are taken from above
  bool ntp = false;            // build the generative head
  GenHeadConfig gen;           // codebook_sizes taken from above
  std::uint64_t hash_seed = 0;

  void validate() const;
};

struct JointLossReport {
  double l_d = 0.0;
  double l_g = 0.0;
  double lambda = 0.0;
  double total = 0.0;  // l_d + lambda * l_g
  std::size_t positives = 0;
};

JointLossReport combine_losses(double l_d, double l_g, double lambda, std::size_t positives);

/// The ranking network. Parameter names: "item.*" for the item pathway,
/// "tower.*" for the discriminative tower, "gen.*" for the generative head.
class RankModel {
 public:
  RankModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }
  bool has_gen_head() const { return gen_head_ != nullptr; }

  /// Logits (B x 2) in evaluation mode. Throws InputError on an empty batch
  /// and ConfigError when an example's pathway or widths do not match.
  nn::Tensor2 predict(std::span<const RankExample> batch) const;

  /// L_d = mean BCE over examples and heads; L_g = mean over ctr-positive
  /// examples of the summed per-layer CE (0 without positives, or without a
  /// generative head); total = L_d + lambda L_g. With `accumulate` the
  /// gradients of the total are added into params(). Dropout is drawn from
  /// `dropout_rng` when given, otherwise off.
  JointLossReport joint_loss(std::span<const RankExample> batch, double lambda, bool accumulate,
                             Rng* dropout_rng = nullptr);

  /// Next-token logits from the generative head (see GenHead::forward).
  std::vector<nn::Tensor2> gen_forward(std::span<const RankExample> batch,
                                       const std::vector<std::vector<std::uint32_t>>& prefix) const;

  /// Item representations without dropout, one row per example.
  nn::Tensor2 item_embeddings(std::span<const RankExample> batch) const;

  embed::HashedTable* id_table() { return id_table_.get(); }
  embed::HashedTable* gen_table() { return gen_table_.get(); }
  const embed::HashedTable* id_table() const { return id_table_.get(); }
  const embed::HashedTable* gen_table() const { return gen_table_.get(); }
  Tower& tower() { return tower_; }
  GenHead* gen_head() { return gen_head_.get(); }

 private:
  struct Inputs {
    nn::Tensor2 xq, xu;
    std::vector<std::uint64_t> ids;
    std::vector<std::vector<std::uint32_t>> gen;  // global ids
    std::vector<std::vector<std::uint32_t>> mem;
    std::vector<std::vector<std::uint32_t>> local;  // layer-local codes
  };
  Inputs gather(std::span<const RankExample> batch) const;
  nn::Tensor2 item_forward(const Inputs& in, Rng* rng, embed::HybridEmbedder::Cache* cache) const;

  ModelConfig cfg_;
  nn::ParamStore store_;
  std::vector<std::size_t> offsets_;
  std::unique_ptr<embed::HashedTable> id_table_;
  std::unique_ptr<embed::HashedTable> gen_table_;
  std::unique_ptr<embed::HashedTable> mem_table_;
  embed::HybridEmbedder hybrid_;
  Tower tower_;
  std::unique_ptr<GenHead> gen_head_;
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch = 64;
  double learning_rate = 5e-3;
  double lambda = 0.0;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double l_d = 0.0;  // example-weighted means over the epoch's batches
  double l_g = 0.0;
  double total = 0.0;
};

/// Mini-batch Adam over one model. The generator drives both the shuffling
/// and the dropout masks, so a run is a function of (model seed, seed, data).
class Trainer {
 public:
  Trainer(RankModel& model, const TrainConfig& cfg, std::uint64_t seed);

  /// One shuffled pass over `data`. Throws TrainingError with the pass, step
  /// and loss parts when the loss or a gradient stops being finite.
  EpochMetrics run_epoch(std::span<const RankExample> data);
  std::size_t passes() const { return passes_; }

 private:
  RankModel& model_;
  TrainConfig cfg_;
  Rng rng_;
  nn::OptimizerState opt_;
  std::size_t passes_ = 0;
};

/// cfg.epochs passes of a Trainer. `on_epoch` (optional) runs after each.
std::vector<EpochMetrics> train(RankModel& model, std::span<const RankExample> data,
                                const TrainConfig& cfg, std::uint64_t seed,
                                const std::function<void(const EpochMetrics&)>& on_epoch = {});

}  // namespace trm::model
