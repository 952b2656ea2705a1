#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trm/nn/layers.hpp"
#include "trm/nn/optim.hpp"

namespace trm::align {

enum class Provenance { synthetic, file };

/// Entity id ("item:17", "query:3", ...) to dense vector, one dimension for all.
class EmbeddingSource {
 public:
  EmbeddingSource() = default;
  EmbeddingSource(std::size_t dim, Provenance provenance) : dim_(dim), provenance_(provenance) {}

  std::size_t dim() const { return dim_; }
  Provenance provenance() const { return provenance_; }
  std::size_t size() const { return vectors_.size(); }
  bool contains(const std::string& id) const { return vectors_.count(id) != 0; }

  /// Throws InputError on a dimension mismatch or non-finite entry.
  void set(const std::string& id, std::vector<double> v);
  std::span<const double> get(const std::string& id) const;
  const std::map<std::string, std::vector<double>>& entries() const { return vectors_; }

  /// Lines "entity_id<TAB>v1,v2,...,vd".
  void save(const std::filesystem::path& path) const;
  static EmbeddingSource load(const std::filesystem::path& path);

 private:
  std::size_t dim_ = 0;
  Provenance provenance_ = Provenance::synthetic;
  std::map<std::string, std::vector<double>> vectors_;
};

/// Coordinate-wise mean. Throws InputError on an empty or ragged list.
std::vector<double> mean_pool(const std::vector<std::vector<double>>& token_embeddings);

/// Throws InputError when either vector has zero norm.
double cosine_sim(std::span<const double> a, std::span<const double> b);

enum class PairKind { query_item, item_item };

struct Pair {
  std::string anchor;
  std::string positive;
  PairKind kind = PairKind::query_item;
};

using PairBatch = std::vector<Pair>;

struct AlignLoss {
  double loss = 0.0;
  std::map<std::string, std::vector<double>> grad;  // d loss / d embedding, by id
};

/// In-batch contrastive loss: anchor i is scored against every positive in
/// the batch, its own positive being the target; averaged over anchors.
/// Throws ConfigError for tau <= 0 and InputError for unknown ids.
AlignLoss align_loss(const PairBatch& batch, const EmbeddingSource& source, double tau);

/// cap (0 when absent) + lambda_align * align.
double rep_objective(double align, std::optional<double> cap, double lambda_align);

struct AdapterConfig {
  std::size_t steps = 300;
  std::size_t batch = 32;
  double tau = 0.07;
  double learning_rate = 1e-2;
};

/// Linear map h -> W h trained with align_loss, starting from W = I.
/// Query-item and item-item batches alternate step by step.
class AlignmentAdapter {
 public:
  explicit AlignmentAdapter(std::size_t dim);

  std::vector<double> apply(std::span<const double> h) const;
  EmbeddingSource apply(const EmbeddingSource& src) const;
  const nn::Tensor2& weight() const { return store_.get("align.w").value; }

  /// Returns the loss of every step.
  std::vector<double> train(const EmbeddingSource& src, const std::vector<Pair>& query_item,
                            const std::vector<Pair>& item_item, const AdapterConfig& cfg,
                            std::uint64_t seed);

 private:
  std::size_t dim_;
  nn::ParamStore store_;
};

}  // namespace trm::align
