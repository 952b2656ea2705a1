#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trm/nn/tensor.hpp"

namespace trm::rq {

using nn::Tensor2;

struct Codebook {
  std::size_t layer = 0;
  Tensor2 centroids;  // K x d

  std::size_t size() const { return centroids.rows(); }
  std::size_t dim() const { return centroids.cols(); }
};

/// Nearest centroid by squared distance; ties go to the lowest index.
std::size_t nearest_centroid(const Codebook& cb, const double* v);

struct KmeansResult {
  Codebook codebook;
  std::vector<std::size_t> assignment;
  std::vector<double> wcss_history;  // one entry per assignment step
  std::size_t iterations = 0;
};

/// k-means++ seeding followed by Lloyd iterations until the largest centroid
/// move is below `tol` or `max_iter` is reached. Empty clusters are re-seeded
/// at the point farthest from its centroid. `n_init` independent restarts
/// are run and the lowest final WCSS kept. Throws InputError on non-finite
/// points and ConfigError when n, K or n_init is zero.
KmeansResult kmeans_fit(const Tensor2& points, std::size_t k, std::size_t max_iter,
                        double tol, std::uint64_t seed, std::size_t n_init = 8);

/// Per-layer code indices plus the mem-token ids appended by BPE.
struct TokenSequence {
  std::vector<std::uint32_t> gen_tokens;
  std::vector<std::uint32_t> mem_tokens;

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

class ResidualQuantizer {
 public:
  ResidualQuantizer() = default;
  explicit ResidualQuantizer(std::vector<Codebook> codebooks);

  std::size_t layers() const { return codebooks_.size(); }
  std::size_t dim() const { return codebooks_.empty() ? 0 : codebooks_[0].dim(); }
  std::size_t vocab_size() const { return vocab_size_; }
  std::size_t layer_size(std::size_t l) const { return codebooks_[l].size(); }
  std::size_t offset(std::size_t l) const { return offsets_[l]; }
  const Codebook& codebook(std::size_t l) const { return codebooks_[l]; }
  std::vector<std::size_t> layer_sizes() const;

  /// offset_l + code, a bijection onto [0, vocab_size).
  std::uint32_t global_id(std::size_t layer, std::uint32_t code) const;
  std::pair<std::size_t, std::uint32_t> split_global(std::uint32_t id) const;
  std::vector<std::uint32_t> global_ids(const TokenSequence& t) const;

  /// Versioned binary: "TRMQ" | u32 version | u64 L | per layer: u64 K,
  /// u64 d, K*d f64.
  void save(const std::filesystem::path& path) const;
  static ResidualQuantizer load(const std::filesystem::path& path);

  friend bool operator==(const ResidualQuantizer& a, const ResidualQuantizer& b);

 private:
  std::vector<Codebook> codebooks_;
  std::vector<std::size_t> offsets_;
  std::size_t vocab_size_ = 0;
};

struct KmeansOptions {
  std::size_t max_iter = 100;
  double tol = 1e-9;
  std::size_t n_init = 8;
};

struct RqFit {
  ResidualQuantizer quantizer;
  std::vector<double> layer_mse;  // mean ||residual||^2 after each layer
  std::vector<std::string> warnings;
};

/// Sequential RQ-Kmeans: layer 1 on the raw rows, each later layer on the
/// residuals left by greedy encoding through the earlier layers.
RqFit rq_fit(const Tensor2& embeddings, const std::vector<std::size_t>& layer_sizes,
             std::uint64_t seed, KmeansOptions opts = {});

/// Greedy per-layer nearest centroid on the running residual.
TokenSequence rq_encode(const ResidualQuantizer& q, std::span<const double> v);

/// Sum of the selected centroids. Throws InputError on a bad length or code.
std::vector<double> rq_decode(const ResidualQuantizer& q, const TokenSequence& tokens);

/// v - decode(encode(v)).
std::vector<double> rq_residual(const ResidualQuantizer& q, std::span<const double> v);

struct DistortionMoment {
  double delta_s = 0.0;
  double d2 = 0.0;  // D = delta_2
};

/// Weighted mean over rows of ||z - decode(encode(z))||^s (uniform weights
/// when none are given). Throws ConfigError for s <= 0.
DistortionMoment distortion_moment(const ResidualQuantizer& q, const Tensor2& embeddings,
                                   double s,
                                   std::optional<std::span<const double>> weights = {});

/// Same moment from precomputed residual norms.
DistortionMoment distortion_moment_from_norms(std::span<const double> norms, double s,
                                              std::optional<std::span<const double>> weights = {});

}  // namespace trm::rq
