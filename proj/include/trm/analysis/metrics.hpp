#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trm/nn/tensor.hpp"

namespace trm::analysis {

/// Mann-Whitney AUC; tied scores count 1/2. Throws MetricError unless both
/// classes are present.
double auc(std::span<const double> scores, std::span<const int> labels);

struct QaucResult {
  double value = 0.0;
  std::size_t qualifying = 0;
  std::size_t skipped = 0;  // groups with a single class
};

/// Per-query AUC averaged uniformly over queries that have both classes.
QaucResult qauc(std::span<const double> scores, std::span<const int> labels,
                std::span<const std::uint64_t> query_ids);

enum class BucketStatus { ok, empty, unreliable, single_class };

struct BucketAuc {
  double lo = 0.0;  // inclusive
  double hi = 0.0;  // exclusive
  std::size_t count = 0;
  std::optional<double> auc;
  BucketStatus status = BucketStatus::empty;
};

const char* to_string(BucketStatus s);

/// AUC within each age bucket [edges[i], edges[i+1]). Buckets with fewer
/// than `min_count` samples are computed but marked unreliable; buckets
/// without samples or without both classes carry no AUC.
std::vector<BucketAuc> lifetime_buckets(std::span<const double> ages,
                                        std::span<const double> scores,
                                        std::span<const int> labels,
                                        std::span<const double> edges,
                                        std::size_t min_count = 30);

struct NormVarianceSeries {
  std::string kind;                // "id" or "token"
  std::vector<double> variance;    // one per snapshot
  std::vector<double> deltas;      // variance[t] - variance[t-1]

  double mean_abs_delta() const;
};

/// Row L2 norms of a matrix.
std::vector<double> row_norms(const nn::Tensor2& m);

/// Population variance across entities of the given norms, per snapshot.
/// Throws InputError with fewer than two snapshots.
NormVarianceSeries norm_variance(const std::vector<std::vector<double>>& norm_snapshots,
                                 std::string kind);

}  // namespace trm::analysis
