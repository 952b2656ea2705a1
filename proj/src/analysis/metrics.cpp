#include "trm/analysis/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "trm/error.hpp"

namespace trm::analysis {

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw MetricError("auc: scores/labels length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] != 0) {
        rank_sum += avg_rank;
        ++pos;
      }
    i = j;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw MetricError("auc undefined: need both classes");
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

QaucResult qauc(std::span<const double> scores, std::span<const int> labels,
                std::span<const std::uint64_t> query_ids) {
  if (scores.size() != labels.size() || scores.size() != query_ids.size())
    throw MetricError("qauc: input length mismatch");
  std::map<std::uint64_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < scores.size(); ++i) groups[query_ids[i]].push_back(i);

  QaucResult r;
  double sum = 0.0;
  std::vector<double> s;
  std::vector<int> y;
  for (const auto& [q, idx] : groups) {
    s.clear();
    y.clear();
    int positives = 0;
    for (std::size_t i : idx) {
      s.push_back(scores[i]);
      y.push_back(labels[i]);
      positives += labels[i] != 0;
    }
    if (positives == 0 || positives == static_cast<int>(idx.size())) {
      ++r.skipped;
      continue;
    }
    sum += auc(s, y);
    ++r.qualifying;
  }
  if (r.qualifying == 0) throw MetricError("qauc undefined: no query has both classes");
  r.value = sum / static_cast<double>(r.qualifying);
  return r;
}

const char* to_string(BucketStatus s) {
  switch (s) {
    case BucketStatus::ok: return "ok";
    case BucketStatus::empty: return "empty";
    case BucketStatus::unreliable: return "unreliable";
    case BucketStatus::single_class: return "single_class";
  }
  return "?";
}

std::vector<BucketAuc> lifetime_buckets(std::span<const double> ages,
                                        std::span<const double> scores,
                                        std::span<const int> labels,
                                        std::span<const double> edges, std::size_t min_count) {
  if (ages.size() != scores.size() || ages.size() != labels.size())
    throw MetricError("lifetime_buckets: input length mismatch");
  if (edges.size() < 2) throw ConfigError("lifetime_buckets: need at least two edges");
  std::vector<BucketAuc> out;
  for (std::size_t b = 0; b + 1 < edges.size(); ++b) {
    BucketAuc bucket;
    bucket.lo = edges[b];
    bucket.hi = edges[b + 1];
    std::vector<double> s;
    std::vector<int> y;
    int positives = 0;
    for (std::size_t i = 0; i < ages.size(); ++i)
      if (ages[i] >= bucket.lo && ages[i] < bucket.hi) {
        s.push_back(scores[i]);
        y.push_back(labels[i]);
        positives += labels[i] != 0;
      }
    bucket.count = s.size();
    if (s.empty()) {
      bucket.status = BucketStatus::empty;
    } else if (positives == 0 || positives == static_cast<int>(s.size())) {
      bucket.status = BucketStatus::single_class;
    } else {
      bucket.auc = auc(s, y);
      bucket.status = s.size() < min_count ? BucketStatus::unreliable : BucketStatus::ok;
    }
    out.push_back(bucket);
  }
  return out;
}

double NormVarianceSeries::mean_abs_delta() const {
  if (deltas.empty()) return 0.0;
  double s = 0.0;
  for (double d : deltas) s += std::abs(d);
  return s / static_cast<double>(deltas.size());
}

std::vector<double> row_norms(const nn::Tensor2& m) {
  std::vector<double> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) out[r] = nn::l2_norm(m.row(r));
  return out;
}

NormVarianceSeries norm_variance(const std::vector<std::vector<double>>& norm_snapshots,
                                 std::string kind) {
  if (norm_snapshots.size() < 2) throw InputError("norm_variance: need at least two snapshots");
  NormVarianceSeries s;
  s.kind = std::move(kind);
  for (const auto& norms : norm_snapshots) {
    double mean = 0.0;
    for (double v : norms) mean += v;
    mean /= std::max<std::size_t>(norms.size(), 1);
    double var = 0.0;
    for (double v : norms) var += (v - mean) * (v - mean);
    var /= std::max<std::size_t>(norms.size(), 1);
    s.variance.push_back(var);
  }
  for (std::size_t t = 1; t < s.variance.size(); ++t)
    s.deltas.push_back(s.variance[t] - s.variance[t - 1]);
  return s;
}

}  // namespace trm::analysis
