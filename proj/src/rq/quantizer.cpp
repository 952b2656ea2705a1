#include "trm/rq/quantizer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "trm/error.hpp"
#include "trm/simd/kernels.hpp"
#include "trm/util/binary_io.hpp"
#include "trm/util/seed.hpp"

namespace trm::rq {

std::size_t nearest_centroid(const Codebook& cb, const double* v) {
  const auto& k = simd::active();
  std::size_t best = 0;
  double best_d = INFINITY;
  for (std::size_t c = 0; c < cb.size(); ++c) {
    const double d = k.sq_dist(cb.centroids.row(c).data(), v, cb.dim());
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

namespace {

std::vector<std::size_t> kmeanspp_seed(const Tensor2& pts, std::size_t k, Rng& rng) {
  const auto& kern = simd::active();
  const std::size_t n = pts.rows();
  std::vector<std::size_t> chosen;
  chosen.push_back(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i)
    d2[i] = kern.sq_dist(pts.row(i).data(), pts.row(chosen[0]).data(), pts.cols());

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  while (chosen.size() < k) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick = 0;
    if (total <= 0.0) {
      // Every point already coincides with a centre: duplicates are unavoidable.
      pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    } else {
      double u = unif(rng) * total;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        u -= d2[i];
        if (u < 0.0 && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
      while (d2[pick] <= 0.0 && pick > 0) --pick;
    }
    chosen.push_back(pick);
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], kern.sq_dist(pts.row(i).data(), pts.row(pick).data(),
                                           pts.cols()));
  }
  return chosen;
}

KmeansResult lloyd(const Tensor2& points, std::size_t k, std::size_t max_iter, double tol,
                   std::uint64_t seed) {
  const auto& kern = simd::active();
  const std::size_t n = points.rows();
  const std::size_t d = points.cols();

  Rng rng(seed);
  KmeansResult res;
  res.codebook.centroids = Tensor2(k, d);
  auto seeds = kmeanspp_seed(points, k, rng);
  for (std::size_t c = 0; c < k; ++c)
    std::copy_n(points.row(seeds[c]).data(), d, res.codebook.centroids.row(c).data());

  Tensor2& cent = res.codebook.centroids;
  res.assignment.assign(n, 0);
  std::vector<double> dist(n);
  Tensor2 sums(k, d);
  std::vector<std::size_t> counts(k);

  for (std::size_t it = 0; it < std::max<std::size_t>(max_iter, 1); ++it) {
    double wcss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = nearest_centroid(res.codebook, points.row(i).data());
      res.assignment[i] = c;
      dist[i] = kern.sq_dist(points.row(i).data(), cent.row(c).data(), d);
      wcss += dist[i];
    }
    res.wcss_history.push_back(wcss);

    sums.fill(0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      kern.axpy(1.0, points.row(i).data(), sums.row(res.assignment[i]).data(), d);
      ++counts[res.assignment[i]];
    }

    double max_shift = 0.0;
    std::vector<std::size_t> empty;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        empty.push_back(c);
        continue;
      }
      auto row = cent.row(c);
      double shift = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double m = sums(c, j) / static_cast<double>(counts[c]);
        shift += (m - row[j]) * (m - row[j]);
        row[j] = m;
      }
      max_shift = std::max(max_shift, std::sqrt(shift));
    }

    // Farthest-point repair. Points at distance 0 are already represented
    // exactly, so a cluster that cannot be re-seeded stays a dead duplicate.
    if (!empty.empty()) {
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });
      std::size_t next = 0;
      for (std::size_t c : empty) {
        if (next >= n || dist[order[next]] <= 0.0) break;
        const std::size_t p = order[next++];
        std::copy_n(points.row(p).data(), d, cent.row(c).data());
        dist[p] = 0.0;
        max_shift = INFINITY;
      }
    }

    res.iterations = it + 1;
    if (max_shift < tol) break;
  }
  return res;
}

double final_wcss(const Tensor2& points, const Codebook& cb) {
  double s = 0.0;
  for (std::size_t i = 0; i < points.rows(); ++i)
    s += simd::active().sq_dist(points.row(i).data(),
                                cb.centroids.row(nearest_centroid(cb, points.row(i).data())).data(),
                                points.cols());
  return s;
}

}  // namespace

KmeansResult kmeans_fit(const Tensor2& points, std::size_t k, std::size_t max_iter,
                        double tol, std::uint64_t seed, std::size_t n_init) {
  if (points.rows() == 0 || k == 0 || n_init == 0)
    throw ConfigError("kmeans_fit: need n >= 1, K >= 1 and n_init >= 1");
  if (!points.all_finite()) throw InputError("kmeans_fit: non-finite input point");
  KmeansResult best;
  double best_wcss = INFINITY;
  for (std::size_t r = 0; r < n_init; ++r) {
    auto run = lloyd(points, k, max_iter, tol, derive_seed(seed, r));
    const double w = final_wcss(points, run.codebook);
    if (w < best_wcss) {
      best_wcss = w;
      best = std::move(run);
    }
  }
  return best;
}

ResidualQuantizer::ResidualQuantizer(std::vector<Codebook> codebooks)
    : codebooks_(std::move(codebooks)) {
  for (std::size_t l = 0; l < codebooks_.size(); ++l) {
    if (codebooks_[l].size() == 0) throw ConfigError("quantizer layer with zero codes");
    if (codebooks_[l].dim() != codebooks_[0].dim())
      throw ConfigError("quantizer layers disagree on dimension");
    codebooks_[l].layer = l;
    offsets_.push_back(vocab_size_);
    vocab_size_ += codebooks_[l].size();
  }
}

std::vector<std::size_t> ResidualQuantizer::layer_sizes() const {
  std::vector<std::size_t> out;
  for (const auto& cb : codebooks_) out.push_back(cb.size());
  return out;
}

std::uint32_t ResidualQuantizer::global_id(std::size_t layer, std::uint32_t code) const {
  if (layer >= layers() || code >= codebooks_[layer].size())
    throw InputError("global_id: (layer, code) out of range");
  return static_cast<std::uint32_t>(offsets_[layer] + code);
}

std::pair<std::size_t, std::uint32_t> ResidualQuantizer::split_global(std::uint32_t id) const {
  if (id >= vocab_size_) throw InputError("split_global: id out of range");
  std::size_t l = layers() - 1;
  while (offsets_[l] > id) --l;
  return {l, static_cast<std::uint32_t>(id - offsets_[l])};
}

std::vector<std::uint32_t> ResidualQuantizer::global_ids(const TokenSequence& t) const {
  if (t.gen_tokens.size() != layers()) throw InputError("token sequence length != L");
  std::vector<std::uint32_t> out(layers());
  for (std::size_t l = 0; l < layers(); ++l) out[l] = global_id(l, t.gen_tokens[l]);
  return out;
}

namespace {
constexpr std::array<char, 4> kMagic{'T', 'R', 'M', 'Q'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void ResidualQuantizer::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write quantizer: " + path.string());
  out.write(kMagic.data(), kMagic.size());
  io::write_pod<std::uint32_t>(out, kVersion);
  io::write_pod<std::uint64_t>(out, layers());
  for (const auto& cb : codebooks_) {
    io::write_pod<std::uint64_t>(out, cb.size());
    io::write_pod<std::uint64_t>(out, cb.dim());
    out.write(reinterpret_cast<const char*>(cb.centroids.data()),
              static_cast<std::streamsize>(cb.centroids.size() * sizeof(double)));
  }
}

ResidualQuantizer ResidualQuantizer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open quantizer: " + path.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw InputError("not a quantizer file: " + path.string());
  if (io::read_pod<std::uint32_t>(in, path) != kVersion)
    throw InputError("unsupported quantizer version: " + path.string());
  const auto layers = io::read_pod<std::uint64_t>(in, path);
  std::vector<Codebook> cbs;
  for (std::uint64_t l = 0; l < layers; ++l) {
    const auto k = io::read_pod<std::uint64_t>(in, path);
    const auto d = io::read_pod<std::uint64_t>(in, path);
    Codebook cb;
    cb.layer = l;
    cb.centroids = Tensor2(k, d);
    in.read(reinterpret_cast<char*>(cb.centroids.data()),
            static_cast<std::streamsize>(k * d * sizeof(double)));
    if (!in) throw InputError("truncated quantizer: " + path.string());
    cbs.push_back(std::move(cb));
  }
  return ResidualQuantizer(std::move(cbs));
}

bool operator==(const ResidualQuantizer& a, const ResidualQuantizer& b) {
  if (a.layers() != b.layers()) return false;
  for (std::size_t l = 0; l < a.layers(); ++l)
    if (a.codebooks_[l].centroids != b.codebooks_[l].centroids) return false;
  return true;
}

RqFit rq_fit(const Tensor2& embeddings, const std::vector<std::size_t>& layer_sizes,
             std::uint64_t seed, KmeansOptions opts) {
  if (layer_sizes.empty()) throw ConfigError("rq_fit: no layers");
  RqFit fit;
  const std::size_t n = embeddings.rows();
  const std::size_t d = embeddings.cols();
  Tensor2 residual = embeddings;
  std::vector<Codebook> cbs;
  for (std::size_t l = 0; l < layer_sizes.size(); ++l) {
    if (n < layer_sizes[l])
      fit.warnings.push_back("layer " + std::to_string(l) + ": " + std::to_string(n) +
                             " points for K=" + std::to_string(layer_sizes[l]) +
                             "; some codes will be duplicates");
    auto km = kmeans_fit(residual, layer_sizes[l], opts.max_iter, opts.tol,
                         derive_seed(seed, l), opts.n_init);
    km.codebook.layer = l;
    double mse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      auto r = residual.row(i);
      const std::size_t c = nearest_centroid(km.codebook, r.data());
      for (std::size_t j = 0; j < d; ++j) r[j] -= km.codebook.centroids(c, j);
      for (double x : r) mse += x * x;
    }
    fit.layer_mse.push_back(mse / static_cast<double>(n));
    cbs.push_back(std::move(km.codebook));
  }
  fit.quantizer = ResidualQuantizer(std::move(cbs));
  return fit;
}

TokenSequence rq_encode(const ResidualQuantizer& q, std::span<const double> v) {
  if (v.size() != q.dim())
    throw InputError("rq_encode: vector dim " + std::to_string(v.size()) +
                     " != quantizer dim " + std::to_string(q.dim()));
  std::vector<double> r(v.begin(), v.end());
  TokenSequence t;
  for (std::size_t l = 0; l < q.layers(); ++l) {
    const auto& cb = q.codebook(l);
    const std::size_t c = nearest_centroid(cb, r.data());
    t.gen_tokens.push_back(static_cast<std::uint32_t>(c));
    for (std::size_t j = 0; j < r.size(); ++j) r[j] -= cb.centroids(c, j);
  }
  return t;
}

std::vector<double> rq_decode(const ResidualQuantizer& q, const TokenSequence& tokens) {
  if (tokens.gen_tokens.size() != q.layers())
    throw InputError("rq_decode: expected " + std::to_string(q.layers()) + " codes");
  std::vector<double> out(q.dim(), 0.0);
  for (std::size_t l = 0; l < q.layers(); ++l) {
    const auto c = tokens.gen_tokens[l];
    if (c >= q.layer_size(l))
      throw InputError("rq_decode: code " + std::to_string(c) + " out of range at layer " +
                       std::to_string(l));
    simd::active().axpy(1.0, q.codebook(l).centroids.row(c).data(), out.data(), out.size());
  }
  return out;
}

std::vector<double> rq_residual(const ResidualQuantizer& q, std::span<const double> v) {
  auto rec = rq_decode(q, rq_encode(q, v));
  for (std::size_t j = 0; j < rec.size(); ++j) rec[j] = v[j] - rec[j];
  return rec;
}

DistortionMoment distortion_moment_from_norms(std::span<const double> norms, double s,
                                              std::optional<std::span<const double>> weights) {
  if (!(s > 0.0)) throw ConfigError("distortion moment needs s > 0");
  if (weights && weights->size() != norms.size())
    throw ConfigError("distortion moment: weight count mismatch");
  DistortionMoment m;
  double wsum = 0.0;
  for (std::size_t i = 0; i < norms.size(); ++i) {
    const double w = weights ? (*weights)[i] : 1.0;
    wsum += w;
    m.delta_s += w * std::pow(norms[i], s);
    m.d2 += w * norms[i] * norms[i];
  }
  if (wsum > 0.0) {
    m.delta_s /= wsum;
    m.d2 /= wsum;
  }
  return m;
}

DistortionMoment distortion_moment(const ResidualQuantizer& q, const Tensor2& embeddings,
                                   double s, std::optional<std::span<const double>> weights) {
  std::vector<double> norms(embeddings.rows());
  for (std::size_t i = 0; i < embeddings.rows(); ++i)
    norms[i] = nn::l2_norm(rq_residual(q, embeddings.row(i)));
  return distortion_moment_from_norms(norms, s, weights);
}

}  // namespace trm::rq
