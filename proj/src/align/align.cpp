#include "trm/align/align.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "trm/error.hpp"

namespace trm::align {

void EmbeddingSource::set(const std::string& id, std::vector<double> v) {
  if (v.size() != dim_)
    throw InputError("embedding '" + id + "' has dimension " + std::to_string(v.size()) +
                     ", expected " + std::to_string(dim_));
  for (double x : v)
    if (!std::isfinite(x)) throw InputError("embedding '" + id + "' has a non-finite entry");
  vectors_[id] = std::move(v);
}

std::span<const double> EmbeddingSource::get(const std::string& id) const {
  auto it = vectors_.find(id);
  if (it == vectors_.end()) throw InputError("unknown embedding id '" + id + "'");
  return it->second;
}

void EmbeddingSource::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write embeddings: " + path.string());
  out.precision(17);
  for (const auto& [id, v] : vectors_) {
    out << id << '\t';
    for (std::size_t j = 0; j < v.size(); ++j) out << (j ? "," : "") << v[j];
    out << '\n';
  }
}

EmbeddingSource EmbeddingSource::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open embeddings: " + path.string());
  std::vector<std::pair<std::string, std::vector<double>>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": missing tab");
    std::vector<double> v;
    std::istringstream vs(line.substr(tab + 1));
    std::string tok;
    while (std::getline(vs, tok, ',')) {
      try {
        v.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw InputError(path.string() + ":" + std::to_string(lineno) + ": bad number '" +
                         tok + "'");
      }
    }
    rows.emplace_back(line.substr(0, tab), std::move(v));
  }
  if (rows.empty()) throw InputError("no embeddings in " + path.string());
  EmbeddingSource src(rows.front().second.size(), Provenance::file);
  for (auto& [id, v] : rows) src.set(id, std::move(v));
  return src;
}

std::vector<double> mean_pool(const std::vector<std::vector<double>>& token_embeddings) {
  if (token_embeddings.empty()) throw InputError("mean_pool: empty token list");
  const std::size_t d = token_embeddings.front().size();
  std::vector<double> h(d, 0.0);
  for (const auto& z : token_embeddings) {
    if (z.size() != d) throw InputError("mean_pool: ragged token embeddings");
    for (std::size_t j = 0; j < d; ++j) h[j] += z[j];
  }
  for (double& x : h) x /= static_cast<double>(token_embeddings.size());
  return h;
}

double cosine_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InputError("cosine_sim: dimension mismatch");
  const double na = nn::l2_norm(a);
  const double nb = nn::l2_norm(b);
  if (na == 0.0 || nb == 0.0) throw InputError("cosine_sim: zero-norm vector");
  double dot = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) dot += a[j] * b[j];
  return dot / (na * nb);
}

namespace {

// d cos(a, b) / d a, scaled by `scale`, accumulated into `out`.
void add_cos_grad(std::span<const double> a, std::span<const double> b, double cos,
                  double scale, std::vector<double>& out) {
  const double na = nn::l2_norm(a);
  const double nb = nn::l2_norm(b);
  for (std::size_t j = 0; j < a.size(); ++j)
    out[j] += scale * (b[j] / (na * nb) - cos * a[j] / (na * na));
}

}  // namespace

AlignLoss align_loss(const PairBatch& batch, const EmbeddingSource& source, double tau) {
  if (!(tau > 0.0)) throw ConfigError("align_loss: temperature must be positive");
  AlignLoss out;
  const std::size_t b = batch.size();
  if (b == 0) return out;
  const std::size_t d = source.dim();
  for (const auto& p : batch) {
    out.grad.try_emplace(p.anchor, d, 0.0);
    out.grad.try_emplace(p.positive, d, 0.0);
  }

  std::vector<double> sim(b);
  for (std::size_t i = 0; i < b; ++i) {
    const auto a = source.get(batch[i].anchor);
    double mx = -INFINITY;
    for (std::size_t j = 0; j < b; ++j) {
      sim[j] = cosine_sim(a, source.get(batch[j].positive));
      mx = std::max(mx, sim[j] / tau);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < b; ++j) z += std::exp(sim[j] / tau - mx);
    out.loss += std::log(z) + mx - sim[i] / tau;

    // d loss_i / d sim_ij = (softmax_j - [j == i]) / tau, then / B for the mean.
    for (std::size_t j = 0; j < b; ++j) {
      const double coef =
          (std::exp(sim[j] / tau - mx) / z - (j == i ? 1.0 : 0.0)) / (tau * static_cast<double>(b));
      if (coef == 0.0) continue;
      const auto p = source.get(batch[j].positive);
      add_cos_grad(a, p, sim[j], coef, out.grad[batch[i].anchor]);
      add_cos_grad(p, a, sim[j], coef, out.grad[batch[j].positive]);
    }
  }
  out.loss /= static_cast<double>(b);
  return out;
}

double rep_objective(double align, std::optional<double> cap, double lambda_align) {
  if (lambda_align < 0.0) throw ConfigError("rep_objective: lambda_align must be >= 0");
  return cap.value_or(0.0) + lambda_align * align;
}

AlignmentAdapter::AlignmentAdapter(std::size_t dim) : dim_(dim) {
  auto& w = store_.add("align.w", dim, dim);
  for (std::size_t i = 0; i < dim; ++i) w.value(i, i) = 1.0;
}

std::vector<double> AlignmentAdapter::apply(std::span<const double> h) const {
  if (h.size() != dim_) throw InputError("adapter: dimension mismatch");
  const auto& w = weight();
  std::vector<double> out(dim_, 0.0);
  for (std::size_t i = 0; i < dim_; ++i)
    for (std::size_t j = 0; j < dim_; ++j) out[j] += h[i] * w(i, j);
  return out;
}

EmbeddingSource AlignmentAdapter::apply(const EmbeddingSource& src) const {
  EmbeddingSource out(src.dim(), src.provenance());
  for (const auto& [id, v] : src.entries()) out.set(id, apply(v));
  return out;
}

std::vector<double> AlignmentAdapter::train(const EmbeddingSource& src,
                                            const std::vector<Pair>& query_item,
                                            const std::vector<Pair>& item_item,
                                            const AdapterConfig& cfg, std::uint64_t seed) {
  std::vector<double> losses;
  if (query_item.empty() && item_item.empty()) return losses;
  Rng rng(seed);
  nn::OptimizerState opt;
  opt.learning_rate = cfg.learning_rate;
  auto& w = store_.get("align.w");

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const bool use_qi = item_item.empty() || (!query_item.empty() && step % 2 == 0);
    const auto& pool = use_qi ? query_item : item_item;
    // Partial Fisher-Yates draw of the batch.
    std::vector<std::size_t> idx(pool.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const std::size_t bsz = std::min(cfg.batch, pool.size());
    PairBatch batch;
    for (std::size_t i = 0; i < bsz; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
      batch.push_back(pool[idx[i]]);
    }

    std::set<std::string> ids;
    for (const auto& p : batch) ids.insert(p.anchor), ids.insert(p.positive);
    EmbeddingSource projected(dim_, src.provenance());
    for (const auto& id : ids) projected.set(id, apply(src.get(id)));

    const auto res = align_loss(batch, projected, cfg.tau);
    losses.push_back(res.loss);
    // out = h W  =>  dW += h^T g.
    for (const auto& [id, g] : res.grad) {
      const auto h = src.get(id);
      for (std::size_t i = 0; i < dim_; ++i)
        for (std::size_t j = 0; j < dim_; ++j) w.grad(i, j) += h[i] * g[j];
    }
    nn::optimizer_step(store_, opt);
  }
  return losses;
}

}  // namespace trm::align
