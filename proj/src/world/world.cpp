#include "trm/world/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "trm/error.hpp"
#include "trm/nn/loss.hpp"
#include "trm/util/seed.hpp"

namespace trm::world {

namespace {

// Sub-streams of the world seed.
enum Stream : std::uint64_t { kCentres = 0, kCatalog = 1, kEvents = 2, kContent = 3, kBayes = 4 };

nn::Tensor2 mixture_centres(const WorldConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, kCentres));
  std::normal_distribution<double> g(0.0, cfg.mixture_spread);
  nn::Tensor2 c(cfg.mixture_components, cfg.latent_dim);
  for (double& v : c.values()) v = g(rng);
  return c;
}

double dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return std::sqrt(s);
}

}  // namespace

void WorldConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("world: " + msg);
  };
  need(latent_dim >= 1, "latent_dim must be >= 1");
  need(items >= 1, "items must be >= 1");
  need(mixture_components >= 1, "mixture_components must be >= 1");
  need(mixture_spread >= 0.0 && mixture_sd >= 0.0, "mixture scales must be >= 0");
  need(zipf_exponent >= 0.0, "zipf_exponent must be >= 0");
  need(churn_rate >= 0.0 && churn_rate < 1.0, "churn_rate must lie in [0, 1)");
  need(users >= 1 && queries >= 1, "need at least one user and one query");
  need(anchors >= 1, "anchors must be >= 1");
  need(anchor_radius > 0.0, "anchor_radius must be > 0");
  need(smoothness > 0.0 && smoothness <= 1.0, "smoothness s must lie in (0, 1]");
  need(lipschitz > 0.0, "lipschitz must be > 0");
  need(std::isfinite(offset), "offset must be finite");
  need(content_dim >= latent_dim + nuisance_dim, "content_dim must be >= latent_dim + nuisance_dim");
  need(content_noise >= 0.0 && nuisance_scale >= 0.0, "content noise scales must be >= 0");
  need(content_views >= 1, "content_views must be >= 1");
  need(epochs >= 1, "epochs must be >= 1");
}

const char* to_string(ChurnMode m) { return m == ChurnMode::oldest ? "oldest" : "uniform"; }

ChurnMode churn_mode_from_string(const std::string& s) {
  if (s == "oldest") return ChurnMode::oldest;
  if (s == "uniform") return ChurnMode::uniform;
  throw ConfigError("unknown churn mode '" + s + "' (expected oldest or uniform)");
}

std::vector<double> BayesModel::mixing(std::size_t u, std::size_t q) const {
  const std::size_t k = anchors.rows();
  std::vector<double> c(k);
  double l1 = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    c[i] = user_weights(u, i) + query_weights(q, i);
    l1 += std::abs(c[i]);
  }
  if (l1 > 0.0)
    for (double& v : c) v /= l1;
  return c;
}

double BayesModel::eta(std::span<const double> c, std::span<const double> z) const {
  double e = offset;
  for (std::size_t k = 0; k < anchors.rows(); ++k) {
    if (c[k] == 0.0) continue;
    const double bump = radii[k] - std::pow(dist(z, anchors.row(k)), smoothness);
    if (bump > 0.0) e += c[k] * lipschitz * bump;
  }
  return e;
}

double BayesModel::eta(std::size_t u, std::size_t q, std::span<const double> z) const {
  const auto c = mixing(u, q);
  return eta(c, z);
}

double BayesModel::prob(std::size_t u, std::size_t q, std::span<const double> z) const {
  return nn::sigmoid(eta(u, q, z));
}

BayesModel build_bayes(const WorldConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, kBayes));
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> jitter(0.8, 1.2);
  const auto centres = mixture_centres(cfg);
  BayesModel b;
  b.smoothness = cfg.smoothness;
  b.lipschitz = cfg.lipschitz;
  b.offset = cfg.offset;
  b.anchors = nn::Tensor2(cfg.anchors, cfg.latent_dim);
  for (std::size_t k = 0; k < cfg.anchors; ++k) {
    const auto c = centres.row(k % centres.rows());
    for (std::size_t j = 0; j < cfg.latent_dim; ++j) b.anchors(k, j) = c[j] + cfg.mixture_sd * g(rng);
    b.radii.push_back(cfg.anchor_radius * jitter(rng));
  }
  b.user_weights = nn::Tensor2(cfg.users, cfg.anchors);
  b.query_weights = nn::Tensor2(cfg.queries, cfg.anchors);
  for (double& v : b.user_weights.values()) v = g(rng);
  for (double& v : b.query_weights.values()) v = g(rng);
  return b;
}

HolderCertificate holder_certificate(const BayesModel& bayes, std::size_t pairs,
                                     std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> logscale(-4.0, 0.7);
  std::uniform_int_distribution<std::size_t> pick_u(0, bayes.users() - 1);
  std::uniform_int_distribution<std::size_t> pick_q(0, bayes.queries() - 1);
  std::uniform_int_distribution<std::size_t> pick_k(0, bayes.anchors.rows() - 1);
  const std::size_t d = bayes.dim();
  HolderCertificate cert;
  cert.pairs = pairs;
  std::vector<double> z1(d), z2(d), dir(d);
  for (std::size_t i = 0; i < pairs; ++i) {
    const std::size_t k = pick_k(rng);
    for (std::size_t j = 0; j < d; ++j) z1[j] = bayes.anchors(k, j) + bayes.radii[k] * g(rng);
    double n = 0.0;
    for (double& v : dir) v = g(rng), n += v * v;
    n = std::sqrt(n);
    const double t = std::pow(10.0, logscale(rng));
    for (std::size_t j = 0; j < d; ++j) z2[j] = z1[j] + t * dir[j] / n;
    const auto c = bayes.mixing(pick_u(rng), pick_q(rng));
    const double lhs = std::abs(bayes.eta(c, z1) - bayes.eta(c, z2));
    const double rhs = bayes.lipschitz * std::pow(dist(z1, z2), bayes.smoothness);
    if (rhs > 0.0) cert.max_ratio = std::max(cert.max_ratio, lhs / rhs);
    if (lhs > rhs * (1.0 + 1e-9) + 1e-12) ++cert.violations;
  }
  return cert;
}

Catalog gen_catalog(const WorldConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, kCatalog));
  const auto centres = mixture_centres(cfg);
  std::normal_distribution<double> g(0.0, cfg.mixture_sd);
  std::uniform_int_distribution<std::size_t> comp(0, centres.rows() - 1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  Catalog cat;
  auto born = [&](std::size_t slot, std::size_t epoch) {
    ItemRecord it;
    it.id = cat.items.size();
    it.slot = slot;
    it.birth = epoch;
    const auto c = centres.row(comp(rng));
    for (std::size_t j = 0; j < cfg.latent_dim; ++j) it.z.push_back(c[j] + g(rng));
    cat.items.push_back(std::move(it));
    return cat.items.back().id;
  };

  const std::size_t n = cfg.items;
  cat.slot_weight.resize(n);
  for (std::size_t s = 0; s < n; ++s)
    cat.slot_weight[s] = std::pow(static_cast<double>(s + 1), -cfg.zipf_exponent);
  const double total = std::accumulate(cat.slot_weight.begin(), cat.slot_weight.end(), 0.0);
  for (double& w : cat.slot_weight) w /= total;

  std::vector<std::uint64_t> current(n);
  for (std::size_t s = 0; s < n; ++s) current[s] = born(s, 0);
  cat.slot_item.push_back(current);
  cat.retired_per_epoch.push_back(0);

  const auto k = static_cast<std::size_t>(std::llround(cfg.churn_rate * static_cast<double>(n)));
  for (std::size_t e = 1; e < cfg.epochs; ++e) {
    std::vector<std::size_t> slots(n);
    std::iota(slots.begin(), slots.end(), 0);
    if (cfg.churn_mode == ChurnMode::uniform) {
      for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(slots[i], slots[pick(rng)]);
      }
    } else {
      // Weighted sampling without replacement, weight = age + 1: keep the k
      // largest log(U) / w.
      std::vector<double> key(n);
      for (std::size_t s = 0; s < n; ++s) {
        const double w = static_cast<double>(e - cat.items[current[s]].birth + 1);
        key[s] = std::log(unif(rng)) / w;
      }
      std::stable_sort(slots.begin(), slots.end(),
                       [&](std::size_t a, std::size_t b) { return key[a] > key[b]; });
    }
    slots.resize(k);
    std::sort(slots.begin(), slots.end());
    for (std::size_t s : slots) {
      cat.items[current[s]].retire = e;
      current[s] = born(s, e);
    }
    cat.slot_item.push_back(current);
    cat.retired_per_epoch.push_back(k);
  }
  return cat;
}

double expected_survivors(std::size_t items, double rho, std::size_t rounds) {
  return static_cast<double>(items) * std::pow(1.0 - rho, static_cast<double>(rounds));
}

double zipf_top_share(std::size_t n, std::size_t top, double exponent) {
  double h_top = 0.0, h_n = 0.0;
  for (std::size_t r = 1; r <= n; ++r) {
    const double w = std::pow(static_cast<double>(r), -exponent);
    h_n += w;
    if (r <= top) h_top += w;
  }
  return h_top / h_n;
}

EventLog sample_events(const Catalog& catalog, const BayesModel& bayes, std::size_t epochs,
                       std::size_t events_per_epoch, std::uint64_t seed) {
  if (epochs > catalog.epochs())
    throw ConfigError("sample_events: catalog has only " + std::to_string(catalog.epochs()) +
                      " epochs");
  if (!catalog.items.empty() && catalog.items.front().z.size() != bayes.dim())
    throw ConfigError("sample_events: catalog and Bayes model disagree on d*");
  Rng rng(seed);
  std::uniform_int_distribution<std::uint32_t> pick_u(0, bayes.users() - 1);
  std::uniform_int_distribution<std::uint32_t> pick_q(0, bayes.queries() - 1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  std::vector<std::vector<double>> mix(bayes.users() * bayes.queries());
  for (std::size_t u = 0; u < bayes.users(); ++u)
    for (std::size_t q = 0; q < bayes.queries(); ++q) mix[u * bayes.queries() + q] = bayes.mixing(u, q);

  std::vector<double> cum(catalog.slot_weight.size());
  std::partial_sum(catalog.slot_weight.begin(), catalog.slot_weight.end(), cum.begin());

  EventLog log;
  log.exposures.assign(catalog.items.size(), 0);
  log.events.reserve(epochs * events_per_epoch);
  for (std::size_t e = 0; e < epochs; ++e) {
    const auto& alive = catalog.alive(e);
    for (std::size_t i = 0; i < events_per_epoch; ++i) {
      Event ev;
      ev.epoch = static_cast<std::uint32_t>(e);
      ev.user = pick_u(rng);
      ev.query = pick_q(rng);
      const double r = unif(rng) * cum.back();
      const auto slot = std::min<std::size_t>(
          std::upper_bound(cum.begin(), cum.end(), r) - cum.begin(), cum.size() - 1);
      ev.item = alive[slot];
      const double eta =
          bayes.eta(mix[ev.user * bayes.queries() + ev.query], catalog.items[ev.item].z);
      const double draw = unif(rng);
      ev.ctr = draw < nn::sigmoid(eta);
      ev.real_play = draw < nn::sigmoid(eta - 0.5);
      ++log.exposures[ev.item];
      log.events.push_back(ev);
    }
  }
  return log;
}

Population exposure_population(const Catalog& catalog, std::size_t epoch) {
  const auto& alive = catalog.alive(epoch);
  Population pop;
  const std::size_t d = catalog.items.empty() ? 0 : catalog.items.front().z.size();
  pop.z = nn::Tensor2(alive.size(), d);
  for (std::size_t s = 0; s < alive.size(); ++s) {
    const auto& z = catalog.items[alive[s]].z;
    std::copy(z.begin(), z.end(), pop.z.row(s).begin());
    pop.weight.push_back(catalog.slot_weight[s]);
    pop.ids.push_back(alive[s]);
  }
  return pop;
}

BayesRisks bayes_risks(const BayesModel& bayes, const Population& pop,
                       std::span<const std::size_t> cell_of_item, std::size_t cap) {
  const std::size_t n = pop.z.rows();
  if (cell_of_item.size() != n) throw ConfigError("bayes_risks: one cell per item required");
  const std::size_t contexts = bayes.users() * bayes.queries();
  if (n != 0 && contexts > cap / n)
    throw CapacityError("bayes_risks: " + std::to_string(contexts) + " contexts x " +
                        std::to_string(n) + " items exceeds the enumeration cap " +
                        std::to_string(cap) + "; shrink the world or raise the cap");
  BayesRisks out;
  if (n == 0) return out;

  // Dense cell indices in first-seen order.
  std::map<std::size_t, std::size_t> dense;
  std::vector<std::size_t> cell(n);
  for (std::size_t i = 0; i < n; ++i)
    cell[i] = dense.try_emplace(cell_of_item[i], dense.size()).first->second;
  out.cells = dense.size();

  std::vector<double> cell_w(out.cells, 0.0);
  std::vector<std::size_t> cell_n(out.cells, 0), sole(out.cells, 0);
  for (std::size_t i = 0; i < n; ++i) {
    cell_w[cell[i]] += pop.weight[i];
    ++cell_n[cell[i]];
    sole[cell[i]] = i;
  }

  const double ctx_w = 1.0 / static_cast<double>(contexts);
  std::vector<double> p(n), cell_p(out.cells);
  long double l_inf = 0.0, delta = 0.0;
  for (std::size_t u = 0; u < bayes.users(); ++u)
    for (std::size_t q = 0; q < bayes.queries(); ++q) {
      const auto c = bayes.mixing(u, q);
      std::fill(cell_p.begin(), cell_p.end(), 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        p[i] = nn::sigmoid(bayes.eta(c, pop.z.row(i)));
        cell_p[cell[i]] += pop.weight[i] * p[i];
      }
      // A singleton cell predicts its own p* exactly (no roundoff from w p / w).
      for (std::size_t k = 0; k < out.cells; ++k)
        cell_p[k] = cell_n[k] == 1 ? p[sole[k]] : cell_w[k] > 0.0 ? cell_p[k] / cell_w[k] : 0.5;
      for (std::size_t i = 0; i < n; ++i) {
        if (pop.weight[i] == 0.0) continue;
        l_inf += ctx_w * pop.weight[i] * nn::binary_entropy(p[i]);
        // KL >= 0; roundoff near p = p~ can dip below.
        delta += ctx_w * pop.weight[i] * std::max(0.0, nn::bernoulli_kl(p[i], cell_p[cell[i]]));
      }
    }
  out.l_inf = static_cast<double>(l_inf);
  out.delta_quant = static_cast<double>(delta);
  out.l_inf_tok = out.l_inf + out.delta_quant;
  return out;
}

BayesRisks bayes_risks(const BayesModel& bayes, const Population& pop,
                       const rq::ResidualQuantizer& q, std::size_t cap) {
  std::map<std::vector<std::uint32_t>, std::size_t> ids;
  std::vector<std::size_t> cells(pop.z.rows());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto seq = rq::rq_encode(q, pop.z.row(i));
    cells[i] = ids.try_emplace(seq.gen_tokens, ids.size()).first->second;
  }
  return bayes_risks(bayes, pop, cells, cap);
}

align::EmbeddingSource content_embeddings(const WorldConfig& cfg, const BayesModel& bayes,
                                          const Catalog& catalog) {
  Rng rng(derive_seed(cfg.seed, kContent));
  std::normal_distribution<double> g;
  const std::size_t d = cfg.latent_dim;
  const std::size_t m = d + cfg.nuisance_dim;

  // Orthonormal columns R (content_dim x m) by Gram-Schmidt.
  nn::Tensor2 r(cfg.content_dim, m);
  for (std::size_t c = 0; c < m; ++c) {
    for (;;) {
      std::vector<double> v(cfg.content_dim);
      for (double& x : v) x = g(rng);
      for (std::size_t p = 0; p < c; ++p) {
        double dot = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) dot += v[i] * r(i, p);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= dot * r(i, p);
      }
      const double n = nn::l2_norm(v);
      if (n < 1e-8) continue;
      for (std::size_t i = 0; i < v.size(); ++i) r(i, c) = v[i] / n;
      break;
    }
  }
  auto project = [&](const std::vector<double>& latent) {
    std::vector<double> h(cfg.content_dim, 0.0);
    for (std::size_t i = 0; i < cfg.content_dim; ++i)
      for (std::size_t c = 0; c < m; ++c) h[i] += r(i, c) * latent[c];
    return h;
  };
  // Views share the entity's latent and nuisance, each with its own noise.
  auto embed = [&](std::span<const double> z) {
    std::vector<double> nuisance(cfg.nuisance_dim);
    for (double& x : nuisance) x = cfg.nuisance_scale * g(rng);
    std::vector<std::vector<double>> views;
    for (std::size_t v = 0; v < cfg.content_views; ++v) {
      std::vector<double> latent(m);
      for (std::size_t j = 0; j < d; ++j) latent[j] = z[j] + cfg.content_noise * g(rng);
      for (std::size_t j = 0; j < cfg.nuisance_dim; ++j)
        latent[d + j] = nuisance[j] + cfg.content_noise * g(rng);
      views.push_back(project(latent));
    }
    return align::mean_pool(views);
  };

  align::EmbeddingSource src(cfg.content_dim, align::Provenance::synthetic);
  for (const auto& it : catalog.items) src.set("item:" + std::to_string(it.id), embed(it.z));
  // A query sits at the centroid of the anchors it favours.
  for (std::size_t q = 0; q < bayes.queries(); ++q) {
    std::vector<double> centre(d, 0.0);
    double wsum = 0.0;
    for (std::size_t k = 0; k < bayes.anchors.rows(); ++k) {
      const double w = std::max(0.0, bayes.query_weights(q, k));
      wsum += w;
      for (std::size_t j = 0; j < d; ++j) centre[j] += w * bayes.anchors(k, j);
    }
    if (wsum == 0.0) {
      for (std::size_t k = 0; k < bayes.anchors.rows(); ++k)
        for (std::size_t j = 0; j < d; ++j) centre[j] += bayes.anchors(k, j);
      wsum = static_cast<double>(bayes.anchors.rows());
    }
    for (double& x : centre) x /= wsum;
    src.set("query:" + std::to_string(q), embed(centre));
  }
  return src;
}

ClickPairs click_pairs(const EventLog& log, std::size_t end_epoch, std::size_t min_coclicks,
                       std::size_t max_item_pairs) {
  ClickPairs out;
  std::set<std::pair<std::uint32_t, std::uint64_t>> qi;
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::set<std::uint64_t>> by_ctx;
  for (const auto& e : log.events) {
    if (e.epoch >= end_epoch || !e.ctr) continue;
    qi.emplace(e.query, e.item);
    by_ctx[{e.user, e.query}].insert(e.item);
  }
  for (const auto& [q, i] : qi)
    out.query_item.push_back(
        {"query:" + std::to_string(q), "item:" + std::to_string(i), align::PairKind::query_item});

  std::map<std::pair<std::uint64_t, std::uint64_t>, std::size_t> co;
  for (const auto& [ctx, items] : by_ctx)
    for (auto a = items.begin(); a != items.end(); ++a)
      for (auto b = std::next(a); b != items.end(); ++b) ++co[{*a, *b}];
  std::vector<std::pair<std::size_t, std::pair<std::uint64_t, std::uint64_t>>> ranked;
  for (const auto& [pr, n] : co)
    if (n >= min_coclicks) ranked.push_back({n, pr});
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  if (ranked.size() > max_item_pairs) ranked.resize(max_item_pairs);
  for (const auto& [n, pr] : ranked)
    out.item_item.push_back({"item:" + std::to_string(pr.first),
                             "item:" + std::to_string(pr.second), align::PairKind::item_item});
  return out;
}

World build_world(const WorldConfig& cfg) {
  cfg.validate();
  World w;
  w.cfg = cfg;
  w.bayes = build_bayes(cfg);
  w.catalog = gen_catalog(cfg);
  w.log = sample_events(w.catalog, w.bayes, cfg.epochs, cfg.events_per_epoch,
                        derive_seed(cfg.seed, kEvents));
  w.content = content_embeddings(cfg, w.bayes, w.catalog);
  return w;
}

std::uint64_t file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 14];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace trm::world
