#include "trm/analysis/theory.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "trm/error.hpp"
#include "trm/nn/loss.hpp"
#include "trm/nn/tensor.hpp"

namespace trm::analysis {

FloorBoundCheck verify_floor_bound(const world::BayesModel& bayes, const world::Population& pop,
                                   const rq::ResidualQuantizer& q, std::size_t cap) {
  FloorBoundCheck out;
  out.delta_quant = world::bayes_risks(bayes, pop, q, cap).delta_quant;
  out.delta_s =
      rq::distortion_moment(q, pop.z, bayes.smoothness, std::span<const double>(pop.weight)).delta_s;
  out.bound = bayes.lipschitz * out.delta_s;
  out.slack = out.bound - out.delta_quant;
  out.holds = out.delta_quant <= out.bound + 1e-9;
  return out;
}

std::vector<MomentRow> verify_moment_bound_from_norms(std::span<const double> residual_norms,
                                                      std::span<const double> s_grid,
                                                      std::optional<std::span<const double>> weights) {
  const double d = rq::distortion_moment_from_norms(residual_norms, 2.0, weights).delta_s;
  std::vector<MomentRow> rows;
  for (double s : s_grid) {
    if (!(s > 0.0 && s <= 2.0)) throw ConfigError("moment bound needs s in (0, 2]");
    MomentRow r;
    r.s = s;
    r.delta_s = rq::distortion_moment_from_norms(residual_norms, s, weights).delta_s;
    r.bound = std::pow(d, s / 2.0);
    r.holds = r.delta_s <= r.bound * (1.0 + 1e-12) + 1e-300;
    rows.push_back(r);
  }
  return rows;
}

std::vector<MomentRow> verify_moment_bound(const rq::ResidualQuantizer& q,
                                           const nn::Tensor2& embeddings,
                                           std::span<const double> s_grid,
                                           std::optional<std::span<const double>> weights) {
  std::vector<double> norms(embeddings.rows());
  for (std::size_t i = 0; i < norms.size(); ++i)
    norms[i] = nn::l2_norm(rq::rq_residual(q, embeddings.row(i)));
  return verify_moment_bound_from_norms(norms, s_grid, weights);
}

bool beta_sd_monotone(std::span<const double> s_grid, std::span<const double> d_grid) {
  for (std::size_t i = 0; i < s_grid.size(); ++i)
    for (std::size_t j = 0; j < d_grid.size(); ++j) {
      if (i + 1 < s_grid.size() && s_grid[i + 1] > s_grid[i] &&
          !(beta_sd(s_grid[i + 1], d_grid[j]) > beta_sd(s_grid[i], d_grid[j])))
        return false;
      if (j + 1 < d_grid.size() && d_grid[j + 1] > d_grid[j] &&
          !(beta_sd(s_grid[i], d_grid[j + 1]) < beta_sd(s_grid[i], d_grid[j])))
        return false;
    }
  return true;
}

namespace {

struct Enumeration {
  nn::Tensor2 x;  // one row per (u, q, item): [c(u, q) | z]
  std::vector<double> target;
  std::vector<double> weight;
};

Enumeration enumerate(const world::BayesModel& bayes, const world::Population& pop,
                      const nn::Tensor2& inputs) {
  const std::size_t k = bayes.anchors.rows();
  const std::size_t d = inputs.cols();
  const std::size_t n = pop.z.rows();
  const std::size_t ctx = bayes.users() * bayes.queries();
  Enumeration e;
  e.x = nn::Tensor2(ctx * n, k + d);
  std::size_t r = 0;
  for (std::size_t u = 0; u < bayes.users(); ++u)
    for (std::size_t q = 0; q < bayes.queries(); ++q) {
      const auto c = bayes.mixing(u, q);
      for (std::size_t i = 0; i < n; ++i, ++r) {
        std::copy(c.begin(), c.end(), e.x.row(r).begin());
        std::copy(inputs.row(i).begin(), inputs.row(i).end(), e.x.row(r).begin() + k);
        e.target.push_back(nn::sigmoid(bayes.eta(c, pop.z.row(i))));
        e.weight.push_back(pop.weight[i] / static_cast<double>(ctx));
      }
    }
  return e;
}

double weighted_bce(const Enumeration& e, const Eigen::VectorXd& f) {
  double l = 0.0;
  for (Eigen::Index r = 0; r < f.size(); ++r) l += e.weight[r] * nn::bce_from_logit(e.target[r], f[r]);
  return l;
}

// Frozen ReLU features feeding a logistic readout. Feature j is the same for
// every size, so the sets are nested and the optimum cannot rise with N. The
// readout is convex and solved by damped Newton.
ScalingPoint train_population_tower(const Enumeration& e, std::size_t features,
                                    const DecompositionConfig& cfg) {
  const auto rows = static_cast<Eigen::Index>(e.x.rows());
  const std::size_t in = e.x.cols();
  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd phi(rows, static_cast<Eigen::Index>(features) + 1);
  phi.col(0).setOnes();
  for (std::size_t j = 0; j < features; ++j) {
    std::vector<double> a(in);
    for (auto& v : a) v = normal(rng);
    const double b = normal(rng);
    for (Eigen::Index r = 0; r < rows; ++r) {
      double h = b;
      for (std::size_t k = 0; k < in; ++k) h += a[k] * e.x(r, k);
      phi(r, static_cast<Eigen::Index>(j) + 1) = std::max(0.0, h);
    }
  }
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(phi.cols());
  Eigen::VectorXd f = phi * theta;
  double loss = weighted_bce(e, f);
  for (std::size_t it = 0; it < cfg.newton_iterations; ++it) {
    Eigen::VectorXd g(rows), h(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const double p = nn::sigmoid(f[r]);
      g[r] = e.weight[r] * (p - e.target[r]);
      h[r] = e.weight[r] * p * (1.0 - p);
    }
    const Eigen::VectorXd grad = phi.transpose() * g;
    if (grad.norm() < 1e-13) break;
    Eigen::MatrixXd hess = phi.transpose() * h.asDiagonal() * phi;
    hess.diagonal().array() += cfg.ridge;
    const Eigen::VectorXd step = hess.ldlt().solve(grad);
    double t = 1.0;
    for (; t > 1e-8; t *= 0.5) {
      const Eigen::VectorXd cand = theta - t * step;
      const Eigen::VectorXd fc = phi * cand;
      const double lc = weighted_bce(e, fc);
      if (lc <= loss) {
        theta = cand;
        f = fc;
        const double gain = loss - lc;
        loss = lc;
        t = gain < 1e-15 ? 0.0 : t;
        break;
      }
    }
    if (t <= 1e-8) break;
  }
  return {static_cast<double>(phi.cols()), loss, {}};
}

}  // namespace

DecompositionCheck verify_decomposition(const world::BayesModel& bayes,
                                        const world::Population& pop,
                                        const rq::ResidualQuantizer& q,
                                        const DecompositionConfig& cfg) {
  if (cfg.features.size() < 4) throw ConfigError("decomposition check needs >= 4 tower sizes");
  DecompositionCheck out;
  out.risks = world::bayes_risks(bayes, pop, q);

  nn::Tensor2 quantized(pop.z.rows(), pop.z.cols());
  for (std::size_t i = 0; i < pop.z.rows(); ++i) {
    const auto zq = rq::rq_decode(q, rq::rq_encode(q, pop.z.row(i)));
    std::copy(zq.begin(), zq.end(), quantized.row(i).begin());
  }
  const auto full = enumerate(bayes, pop, pop.z);
  const auto quant = enumerate(bayes, pop, quantized);
  for (std::size_t i = 0; i < cfg.features.size(); ++i) {
    out.full.push_back(train_population_tower(full, cfg.features[i], cfg));
    out.quantized.push_back(train_population_tower(quant, cfg.features[i], cfg));
  }
  out.fit_full = fit_power_law_fixed_floor(out.full, out.risks.l_inf);
  out.fit_joint = fit_power_law(out.quantized);
  out.fit_shifted = fit_power_law_fixed_floor(out.quantized, out.risks.l_inf_tok);
  out.beta_gap = std::abs(out.fit_joint.beta - out.fit_shifted.beta);
  out.tolerance = 2.0 * std::hypot(out.fit_joint.beta_se, out.fit_shifted.beta_se);
  out.holds = out.beta_gap <= out.tolerance;
  return out;
}

}  // namespace trm::analysis
