#include "trm/analysis/scaling.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <sstream>

#include "trm/error.hpp"

namespace trm::analysis {

double ScalingFit::predict(double n) const { return l_inf + a * std::pow(n, -beta); }

namespace {

// Internally A is carried at the centre of ln N (A_c = A * exp(-beta * xbar)),
// which decouples A and beta enough for the damped iteration.
struct Problem {
  std::vector<double> x;  // ln N - xbar
  std::vector<double> y;
  double xbar = 0.0;
  double ymin = 0.0;
};

struct Params {
  double l = 0.0;
  double ac = 0.0;
  double beta = 0.0;
};

double cost(const Problem& p, const Params& q) {
  double c = 0.0;
  for (std::size_t i = 0; i < p.x.size(); ++i) {
    const double r = q.l + q.ac * std::exp(-q.beta * p.x[i]) - p.y[i];
    c += r * r;
  }
  return c;
}

// Best (L, A_c) for a fixed beta under L in [0, ymin], A_c >= 0.
Params solve_linear(const Problem& p, double beta) {
  const std::size_t n = p.x.size();
  std::vector<double> g(n);
  double sg = 0, sgg = 0, sy = 0, sgy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    g[i] = std::exp(-beta * p.x[i]);
    sg += g[i];
    sgg += g[i] * g[i];
    sy += p.y[i];
    sgy += g[i] * p.y[i];
  }
  const double dn = static_cast<double>(n);
  std::vector<Params> cands;
  const double det = dn * sgg - sg * sg;
  if (std::abs(det) > 1e-300) {
    const double l = (sgg * sy - sg * sgy) / det;
    const double ac = (dn * sgy - sg * sy) / det;
    if (l >= 0.0 && l <= p.ymin && ac >= 0.0) cands.push_back({l, ac, beta});
  }
  for (double l : {0.0, p.ymin}) {
    double ac = 0.0;
    if (sgg > 0.0) ac = std::max(0.0, (sgy - l * sg) / sgg);
    cands.push_back({l, ac, beta});
  }
  cands.push_back({std::clamp(sy / dn, 0.0, p.ymin), 0.0, beta});
  Params best = cands[0];
  double bc = cost(p, best);
  for (const auto& c : cands) {
    const double v = cost(p, c);
    if (v < bc) bc = v, best = c;
  }
  return best;
}

// Solves the 3x3 system m * d = rhs by Gaussian elimination with pivoting.
bool solve3(std::array<std::array<double, 3>, 3> m, std::array<double, 3> rhs,
            std::array<double, 3>& d) {
  for (int c = 0; c < 3; ++c) {
    int piv = c;
    for (int r = c + 1; r < 3; ++r)
      if (std::abs(m[r][c]) > std::abs(m[piv][c])) piv = r;
    if (std::abs(m[piv][c]) < 1e-300) return false;
    std::swap(m[c], m[piv]);
    std::swap(rhs[c], rhs[piv]);
    for (int r = c + 1; r < 3; ++r) {
      const double f = m[r][c] / m[c][c];
      for (int k = c; k < 3; ++k) m[r][k] -= f * m[c][k];
      rhs[r] -= f * rhs[c];
    }
  }
  for (int r = 2; r >= 0; --r) {
    double s = rhs[r];
    for (int k = r + 1; k < 3; ++k) s -= m[r][k] * d[k];
    d[r] = s / m[r][r];
  }
  return true;
}

void validate(std::span<const ScalingPoint> points, std::size_t min_points) {
  if (points.size() < min_points)
    throw ConfigError("power-law fit needs at least " + std::to_string(min_points) + " points");
  std::set<double> ns;
  for (const auto& pt : points) {
    if (!(pt.n >= 1.0) || !std::isfinite(pt.loss))
      throw ConfigError("power-law fit: invalid point (N >= 1 and finite loss required)");
    if (!ns.insert(pt.n).second) throw ConfigError("power-law fit: repeated N");
  }
}

}  // namespace

ScalingFit fit_power_law(std::span<const ScalingPoint> points, PowerLawOptions opts) {
  validate(points, 4);
  Problem p;
  for (const auto& pt : points) {
    p.x.push_back(std::log(pt.n));
    p.y.push_back(pt.loss);
  }
  for (double x : p.x) p.xbar += x;
  p.xbar /= static_cast<double>(p.x.size());
  for (double& x : p.x) x -= p.xbar;
  const auto [ymin_it, ymax_it] = std::minmax_element(p.y.begin(), p.y.end());
  p.ymin = std::max(0.0, *ymin_it);

  ScalingFit fit;
  fit.method = "joint-lm";
  double mean = 0.0;
  for (double y : p.y) mean += y;
  mean /= static_cast<double>(p.y.size());
  if (*ymax_it - *ymin_it <= 1e-12 * std::max(1.0, std::abs(mean))) {
    fit.l_inf = mean;
    fit.identifiable = false;
    double rss = 0.0;
    for (double y : p.y) rss += (y - mean) * (y - mean);
    fit.residual_norm = std::sqrt(rss);
    return fit;
  }

  // Profile grid over beta.
  Params q;
  double c = INFINITY;
  const std::size_t grid = 400;
  for (std::size_t k = 0; k < grid; ++k) {
    const double beta = opts.beta_min * std::pow(opts.beta_max / opts.beta_min,
                                                 static_cast<double>(k) / (grid - 1));
    const Params cand = solve_linear(p, beta);
    const double v = cost(p, cand);
    if (v < c) c = v, q = cand;
  }

  double mu = 1e-3;
  bool converged = false;
  std::size_t it = 0;
  for (; it < opts.max_iter; ++it) {
    std::array<std::array<double, 3>, 3> jtj{};
    std::array<double, 3> jtr{};
    for (std::size_t i = 0; i < p.x.size(); ++i) {
      const double g = std::exp(-q.beta * p.x[i]);
      const double r = q.l + q.ac * g - p.y[i];
      const std::array<double, 3> j{1.0, g, -q.ac * p.x[i] * g};
      for (int a = 0; a < 3; ++a) {
        jtr[a] += j[a] * r;
        for (int b = 0; b < 3; ++b) jtj[a][b] += j[a] * j[b];
      }
    }
    if (c <= 1e-30) {
      converged = true;
      break;
    }

    // Active set: a parameter sitting on a bound with the gradient pushing
    // outward is held fixed for this step.
    std::array<bool, 3> fixed{(q.l <= 0.0 && jtr[0] > 0.0) || (q.l >= p.ymin && jtr[0] < 0.0),
                              q.ac <= 0.0 && jtr[1] > 0.0, false};
    bool accepted = false;
    while (mu < 1e20) {
      auto m = jtj;
      std::array<double, 3> rhs{-jtr[0], -jtr[1], -jtr[2]};
      for (int a = 0; a < 3; ++a) m[a][a] += mu * std::max(jtj[a][a], 1e-12);
      for (int a = 0; a < 3; ++a)
        if (fixed[a]) {
          for (int b = 0; b < 3; ++b) m[a][b] = m[b][a] = 0.0;
          m[a][a] = 1.0;
          rhs[a] = 0.0;
        }
      std::array<double, 3> d{};
      if (!solve3(m, rhs, d)) {
        mu *= 4.0;
        continue;
      }
      Params cand{std::clamp(q.l + d[0], 0.0, p.ymin), std::max(0.0, q.ac + d[1]),
                  std::clamp(q.beta + d[2], opts.beta_min * 1e-3, opts.beta_max * 4)};
      const double v = cost(p, cand);
      if (std::isfinite(v) && v < c) {
        const double rel = (c - v) / std::max(c, 1e-300);
        const double step = std::abs(cand.l - q.l) / std::max(1e-12, std::abs(q.l)) +
                            std::abs(cand.ac - q.ac) / std::max(1e-12, std::abs(q.ac)) +
                            std::abs(cand.beta - q.beta) / std::max(1e-12, q.beta);
        q = cand;
        c = v;
        mu = std::max(mu / 3.0, 1e-12);
        accepted = true;
        if (rel < 1e-12 || step < 1e-10) converged = true;
        break;
      }
      mu *= 4.0;
    }
    if (!accepted) {
      // No descent direction left at any damping: a (constrained) minimum.
      converged = true;
      break;
    }
    if (converged) break;
  }
  if (!converged || !std::isfinite(c)) {
    std::ostringstream msg;
    msg << "power-law fit did not converge after " << it << " iterations (L_inf=" << q.l
        << ", A_c=" << q.ac << ", beta=" << q.beta << ", rss=" << c << ")";
    throw FitError(msg.str());
  }

  fit.l_inf = q.l;
  fit.beta = q.beta;
  fit.a = q.ac * std::exp(q.beta * p.xbar);
  fit.residual_norm = std::sqrt(c);
  fit.iterations = it;
  fit.identifiable = q.ac > 0.0;

  // Linearized covariance s^2 (J^T J)^-1 at the optimum; beta's diagonal entry.
  if (p.x.size() > 3 && fit.identifiable) {
    std::array<std::array<double, 3>, 3> jtj{};
    for (std::size_t i = 0; i < p.x.size(); ++i) {
      const double g = std::exp(-q.beta * p.x[i]);
      const std::array<double, 3> j{1.0, g, -q.ac * p.x[i] * g};
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) jtj[a][b] += j[a] * j[b];
    }
    std::array<double, 3> col{};
    if (solve3(jtj, {0.0, 0.0, 1.0}, col) && col[2] > 0.0)
      fit.beta_se = std::sqrt(c / static_cast<double>(p.x.size() - 3) * col[2]);
  }
  return fit;
}

ScalingFit fit_power_law_fixed_floor(std::span<const ScalingPoint> points, double floor) {
  validate(points, 3);
  const std::size_t n = points.size();
  std::vector<double> x(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(points[i].loss > floor))
      throw FitError("fixed-floor fit: loss " + std::to_string(points[i].loss) +
                     " at N=" + std::to_string(points[i].n) + " is not above the floor " +
                     std::to_string(floor));
    x[i] = std::log(points[i].n);
    y[i] = std::log(points[i].loss - floor);
  }
  double xm = 0, ym = 0;
  for (std::size_t i = 0; i < n; ++i) xm += x[i], ym += y[i];
  xm /= n;
  ym /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - xm) * (x[i] - xm);
    sxy += (x[i] - xm) * (y[i] - ym);
  }
  const double slope = sxy / sxx;
  const double icept = ym - slope * xm;
  double ssr = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - (icept + slope * x[i]);
    ssr += r * r;
  }
  ScalingFit fit;
  fit.method = "fixed-floor-loglog";
  fit.l_inf = floor;
  fit.beta = -slope;
  fit.a = std::exp(icept);
  fit.beta_se = n > 2 ? std::sqrt(ssr / static_cast<double>(n - 2) / sxx) : 0.0;
  double rss = 0.0;
  for (const auto& pt : points) {
    const double r = fit.predict(pt.n) - pt.loss;
    rss += r * r;
  }
  fit.residual_norm = std::sqrt(rss);
  return fit;
}

double beta_sd(double s, double d_eff) {
  if (!(s > 0.0) || d_eff < 0.0) throw ConfigError("beta_sd needs s > 0 and d_eff >= 0");
  return 2.0 * s / (2.0 * s + d_eff);
}

}  // namespace trm::analysis
