#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace trm::analysis {

struct ScalingPoint {
  double n = 0.0;     // dense parameter count
  double loss = 0.0;  // eval loss, nats
  std::optional<double> qauc;
};

struct ScalingFit {
  double l_inf = 0.0;
  double a = 0.0;
  double beta = 0.0;
  double residual_norm = 0.0;
  std::string method;         // "joint-lm" or "fixed-floor-loglog"
  bool identifiable = true;   // false for flat data
  std::size_t iterations = 0;
  double beta_se = 0.0;       // from the residual variance; 0 without spare degrees of freedom

  double predict(double n) const;
};

struct PowerLawOptions {
  std::size_t max_iter = 500;
  double beta_min = 1e-3;
  double beta_max = 5.0;
};

/// L(N) = L_inf + A * N^-beta by unweighted least squares: a beta grid with
/// the linear parameters solved exactly per grid value, then damped
/// Gauss-Newton (Levenberg-Marquardt) on all three. L_inf is kept in
/// [0, min loss]. Flat data yields identifiable = false with L_inf = mean.
/// Throws ConfigError on < 4 points or repeated N, FitError on failure.
ScalingFit fit_power_law(std::span<const ScalingPoint> points, PowerLawOptions opts = {});

/// Log-log regression of (loss - floor) on N with the floor held fixed.
/// Throws FitError if any loss is at or below the floor.
ScalingFit fit_power_law_fixed_floor(std::span<const ScalingPoint> points, double floor);

/// beta = 2s / (2s + d_eff).
double beta_sd(double s, double d_eff);

}  // namespace trm::analysis
