#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "trm/analysis/scaling.hpp"
#include "trm/rq/quantizer.hpp"
#include "trm/world/world.hpp"

namespace trm::analysis {

struct FloorBoundCheck {
  double delta_quant = 0.0;
  double delta_s = 0.0;
  double bound = 0.0;  // L_eta * delta_s
  double slack = 0.0;  // bound - delta_quant
  bool holds = false;  // delta_quant <= bound + 1e-9
};

/// Delta_quant by exact enumeration, delta_s over the population weights with
/// the model's own s, the quantizer applied to z.
FloorBoundCheck verify_floor_bound(const world::BayesModel& bayes, const world::Population& pop,
                                   const rq::ResidualQuantizer& q,
                                   std::size_t cap = world::kDefaultEnumerationCap);

struct MomentRow {
  double s = 0.0;
  double delta_s = 0.0;
  double bound = 0.0;  // D^(s/2)
  bool holds = false;
};

/// delta_s <= D^(s/2) for each s (Jensen, s in (0, 2]). Throws ConfigError
/// for s outside that range.
std::vector<MomentRow> verify_moment_bound(const rq::ResidualQuantizer& q,
                                           const nn::Tensor2& embeddings,
                                           std::span<const double> s_grid,
                                           std::optional<std::span<const double>> weights = {});
std::vector<MomentRow> verify_moment_bound_from_norms(
    std::span<const double> residual_norms, std::span<const double> s_grid,
    std::optional<std::span<const double>> weights = {});

/// beta_sd is increasing in s and decreasing in d_eff on the given grids.
bool beta_sd_monotone(std::span<const double> s_grid, std::span<const double> d_grid);

struct DecompositionConfig {
  std::vector<std::size_t> features{4, 8, 16, 32, 64, 128};  // nested, ascending
  std::size_t newton_iterations = 60;
  double ridge = 1e-9;
  std::uint64_t seed = 1;
};

struct DecompositionCheck {
  std::vector<ScalingPoint> full;       // tower on (c, z)
  std::vector<ScalingPoint> quantized;  // tower on (c, decode(encode(z)))
  world::BayesRisks risks;
  ScalingFit fit_full;         // raw z, floor pinned at L_inf (reference only)
  ScalingFit fit_joint;        // quantized curve, free floor
  ScalingFit fit_shifted;      // quantized curve, floor pinned at L_inf + Delta_quant
  double beta_gap = 0.0;       // |joint - shifted|
  double tolerance = 0.0;      // 2 * combined standard error
  bool holds = false;
};

/// Fits one random-feature tower per size on the exposure-weighted
/// enumeration with soft labels p*, on quantized z (and on raw z for
/// reference). Holds when the free-floor fit of the quantized curve finds the
/// same exponent as the fit against the shifted floor. Needs >= 4 sizes.
DecompositionCheck verify_decomposition(const world::BayesModel& bayes,
                                        const world::Population& pop,
                                        const rq::ResidualQuantizer& q,
                                        const DecompositionConfig& cfg);

}  // namespace trm::analysis
