#pragma once

#include <functional>
#include <string>

#include "trm/nn/params.hpp"

namespace trm::nn {

/// Evaluates the model loss. When `accumulate` is true the callee also adds
/// its analytic gradients into the ParamStore (which the checker zeroes first).
/// Must be deterministic: dropout off or driven by a reset generator.
using LossFn = std::function<double(bool accumulate)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

/// Central differences over every parameter element. Relative error uses
/// max(|analytic|, |numeric|, 1e-8) as denominator. Throws EvaluationError on
/// a non-finite loss and ConfigError when eps lies outside [1e-7, 1e-3].
GradCheckReport grad_check_report(const LossFn& fn, ParamStore& params, double eps);

double grad_check(const LossFn& fn, ParamStore& params, double eps);

}  // namespace trm::nn
