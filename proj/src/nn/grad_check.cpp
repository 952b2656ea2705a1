#include "trm/nn/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "trm/error.hpp"

namespace trm::nn {

namespace {

double checked_eval(const LossFn& fn, bool accumulate) {
  const double loss = fn(accumulate);
  if (!std::isfinite(loss)) throw EvaluationError("grad_check: non-finite loss");
  return loss;
}

}  // namespace

GradCheckReport grad_check_report(const LossFn& fn, ParamStore& params, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3))
    throw ConfigError("grad_check: eps must lie in [1e-7, 1e-3]");

  params.zero_grad();
  checked_eval(fn, true);
  std::vector<Tensor2> analytic;
  analytic.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) analytic.push_back(params.at(i).grad);
  params.zero_grad();

  GradCheckReport report;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = params.at(i);
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      double& slot = p.value.values()[k];
      const double original = slot;
      slot = original + eps;
      const double up = checked_eval(fn, false);
      slot = original - eps;
      const double down = checked_eval(fn, false);
      slot = original;

      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[i].values()[k];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = p.name;
        report.worst_index = k;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  params.zero_grad();
  return report;
}

double grad_check(const LossFn& fn, ParamStore& params, double eps) {
  return grad_check_report(fn, params, eps).max_rel_error;
}

}  // namespace trm::nn
