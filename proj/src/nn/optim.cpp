#include "trm/nn/optim.hpp"

#include <cmath>

#include "trm/error.hpp"

namespace trm::nn {

namespace {

bool rows_finite(const Param& p) {
  if (p.kind == ParamKind::embedding) {
    for (std::size_t r : p.touched_rows)
      for (double g : p.grad.row(r))
        if (!std::isfinite(g)) return false;
    return true;
  }
  return p.grad.all_finite();
}

void adam_row(std::span<double> value, std::span<const double> grad, std::span<double> m,
              std::span<double> v, const OptimizerState& s, double c1, double c2) {
  for (std::size_t i = 0; i < value.size(); ++i) {
    const double g = grad[i];
    m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g;
    v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g * g;
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    value[i] -= s.learning_rate * mhat / (std::sqrt(vhat) + s.epsilon);
  }
}

}  // namespace

void optimizer_step(ParamStore& params, OptimizerState& state) {
  for (std::size_t i = 0; i < params.size(); ++i)
    if (!rows_finite(params.at(i)))
      throw TrainingError("non-finite gradient in parameter '" + params.at(i).name + "'");

  if (state.first_moment.size() != params.size()) {
    state.first_moment.clear();
    state.second_moment.clear();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Tensor2& v = params.at(i).value;
      state.first_moment.emplace_back(v.rows(), v.cols());
      state.second_moment.emplace_back(v.rows(), v.cols());
    }
  }

  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = params.at(i);
    Tensor2& m = state.first_moment[i];
    Tensor2& v = state.second_moment[i];
    if (p.kind == ParamKind::embedding) {
      for (std::size_t r : p.touched_rows)
        adam_row(p.value.row(r), p.grad.row(r), m.row(r), v.row(r), state, c1, c2);
    } else {
      adam_row(p.value.values(), p.grad.values(), m.values(), v.values(), state, c1, c2);
    }
    p.zero_grad();
  }
}

}  // namespace trm::nn
