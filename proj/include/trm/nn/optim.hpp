#pragma once

#include <cstdint>
#include <vector>

#include "trm/nn/params.hpp"

namespace trm::nn {

/// Adaptive-moment optimizer state. Moments are indexed by parameter
/// position in the store and sized on the first step.
struct OptimizerState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor2> first_moment;
  std::vector<Tensor2> second_moment;
};

/// One Adam update over every parameter, then zeroes all gradients.
/// Embedding parameters are updated lazily: only rows touched since the last
/// zero_grad() move. Throws TrainingError naming the first parameter with a
/// non-finite gradient, before anything is modified.
void optimizer_step(ParamStore& params, OptimizerState& state);

}  // namespace trm::nn
