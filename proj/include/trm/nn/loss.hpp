#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace trm::nn {

double sigmoid(double x);

/// log(1 + e^eta) - y * eta, evaluated without overflow. `y` may be a soft
/// label in [0, 1]; the gradient w.r.t. eta is sigmoid(eta) - y.
double bce_from_logit(double y, double eta);
double bce_grad(double y, double eta);

struct SoftmaxCe {
  double loss = 0.0;
  std::vector<double> grad;  // softmax - onehot(target)
};

/// -log softmax(logits)[target], max-subtracted. Throws InputError when the
/// target is out of range.
SoftmaxCe softmax_ce(std::span<const double> logits, std::size_t target);

/// Binary entropy in nats; 0 at p in {0, 1}.
double binary_entropy(double p);

/// KL(Bernoulli(p) || Bernoulli(q)) in nats.
double bernoulli_kl(double p, double q);

}  // namespace trm::nn
