#include "trm/nn/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "trm/error.hpp"

namespace trm::nn {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double bce_from_logit(double y, double eta) {
  if (eta > 0.0) return eta + std::log1p(std::exp(-eta)) - y * eta;
  return std::log1p(std::exp(eta)) - y * eta;
}

double bce_grad(double y, double eta) { return sigmoid(eta) - y; }

SoftmaxCe softmax_ce(std::span<const double> logits, std::size_t target) {
  if (target >= logits.size())
    throw InputError("softmax_ce: target " + std::to_string(target) +
                     " out of range for " + std::to_string(logits.size()) + " classes");
  const double mx = *std::max_element(logits.begin(), logits.end());
  SoftmaxCe out;
  out.grad.resize(logits.size());
  // z = 1 + rest, where the 1 comes from (one) max entry; log1p keeps
  // near-certain predictions accurate.
  double rest = 0.0;
  bool seen_max = false;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.grad[i] = std::exp(logits[i] - mx);
    if (!seen_max && logits[i] == mx) {
      seen_max = true;
    } else {
      rest += out.grad[i];
    }
  }
  const double z = 1.0 + rest;
  for (double& g : out.grad) g /= z;
  out.loss = std::log1p(rest) - (logits[target] - mx);
  out.grad[target] -= 1.0;
  return out;
}

double binary_entropy(double p) {
  double h = 0.0;
  if (p > 0.0) h -= p * std::log(p);
  if (p < 1.0) h -= (1.0 - p) * std::log1p(-p);
  return h;
}

double bernoulli_kl(double p, double q) {
  double kl = 0.0;
  if (p > 0.0) kl += p * std::log(p / q);
  if (p < 1.0) kl += (1.0 - p) * std::log((1.0 - p) / (1.0 - q));
  return kl;
}

}  // namespace trm::nn
