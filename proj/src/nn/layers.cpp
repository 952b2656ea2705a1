#include "trm/nn/layers.hpp"

#include <cmath>
#include <numbers>

#include "trm/error.hpp"
#include "trm/simd/kernels.hpp"

namespace trm::nn {

double activate(Activation a, double x) {
  switch (a) {
    case Activation::identity:
      return x;
    case Activation::relu:
      return x > 0.0 ? x : 0.0;
    case Activation::gelu:
      return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
  }
  return x;
}

double activate_grad(Activation a, double x) {
  switch (a) {
    case Activation::identity:
      return 1.0;
    case Activation::relu:
      return x > 0.0 ? 1.0 : 0.0;
    case Activation::gelu: {
      const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
      const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
      return cdf + x * pdf;
    }
  }
  return 1.0;
}

Tensor2 dense_forward(const Tensor2& x, const Tensor2& weights, const Tensor2& bias,
                      Activation activation) {
  if (x.cols() != weights.rows())
    throw ConfigError("dense_forward: x has " + std::to_string(x.cols()) +
                      " columns but weights have " + std::to_string(weights.rows()) +
                      " rows");
  if (bias.rows() != 1 || bias.cols() != weights.cols())
    throw ConfigError("dense_forward: bias shape does not match weights");
  Tensor2 y(x.rows(), weights.cols());
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) = bias(0, c);
  simd::active().gemm_nn(x.rows(), weights.cols(), x.cols(), x.data(), weights.data(),
                         y.data());
  if (activation != Activation::identity)
    for (double& v : y.values()) v = activate(activation, v);
  return y;
}

Linear::Linear(ParamStore& store, const std::string& name, std::size_t in,
               std::size_t out, Rng& rng, bool bias)
    : in_(in), out_(out) {
  w_ = &store.add(name + ".w", in, out);
  init_uniform_xavier(*w_, in, out, rng);
  if (bias) b_ = &store.add(name + ".b", 1, out);
}

Tensor2 Linear::forward(const Tensor2& x) const {
  if (x.cols() != in_)
    throw ConfigError(w_->name + ": expected " + std::to_string(in_) + " inputs, got " +
                      std::to_string(x.cols()));
  Tensor2 y(x.rows(), out_);
  if (b_ != nullptr)
    for (std::size_t r = 0; r < y.rows(); ++r)
      for (std::size_t c = 0; c < out_; ++c) y(r, c) = b_->value(0, c);
  simd::active().gemm_nn(x.rows(), out_, in_, x.data(), w_->value.data(), y.data());
  return y;
}

Tensor2 Linear::backward(const Tensor2& x, const Tensor2& dy) {
  const auto& k = simd::active();
  k.gemm_tn(in_, out_, x.rows(), x.data(), dy.data(), w_->grad.data());
  if (b_ != nullptr)
    for (std::size_t r = 0; r < dy.rows(); ++r)
      k.axpy(1.0, dy.row(r).data(), b_->grad.data(), out_);
  Tensor2 dx(x.rows(), in_);
  k.gemm_nt(x.rows(), in_, out_, dy.data(), w_->value.data(), dx.data());
  return dx;
}

Mlp::Mlp(ParamStore& store, const std::string& name,
         const std::vector<std::size_t>& widths, Activation hidden, Rng& rng)
    : hidden_(hidden) {
  if (widths.size() < 2) throw ConfigError("Mlp: need at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    layers_.emplace_back(store, name + "." + std::to_string(i), widths[i], widths[i + 1],
                         rng);
}

Tensor2 Mlp::forward(const Tensor2& x, Cache* cache) const {
  if (cache != nullptr) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  Tensor2 h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (cache != nullptr) cache->inputs.push_back(h);
    Tensor2 z = layers_[i].forward(h);
    if (i + 1 == layers_.size()) return z;
    if (cache != nullptr) cache->pre.push_back(z);
    for (double& v : z.values()) v = activate(hidden_, v);
    h = std::move(z);
  }
  return h;
}

Tensor2 Mlp::backward(const Cache& cache, Tensor2 dy) {
  for (std::size_t i = layers_.size(); i-- > 0;) {
    if (i + 1 < layers_.size()) {
      const Tensor2& pre = cache.pre[i];
      for (std::size_t k = 0; k < dy.size(); ++k)
        dy.values()[k] *= activate_grad(hidden_, pre.values()[k]);
    }
    dy = layers_[i].backward(cache.inputs[i], dy);
  }
  return dy;
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, std::size_t dim)
    : dim_(dim) {
  gain_ = &store.add(name + ".gain", 1, dim);
  gain_->value.fill(1.0);
  shift_ = &store.add(name + ".shift", 1, dim);
}

Tensor2 LayerNorm::forward(const Tensor2& x, Cache* cache) const {
  if (x.cols() != dim_) throw ConfigError(gain_->name + ": width mismatch");
  Tensor2 y(x.rows(), dim_);
  if (cache != nullptr) {
    cache->normalized = Tensor2(x.rows(), dim_);
    cache->inv_std.assign(x.rows(), 0.0);
  }
  const double n = static_cast<double>(dim_);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + kEps);
    for (std::size_t c = 0; c < dim_; ++c) {
      const double xhat = (row[c] - mean) * inv;
      if (cache != nullptr) cache->normalized(r, c) = xhat;
      y(r, c) = gain_->value(0, c) * xhat + shift_->value(0, c);
    }
    if (cache != nullptr) cache->inv_std[r] = inv;
  }
  return y;
}

Tensor2 LayerNorm::backward(const Cache& cache, const Tensor2& dy) {
  Tensor2 dx(dy.rows(), dim_);
  const double n = static_cast<double>(dim_);
  std::vector<double> dxhat(dim_);
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    double mean_d = 0.0;
    double mean_dx = 0.0;
    for (std::size_t c = 0; c < dim_; ++c) {
      const double xhat = cache.normalized(r, c);
      gain_->grad(0, c) += dy(r, c) * xhat;
      shift_->grad(0, c) += dy(r, c);
      dxhat[c] = dy(r, c) * gain_->value(0, c);
      mean_d += dxhat[c];
      mean_dx += dxhat[c] * xhat;
    }
    mean_d /= n;
    mean_dx /= n;
    for (std::size_t c = 0; c < dim_; ++c)
      dx(r, c) = cache.inv_std[r] *
                 (dxhat[c] - mean_d - cache.normalized(r, c) * mean_dx);
  }
  return dx;
}

std::vector<double> dropout_mask(std::size_t n, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
  std::vector<double> mask(n, 1.0);
  if (p == 0.0) return mask;
  std::bernoulli_distribution keep(1.0 - p);
  const double scale = 1.0 / (1.0 - p);
  for (double& m : mask) m = keep(rng) ? scale : 0.0;
  return mask;
}

}  // namespace trm::nn
