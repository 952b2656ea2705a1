#pragma once

#include <string>
#include <vector>

#include "trm/nn/params.hpp"

namespace trm::nn {

enum class Activation { identity, relu, gelu };

double activate(Activation a, double x);
double activate_grad(Activation a, double x);

/// act(x * weights + bias). `bias` is 1 x weights.cols(). Throws ConfigError
/// on any shape mismatch.
Tensor2 dense_forward(const Tensor2& x, const Tensor2& weights, const Tensor2& bias,
                      Activation activation);

/// Affine map with parameters "<name>.w" (in x out) and "<name>.b" (1 x out).
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
         Rng& rng, bool bias = true);

  std::size_t in_dim() const { return in_; }
  std::size_t out_dim() const { return out_; }
  Param& weight() { return *w_; }
  Param* bias() { return b_; }

  Tensor2 forward(const Tensor2& x) const;
  /// Accumulates dW, db from (x, dy) and returns dx.
  Tensor2 backward(const Tensor2& x, const Tensor2& dy);

 private:
  std::size_t in_ = 0;
  std::size_t out_ = 0;
  Param* w_ = nullptr;
  Param* b_ = nullptr;
};

/// Stack of Linear layers; `hidden` activation between them, identity output.
class Mlp {
 public:
  struct Cache {
    std::vector<Tensor2> inputs;  // input to each layer
    std::vector<Tensor2> pre;     // pre-activation of each hidden layer
  };

  Mlp() = default;
  /// widths = {in, h1, ..., out}.
  Mlp(ParamStore& store, const std::string& name, const std::vector<std::size_t>& widths,
      Activation hidden, Rng& rng);

  std::size_t in_dim() const { return layers_.front().in_dim(); }
  std::size_t out_dim() const { return layers_.back().out_dim(); }
  std::vector<Linear>& layers() { return layers_; }

  Tensor2 forward(const Tensor2& x, Cache* cache) const;
  Tensor2 backward(const Cache& cache, Tensor2 dy);

 private:
  std::vector<Linear> layers_;
  Activation hidden_ = Activation::relu;
};

/// Per-row layer normalization with learned gain and shift.
class LayerNorm {
 public:
  struct Cache {
    Tensor2 normalized;
    std::vector<double> inv_std;
  };

  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, std::size_t dim);

  Tensor2 forward(const Tensor2& x, Cache* cache) const;
  Tensor2 backward(const Cache& cache, const Tensor2& dy);

 private:
  std::size_t dim_ = 0;
  Param* gain_ = nullptr;
  Param* shift_ = nullptr;
  static constexpr double kEps = 1e-5;
};

/// Inverted dropout: keeps each entry with probability 1-p and rescales by
/// 1/(1-p). Returns the multiplicative mask (0 or 1/(1-p)).
std::vector<double> dropout_mask(std::size_t n, double p, Rng& rng);

}  // namespace trm::nn
