#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

namespace trm {

/// Process-wide generator type. Every stochastic step takes one explicitly.
using Rng = std::mt19937_64;

namespace nn {

/// Row-major dense matrix of doubles.
class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data);
  Tensor2(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const Tensor2&, const Tensor2&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// a * b through the active SIMD backend. Throws ConfigError on shape mismatch.
Tensor2 matmul(const Tensor2& a, const Tensor2& b);

/// Columns [a | b | ...] for matrices with equal row counts.
Tensor2 hconcat(std::initializer_list<const Tensor2*> parts);

/// Copies columns [begin, begin+width) into a new matrix.
Tensor2 slice_cols(const Tensor2& m, std::size_t begin, std::size_t width);

double l2_norm(std::span<const double> v);

}  // namespace nn
}  // namespace trm
