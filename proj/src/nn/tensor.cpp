#include "trm/nn/tensor.hpp"

#include <cmath>
#include <string>

#include "trm/error.hpp"
#include "trm/simd/kernels.hpp"

namespace trm::nn {

Tensor2::Tensor2(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor2::Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols)
    throw ConfigError("Tensor2: data length " + std::to_string(data_.size()) +
                      " does not match " + std::to_string(rows) + "x" +
                      std::to_string(cols));
}

Tensor2::Tensor2(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ConfigError("Tensor2: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

void Tensor2::fill(double v) {
  for (double& x : data_) x = v;
}

bool Tensor2::all_finite() const {
  for (double x : data_)
    if (!std::isfinite(x)) return false;
  return true;
}

Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
  if (a.cols() != b.rows())
    throw ConfigError("matmul: inner dimensions differ (" + std::to_string(a.cols()) +
                      " vs " + std::to_string(b.rows()) + ")");
  Tensor2 c(a.rows(), b.cols());
  simd::active().gemm_nn(a.rows(), b.cols(), a.cols(), a.data(), b.data(), c.data());
  return c;
}

Tensor2 hconcat(std::initializer_list<const Tensor2*> parts) {
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool first = true;
  for (const Tensor2* p : parts) {
    if (first) {
      rows = p->rows();
      first = false;
    } else if (p->rows() != rows) {
      throw ConfigError("hconcat: row counts differ");
    }
    cols += p->cols();
  }
  Tensor2 out(rows, cols);
  std::size_t offset = 0;
  for (const Tensor2* p : parts) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < p->cols(); ++c) out(r, offset + c) = (*p)(r, c);
    offset += p->cols();
  }
  return out;
}

Tensor2 slice_cols(const Tensor2& m, std::size_t begin, std::size_t width) {
  if (begin + width > m.cols()) throw ConfigError("slice_cols: range out of bounds");
  Tensor2 out(m.rows(), width);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < width; ++c) out(r, c) = m(r, begin + c);
  return out;
}

double l2_norm(std::span<const double> v) {
  return std::sqrt(simd::active().dot(v.data(), v.data(), v.size()));
}

}  // namespace trm::nn
