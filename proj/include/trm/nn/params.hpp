#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "trm/nn/tensor.hpp"

namespace trm::nn {

enum class ParamKind {
  dense,      // tower / combiner weights; counted as dense parameters
  embedding,  // hashed lookup tables; gradients are row-sparse
};

/// One named trainable tensor and its gradient accumulator.
struct Param {
  std::string name;
  ParamKind kind = ParamKind::dense;
  Tensor2 value;
  Tensor2 grad;

  // Rows written since the last zero_grad(); only tracked for embeddings.
  std::vector<std::size_t> touched_rows;
  std::vector<std::uint8_t> row_touched;

  std::size_t count() const { return value.size(); }
  void touch_row(std::size_t r);
  void zero_grad();
};

/// Ordered collection of parameters. Insertion order is the iteration and
/// serialization order; Param addresses are stable for the store's lifetime.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  Param& add(std::string name, std::size_t rows, std::size_t cols,
             ParamKind kind = ParamKind::dense);

  Param& get(std::string_view name);
  const Param& get(std::string_view name) const;
  Param* find(std::string_view name);
  const Param* find(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  Param& at(std::size_t i) { return *params_[i]; }
  const Param& at(std::size_t i) const { return *params_[i]; }

  /// N: total scalar count over every parameter.
  std::size_t total_count() const;
  std::size_t count(ParamKind kind) const;

  std::vector<std::string> names() const;
  void zero_grad();

  /// Little-endian checkpoint:
  ///   "TRMP" | u32 version=1 | u64 tensor_count |
  ///   per tensor: u32 name_len | name bytes | u64 rows | u64 cols | rows*cols f64
  void save(const std::filesystem::path& path) const;
  /// Loads values by name; every stored tensor must exist with the same shape.
  void load(const std::filesystem::path& path);

 private:
  std::vector<std::unique_ptr<Param>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
void init_uniform_xavier(Param& p, std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace trm::nn
