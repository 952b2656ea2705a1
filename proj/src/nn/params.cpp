#include "trm/nn/params.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "trm/error.hpp"

namespace trm::nn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

void Param::touch_row(std::size_t r) {
  if (row_touched.size() != value.rows()) row_touched.assign(value.rows(), 0);
  if (!row_touched[r]) {
    row_touched[r] = 1;
    touched_rows.push_back(r);
  }
}

void Param::zero_grad() {
  if (kind == ParamKind::embedding) {
    for (std::size_t r : touched_rows) {
      auto g = grad.row(r);
      std::fill(g.begin(), g.end(), 0.0);
      row_touched[r] = 0;
    }
    touched_rows.clear();
  } else {
    grad.fill(0.0);
  }
}

Param& ParamStore::add(std::string name, std::size_t rows, std::size_t cols,
                       ParamKind kind) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter name: " + name);
  auto p = std::make_unique<Param>();
  p->name = name;
  p->kind = kind;
  p->value = Tensor2(rows, cols);
  p->grad = Tensor2(rows, cols);
  if (kind == ParamKind::embedding) p->row_touched.assign(rows, 0);
  index_.emplace(std::move(name), params_.size());
  params_.push_back(std::move(p));
  return *params_.back();
}

Param* ParamStore::find(std::string_view name) {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : params_[it->second].get();
}

const Param* ParamStore::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : params_[it->second].get();
}

Param& ParamStore::get(std::string_view name) {
  Param* p = find(name);
  if (p == nullptr) throw ConfigError("unknown parameter: " + std::string(name));
  return *p;
}

const Param& ParamStore::get(std::string_view name) const {
  const Param* p = find(name);
  if (p == nullptr) throw ConfigError("unknown parameter: " + std::string(name));
  return *p;
}

std::size_t ParamStore::total_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->count();
  return n;
}

std::size_t ParamStore::count(ParamKind kind) const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p->kind == kind) n += p->count();
  return n;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p->name);
  return out;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

namespace {

constexpr std::array<char, 4> kMagic{'T', 'R', 'M', 'P'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw InputError("truncated checkpoint: " + path.string());
  return v;
}

}  // namespace

void ParamStore::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write checkpoint: " + path.string());
  out.write(kMagic.data(), kMagic.size());
  write_pod<std::uint32_t>(out, kVersion);
  write_pod<std::uint64_t>(out, params_.size());
  for (const auto& p : params_) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_pod<std::uint64_t>(out, p->value.rows());
    write_pod<std::uint64_t>(out, p->value.cols());
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!out) throw InputError("failed writing checkpoint: " + path.string());
}

void ParamStore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint: " + path.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw InputError("not a checkpoint: " + path.string());
  const auto version = read_pod<std::uint32_t>(in, path);
  if (version != kVersion)
    throw InputError("unsupported checkpoint version " + std::to_string(version));
  const auto count = read_pod<std::uint64_t>(in, path);
  for (std::uint64_t t = 0; t < count; ++t) {
    const auto len = read_pod<std::uint32_t>(in, path);
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto rows = read_pod<std::uint64_t>(in, path);
    const auto cols = read_pod<std::uint64_t>(in, path);
    Param* p = find(name);
    if (p == nullptr) throw InputError("checkpoint tensor not in model: " + name);
    if (p->value.rows() != rows || p->value.cols() != cols)
      throw InputError("checkpoint shape mismatch for " + name);
    in.read(reinterpret_cast<char*>(p->value.data()),
            static_cast<std::streamsize>(rows * cols * sizeof(double)));
    if (!in) throw InputError("truncated checkpoint: " + path.string());
  }
}

void init_uniform_xavier(Param& p, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : p.value.values()) v = dist(rng);
}

}  // namespace trm::nn
