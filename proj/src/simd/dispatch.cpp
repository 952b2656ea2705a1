#include <cstdlib>
#include <string>

#include "trm/simd/kernels.hpp"

namespace trm::simd {

#if defined(TRM_HAVE_AVX2_KERNELS)
const Kernels& avx2_table();  // kernels_avx2.cpp
#endif

namespace {

bool cpu_has_avx2() {
#if defined(TRM_HAVE_AVX2_KERNELS) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const Kernels* probe_best() {
  if (const Kernels* k = avx2_kernels()) return k;
  return &scalar_kernels();
}

const Kernels* initial_backend() {
  const char* env = std::getenv("TRM_SIMD");
  if (env != nullptr && std::string(env) == "scalar") return &scalar_kernels();
  return probe_best();
}

const Kernels*& current() {
  static const Kernels* backend = initial_backend();
  return backend;
}

}  // namespace

const Kernels* avx2_kernels() {
#if defined(TRM_HAVE_AVX2_KERNELS)
  static const bool ok = cpu_has_avx2();
  return ok ? &avx2_table() : nullptr;
#else
  return nullptr;
#endif
}

const Kernels& active() { return *current(); }

bool select_backend(std::string_view name) {
  if (name == "scalar") {
    current() = &scalar_kernels();
    return true;
  }
  if (name == "avx2") {
    const Kernels* k = avx2_kernels();
    if (k == nullptr) return false;
    current() = k;
    return true;
  }
  if (name == "auto") {
    current() = probe_best();
    return true;
  }
  return false;
}

}  // namespace trm::simd
