#pragma once

#include <cstddef>
#include <string_view>

// Dense double-precision inner loops shared by every numeric module.
//
// Each backend fills one Kernels table. The scalar table is the reference;
// vector backends must agree with it to rounding (they use FMA and a
// different summation order, so agreement is not bitwise). Selection
// happens once per process: TRM_SIMD=scalar|avx2|auto overrides the CPU probe.
// Within one process and backend every kernel is deterministic.

namespace trm::simd {

struct Kernels {
  const char* name;

  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sq_dist)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);

  // Row-major GEMM variants, all accumulating into C.
  // gemm_nn: C[m x n] += A[m x k] * B[k x n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c);
  // gemm_nt: C[m x n] += A[m x k] * B[n x k]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c);
  // gemm_tn: C[m x n] += A[k x m]^T * B[k x n]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c);
};

const Kernels& scalar_kernels();

// Null when the binary was built without AVX2 support or the CPU lacks AVX2+FMA.
const Kernels* avx2_kernels();

// Backend picked for this process.
const Kernels& active();

// Testing hook: force a backend by name ("scalar", "avx2", "auto").
// Returns false if the requested backend is unavailable.
bool select_backend(std::string_view name);

}  // namespace trm::simd
