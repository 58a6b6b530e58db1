#pragma once

// Per-ISA kernel entry points; the public API in kernels.hpp dispatches here.

namespace ncsr::simd {

#define NCSR_SIMD_KERNELS                                                                                   \
  void gemm_nn(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c, int ldc,     \
               bool accumulate);                                                                            \
  void gemm_nt(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c, int ldc,     \
               bool accumulate);                                                                            \
  void backproject_row(const double* q, int nq, double u0, double du, int count, double* out);               \
  double ray_sum(const double* grid, int size, double u0, double v0, double du, double dv, int steps);

namespace scalar {
NCSR_SIMD_KERNELS
}

namespace avx2 {
NCSR_SIMD_KERNELS
}

#undef NCSR_SIMD_KERNELS

}  // namespace ncsr::simd
