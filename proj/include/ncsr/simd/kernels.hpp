#pragma once

// Hot inner loops with a portable scalar reference and an AVX2/FMA variant.
// The variant is chosen once at runtime from CPUID; NCSR_SIMD=scalar in the
// environment forces the reference path. Variants agree to rounding, not
// bit-for-bit (FMA contraction and lane-wise reduction order differ).

#include <string_view>

namespace ncsr::simd {

enum class Backend { scalar, avx2 };

Backend active_backend();
bool backend_supported(Backend backend);
/// Throws ncsr::ValidationError if the backend is not available on this CPU/build.
void set_backend(Backend backend);
std::string_view backend_name(Backend backend);

/// RAII override of the active backend.
class ScopedBackend {
 public:
  explicit ScopedBackend(Backend backend);
  ~ScopedBackend();
  ScopedBackend(const ScopedBackend&) = delete;
  ScopedBackend& operator=(const ScopedBackend&) = delete;

 private:
  Backend previous_;
};

/// C[m x n] (+)= A[m x k] * B[k x n]; row-major with leading dimensions.
void gemm_nn(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c, int ldc,
             bool accumulate);

/// C[m x n] (+)= A[m x k] * B[n x k]^T.
void gemm_nt(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c, int ldc,
             bool accumulate);

/// out[j] += linear interpolation of q at u0 + j*du, j in [0, count). Samples
/// outside [0, nq-1] read as zero.
void backproject_row(const double* q, int nq, double u0, double du, int count, double* out);

/// Sum of bilinear samples of a size x size grid (row-major, zero outside)
/// at continuous pixel coordinates (col, row) = (u0 + s*du, v0 + s*dv),
/// s in [0, steps).
double ray_sum(const double* grid, int size, double u0, double v0, double du, double dv, int steps);

}  // namespace ncsr::simd
