#include <cmath>
#include <cstddef>

#include "variants.hpp"

namespace ncsr::simd::scalar {

void gemm_nn(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c, int ldc,
             bool accumulate) {
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    if (!accumulate)
      for (int j = 0; j < n; ++j) crow[j] = 0.0f;
    for (int p = 0; p < k; ++p) {
      const float av = a[static_cast<std::ptrdiff_t>(i) * lda + p];
      const float* brow = b + static_cast<std::ptrdiff_t>(p) * ldb;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c, int ldc,
             bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<std::ptrdiff_t>(i) * lda;
    for (int j = 0; j < n; ++j) {
      const float* brow = b + static_cast<std::ptrdiff_t>(j) * ldb;
      float sum = 0.0f;
      for (int p = 0; p < k; ++p) sum += arow[p] * brow[p];
      float& dst = c[static_cast<std::ptrdiff_t>(i) * ldc + j];
      dst = accumulate ? dst + sum : sum;
    }
  }
}

void backproject_row(const double* q, int nq, double u0, double du, int count, double* out) {
  for (int j = 0; j < count; ++j) {
    const double u = u0 + j * du;
    const double fl = std::floor(u);
    const int i0 = static_cast<int>(fl);
    const double f = u - fl;
    const double lo = (i0 >= 0 && i0 < nq) ? q[i0] : 0.0;
    const double hi = (i0 + 1 >= 0 && i0 + 1 < nq) ? q[i0 + 1] : 0.0;
    out[j] += lo + f * (hi - lo);
  }
}

double ray_sum(const double* grid, int size, double u0, double v0, double du, double dv, int steps) {
  auto sample = [&](int r, int c) {
    return (r >= 0 && r < size && c >= 0 && c < size) ? grid[static_cast<std::ptrdiff_t>(r) * size + c] : 0.0;
  };
  double total = 0.0;
  for (int s = 0; s < steps; ++s) {
    const double u = u0 + s * du;
    const double v = v0 + s * dv;
    const double fu = std::floor(u);
    const double fv = std::floor(v);
    const int c0 = static_cast<int>(fu);
    const int r0 = static_cast<int>(fv);
    const double wx = u - fu;
    const double wy = v - fv;
    const double top = sample(r0, c0) + wx * (sample(r0, c0 + 1) - sample(r0, c0));
    const double bottom = sample(r0 + 1, c0) + wx * (sample(r0 + 1, c0 + 1) - sample(r0 + 1, c0));
    total += top + wy * (bottom - top);
  }
  return total;
}

}  // namespace ncsr::simd::scalar
