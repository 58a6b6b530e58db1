// Compiled with -mavx2 -mfma; only reached when CPUID reports both.

#include <immintrin.h>

#include <cmath>
#include <cstddef>

#include "variants.hpp"

namespace ncsr::simd::avx2 {
namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 shuf = _mm_movehdup_ps(lo);
  __m128 sums = _mm_add_ps(lo, shuf);
  shuf = _mm_movehl_ps(shuf, sums);
  sums = _mm_add_ss(sums, shuf);
  return _mm_cvtss_f32(sums);
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
}

// MR rows of C times a 16-wide column strip, full depth k.
template <int MR>
inline void block_x16(int k, const float* a, int lda, const float* b, int ldb, float* c, int ldc) {
  __m256 acc0[MR];
  __m256 acc1[MR];
  for (int r = 0; r < MR; ++r) {
    acc0[r] = _mm256_loadu_ps(c + static_cast<std::ptrdiff_t>(r) * ldc);
    acc1[r] = _mm256_loadu_ps(c + static_cast<std::ptrdiff_t>(r) * ldc + 8);
  }
  for (int p = 0; p < k; ++p) {
    const float* brow = b + static_cast<std::ptrdiff_t>(p) * ldb;
    const __m256 b0 = _mm256_loadu_ps(brow);
    const __m256 b1 = _mm256_loadu_ps(brow + 8);
    for (int r = 0; r < MR; ++r) {
      const __m256 av = _mm256_broadcast_ss(a + static_cast<std::ptrdiff_t>(r) * lda + p);
      acc0[r] = _mm256_fmadd_ps(av, b0, acc0[r]);
      acc1[r] = _mm256_fmadd_ps(av, b1, acc1[r]);
    }
  }
  for (int r = 0; r < MR; ++r) {
    _mm256_storeu_ps(c + static_cast<std::ptrdiff_t>(r) * ldc, acc0[r]);
    _mm256_storeu_ps(c + static_cast<std::ptrdiff_t>(r) * ldc + 8, acc1[r]);
  }
}

template <int MR>
inline void block_x8(int k, const float* a, int lda, const float* b, int ldb, float* c, int ldc) {
  __m256 acc[MR];
  for (int r = 0; r < MR; ++r) acc[r] = _mm256_loadu_ps(c + static_cast<std::ptrdiff_t>(r) * ldc);
  for (int p = 0; p < k; ++p) {
    const __m256 b0 = _mm256_loadu_ps(b + static_cast<std::ptrdiff_t>(p) * ldb);
    for (int r = 0; r < MR; ++r)
      acc[r] = _mm256_fmadd_ps(_mm256_broadcast_ss(a + static_cast<std::ptrdiff_t>(r) * lda + p), b0, acc[r]);
  }
  for (int r = 0; r < MR; ++r) _mm256_storeu_ps(c + static_cast<std::ptrdiff_t>(r) * ldc, acc[r]);
}

template <int MR>
void strip(int n, int k, const float* a, int lda, const float* b, int ldb, float* c, int ldc) {
  int j = 0;
  for (; j + 16 <= n; j += 16) block_x16<MR>(k, a, lda, b + j, ldb, c + j, ldc);
  for (; j + 8 <= n; j += 8) block_x8<MR>(k, a, lda, b + j, ldb, c + j, ldc);
  if (j < n) {
    for (int r = 0; r < MR; ++r) {
      float* crow = c + static_cast<std::ptrdiff_t>(r) * ldc;
      for (int p = 0; p < k; ++p) {
        const float av = a[static_cast<std::ptrdiff_t>(r) * lda + p];
        const float* brow = b + static_cast<std::ptrdiff_t>(p) * ldb;
        for (int jj = j; jj < n; ++jj) crow[jj] += av * brow[jj];
      }
    }
  }
}

// Column blocking keeps a k x 256 panel of B hot while all row strips pass over it.
constexpr int kColumnPanel = 256;

}  // namespace

void gemm_nn(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c, int ldc,
             bool accumulate) {
  if (!accumulate) {
    for (int i = 0; i < m; ++i) {
      float* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
      for (int j = 0; j < n; ++j) crow[j] = 0.0f;
    }
  }
  for (int j0 = 0; j0 < n; j0 += kColumnPanel) {
    const int nb = n - j0 < kColumnPanel ? n - j0 : kColumnPanel;
    int i = 0;
    for (; i + 4 <= m; i += 4)
      strip<4>(nb, k, a + static_cast<std::ptrdiff_t>(i) * lda, lda, b + j0, ldb,
               c + static_cast<std::ptrdiff_t>(i) * ldc + j0, ldc);
    for (; i < m; ++i)
      strip<1>(nb, k, a + static_cast<std::ptrdiff_t>(i) * lda, lda, b + j0, ldb,
               c + static_cast<std::ptrdiff_t>(i) * ldc + j0, ldc);
  }
}

void gemm_nt(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c, int ldc,
             bool accumulate) {
  const int k8 = k & ~7;
  auto finish = [&](int i, int j, float partial) {
    const float* arow = a + static_cast<std::ptrdiff_t>(i) * lda;
    const float* brow = b + static_cast<std::ptrdiff_t>(j) * ldb;
    for (int p = k8; p < k; ++p) partial += arow[p] * brow[p];
    float& dst = c[static_cast<std::ptrdiff_t>(i) * ldc + j];
    dst = accumulate ? dst + partial : partial;
  };
  int i = 0;
  for (; i + 2 <= m; i += 2) {
    const float* a0 = a + static_cast<std::ptrdiff_t>(i) * lda;
    const float* a1 = a0 + lda;
    int j = 0;
    for (; j + 4 <= n; j += 4) {
      const float* bj[4];
      for (int q = 0; q < 4; ++q) bj[q] = b + static_cast<std::ptrdiff_t>(j + q) * ldb;
      __m256 acc0[4] = {_mm256_setzero_ps(), _mm256_setzero_ps(), _mm256_setzero_ps(), _mm256_setzero_ps()};
      __m256 acc1[4] = {_mm256_setzero_ps(), _mm256_setzero_ps(), _mm256_setzero_ps(), _mm256_setzero_ps()};
      for (int p = 0; p < k8; p += 8) {
        const __m256 va0 = _mm256_loadu_ps(a0 + p);
        const __m256 va1 = _mm256_loadu_ps(a1 + p);
        for (int q = 0; q < 4; ++q) {
          const __m256 vb = _mm256_loadu_ps(bj[q] + p);
          acc0[q] = _mm256_fmadd_ps(va0, vb, acc0[q]);
          acc1[q] = _mm256_fmadd_ps(va1, vb, acc1[q]);
        }
      }
      for (int q = 0; q < 4; ++q) {
        finish(i, j + q, hsum(acc0[q]));
        finish(i + 1, j + q, hsum(acc1[q]));
      }
    }
    for (; j < n; ++j) {
      const float* brow = b + static_cast<std::ptrdiff_t>(j) * ldb;
      __m256 acc0 = _mm256_setzero_ps();
      __m256 acc1 = _mm256_setzero_ps();
      for (int p = 0; p < k8; p += 8) {
        const __m256 vb = _mm256_loadu_ps(brow + p);
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a0 + p), vb, acc0);
        acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a1 + p), vb, acc1);
      }
      finish(i, j, hsum(acc0));
      finish(i + 1, j, hsum(acc1));
    }
  }
  for (; i < m; ++i) {
    const float* arow = a + static_cast<std::ptrdiff_t>(i) * lda;
    for (int j = 0; j < n; ++j) {
      const float* brow = b + static_cast<std::ptrdiff_t>(j) * ldb;
      __m256 acc = _mm256_setzero_ps();
      for (int p = 0; p < k8; p += 8)
        acc = _mm256_fmadd_ps(_mm256_loadu_ps(arow + p), _mm256_loadu_ps(brow + p), acc);
      finish(i, j, hsum(acc));
    }
  }
}

void backproject_row(const double* q, int nq, double u0, double du, int count, double* out) {
  const __m256d lane = _mm256_set_pd(3.0, 2.0, 1.0, 0.0);
  const __m256d vdu = _mm256_set1_pd(du);
  const __m128i zero_i = _mm_setzero_si128();
  const __m128i nq_i = _mm_set1_epi32(nq);
  const __m128i one_i = _mm_set1_epi32(1);
  int j = 0;
  for (; j + 4 <= count; j += 4) {
    const __m256d u = _mm256_fmadd_pd(_mm256_add_pd(_mm256_set1_pd(static_cast<double>(j)), lane), vdu,
                                      _mm256_set1_pd(u0));
    const __m256d fl = _mm256_floor_pd(u);
    const __m256d f = _mm256_sub_pd(u, fl);
    const __m128i i0 = _mm256_cvttpd_epi32(fl);
    const __m128i i1 = _mm_add_epi32(i0, one_i);
    const __m128i ok0 = _mm_andnot_si128(_mm_cmpgt_epi32(zero_i, i0), _mm_cmpgt_epi32(nq_i, i0));
    const __m128i ok1 = _mm_andnot_si128(_mm_cmpgt_epi32(zero_i, i1), _mm_cmpgt_epi32(nq_i, i1));
    const __m256d m0 = _mm256_castsi256_pd(_mm256_cvtepi32_epi64(ok0));
    const __m256d m1 = _mm256_castsi256_pd(_mm256_cvtepi32_epi64(ok1));
    const __m256d lo = _mm256_mask_i32gather_pd(_mm256_setzero_pd(), q, i0, m0, 8);
    const __m256d hi = _mm256_mask_i32gather_pd(_mm256_setzero_pd(), q, i1, m1, 8);
    const __m256d val = _mm256_fmadd_pd(f, _mm256_sub_pd(hi, lo), lo);
    _mm256_storeu_pd(out + j, _mm256_add_pd(_mm256_loadu_pd(out + j), val));
  }
  if (j < count) scalar::backproject_row(q, nq, u0 + j * du, du, count - j, out + j);
}

double ray_sum(const double* grid, int size, double u0, double v0, double du, double dv, int steps) {
  const __m256d lane = _mm256_set_pd(3.0, 2.0, 1.0, 0.0);
  const __m128i zero_i = _mm_setzero_si128();
  const __m128i size_i = _mm_set1_epi32(size);
  const __m128i one_i = _mm_set1_epi32(1);
  auto in_range = [&](__m128i idx) {
    return _mm_andnot_si128(_mm_cmpgt_epi32(zero_i, idx), _mm_cmpgt_epi32(size_i, idx));
  };
  auto widen = [](__m128i mask) { return _mm256_castsi256_pd(_mm256_cvtepi32_epi64(mask)); };
  __m256d acc = _mm256_setzero_pd();
  int s = 0;
  for (; s + 4 <= steps; s += 4) {
    const __m256d step = _mm256_add_pd(_mm256_set1_pd(static_cast<double>(s)), lane);
    const __m256d u = _mm256_fmadd_pd(step, _mm256_set1_pd(du), _mm256_set1_pd(u0));
    const __m256d v = _mm256_fmadd_pd(step, _mm256_set1_pd(dv), _mm256_set1_pd(v0));
    const __m256d fu = _mm256_floor_pd(u);
    const __m256d fv = _mm256_floor_pd(v);
    const __m256d wx = _mm256_sub_pd(u, fu);
    const __m256d wy = _mm256_sub_pd(v, fv);
    const __m128i c0 = _mm256_cvttpd_epi32(fu);
    const __m128i r0 = _mm256_cvttpd_epi32(fv);
    const __m128i c1 = _mm_add_epi32(c0, one_i);
    const __m128i r1 = _mm_add_epi32(r0, one_i);
    const __m128i okc0 = in_range(c0), okc1 = in_range(c1), okr0 = in_range(r0), okr1 = in_range(r1);
    const __m128i base0 = _mm_mullo_epi32(r0, size_i);
    const __m128i base1 = _mm_add_epi32(base0, size_i);
    const __m256d z = _mm256_setzero_pd();
    const __m256d g00 = _mm256_mask_i32gather_pd(z, grid, _mm_add_epi32(base0, c0), widen(_mm_and_si128(okr0, okc0)), 8);
    const __m256d g01 = _mm256_mask_i32gather_pd(z, grid, _mm_add_epi32(base0, c1), widen(_mm_and_si128(okr0, okc1)), 8);
    const __m256d g10 = _mm256_mask_i32gather_pd(z, grid, _mm_add_epi32(base1, c0), widen(_mm_and_si128(okr1, okc0)), 8);
    const __m256d g11 = _mm256_mask_i32gather_pd(z, grid, _mm_add_epi32(base1, c1), widen(_mm_and_si128(okr1, okc1)), 8);
    const __m256d top = _mm256_fmadd_pd(wx, _mm256_sub_pd(g01, g00), g00);
    const __m256d bottom = _mm256_fmadd_pd(wx, _mm256_sub_pd(g11, g10), g10);
    acc = _mm256_add_pd(acc, _mm256_fmadd_pd(wy, _mm256_sub_pd(bottom, top), top));
  }
  double total = hsum(acc);
  if (s < steps) total += scalar::ray_sum(grid, size, u0 + s * du, v0 + s * dv, du, dv, steps - s);
  return total;
}

}  // namespace ncsr::simd::avx2
