#include <atomic>
#include <cstdlib>
#include <string>

#include "ncsr/common/error.hpp"
#include "ncsr/simd/kernels.hpp"
#include "variants.hpp"

namespace ncsr::simd {
namespace {

bool cpu_has_avx2() {
#if defined(NCSR_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend detect() {
  if (const char* forced = std::getenv("NCSR_SIMD"); forced && std::string(forced) == "scalar")
    return Backend::scalar;
  return cpu_has_avx2() ? Backend::avx2 : Backend::scalar;
}

std::atomic<Backend>& active() {
  static std::atomic<Backend> backend{detect()};
  return backend;
}

}  // namespace

Backend active_backend() { return active().load(std::memory_order_relaxed); }

bool backend_supported(Backend backend) { return backend == Backend::scalar || cpu_has_avx2(); }

void set_backend(Backend backend) {
  require(backend_supported(backend), std::string("SIMD backend not available: ") + std::string(backend_name(backend)));
  active().store(backend, std::memory_order_relaxed);
}

std::string_view backend_name(Backend backend) { return backend == Backend::avx2 ? "avx2" : "scalar"; }

ScopedBackend::ScopedBackend(Backend backend) : previous_(active_backend()) { set_backend(backend); }
ScopedBackend::~ScopedBackend() { active().store(previous_, std::memory_order_relaxed); }

#if defined(NCSR_HAVE_AVX2)
#define NCSR_DISPATCH(fn, ...) \
  (active_backend() == Backend::avx2 ? avx2::fn(__VA_ARGS__) : scalar::fn(__VA_ARGS__))
#else
#define NCSR_DISPATCH(fn, ...) scalar::fn(__VA_ARGS__)
#endif

void gemm_nn(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c, int ldc,
             bool accumulate) {
  NCSR_DISPATCH(gemm_nn, m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

void gemm_nt(int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c, int ldc,
             bool accumulate) {
  NCSR_DISPATCH(gemm_nt, m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

void backproject_row(const double* q, int nq, double u0, double du, int count, double* out) {
  NCSR_DISPATCH(backproject_row, q, nq, u0, du, count, out);
}

double ray_sum(const double* grid, int size, double u0, double v0, double du, double dv, int steps) {
  return NCSR_DISPATCH(ray_sum, grid, size, u0, v0, du, dv, steps);
}

}  // namespace ncsr::simd
