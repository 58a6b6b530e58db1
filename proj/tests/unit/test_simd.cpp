#include <doctest.h>

#include <cmath>
#include <random>
#include <tuple>
#include <vector>

#include "ncsr/simd/kernels.hpp"

using namespace ncsr;

namespace {

std::vector<float> random_floats(std::size_t n, std::mt19937& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (float& x : v) x = u(rng);
  return v;
}

// Double-precision triple loop, independent of both kernel variants.
std::vector<double> reference_gemm(int m, int n, int k, const std::vector<float>& a, const std::vector<float>& b,
                                   bool b_transposed) {
  std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int p = 0; p < k; ++p)
        s += double(a[i * k + p]) * double(b_transposed ? b[j * k + p] : b[p * n + j]);
      c[i * n + j] = s;
    }
  return c;
}

std::vector<simd::Backend> available_backends() {
  std::vector<simd::Backend> out{simd::Backend::scalar};
  if (simd::backend_supported(simd::Backend::avx2)) out.push_back(simd::Backend::avx2);
  return out;
}

}  // namespace

TEST_CASE("gemm variants match a double-precision reference on ragged shapes") {
  std::mt19937 rng(7);
  const int shapes[][3] = {{1, 1, 1}, {3, 5, 7}, {4, 16, 9}, {5, 17, 33}, {8, 24, 72}, {13, 300, 19}, {16, 1030, 144}};
  for (auto backend : available_backends()) {
    simd::ScopedBackend scope(backend);
    CAPTURE(simd::backend_name(backend));
    for (const auto& s : shapes) {
      const int m = s[0], n = s[1], k = s[2];
      const auto a = random_floats(static_cast<std::size_t>(m) * k, rng);
      const auto b = random_floats(static_cast<std::size_t>(k) * n, rng);
      const auto bt = random_floats(static_cast<std::size_t>(n) * k, rng);
      std::vector<float> c(static_cast<std::size_t>(m) * n, 123.0f);
      simd::gemm_nn(m, n, k, a.data(), k, b.data(), n, c.data(), n, false);
      const auto ref = reference_gemm(m, n, k, a, b, false);
      for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-5).scale(k));

      std::vector<float> ct(static_cast<std::size_t>(m) * n, 1.0f);
      simd::gemm_nt(m, n, k, a.data(), k, bt.data(), k, ct.data(), n, true);
      const auto ref_t = reference_gemm(m, n, k, a, bt, true);
      for (std::size_t i = 0; i < ct.size(); ++i) CHECK(ct[i] == doctest::Approx(ref_t[i] + 1.0).epsilon(1e-5).scale(k));
    }
  }
}

TEST_CASE("gemm accumulate adds onto existing output") {
  std::mt19937 rng(3);
  const int m = 6, n = 20, k = 11;
  const auto a = random_floats(m * k, rng);
  const auto b = random_floats(k * n, rng);
  for (auto backend : available_backends()) {
    simd::ScopedBackend scope(backend);
    std::vector<float> once(m * n), twice(m * n);
    simd::gemm_nn(m, n, k, a.data(), k, b.data(), n, once.data(), n, false);
    simd::gemm_nn(m, n, k, a.data(), k, b.data(), n, twice.data(), n, false);
    simd::gemm_nn(m, n, k, a.data(), k, b.data(), n, twice.data(), n, true);
    for (int i = 0; i < m * n; ++i) CHECK(twice[i] == doctest::Approx(2.0f * once[i]).epsilon(1e-6));
  }
}

TEST_CASE("backprojection row kernels agree, including out-of-range taps") {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<double> q(37);
  for (double& v : q) v = u(rng);
  for (auto [u0, du, count] : {std::tuple{-3.3, 0.37, 131}, std::tuple{40.0, -0.71, 67}, std::tuple{0.0, 1.0, 37},
                               std::tuple{12.25, 0.0, 9}}) {
    std::vector<double> ref(count, 0.5);
    for (int j = 0; j < count; ++j) {
      const double x = u0 + j * du;
      const int i0 = static_cast<int>(std::floor(x));
      const double f = x - i0;
      auto tap = [&](int i) { return (i >= 0 && i < 37) ? q[i] : 0.0; };
      ref[j] += (1 - f) * tap(i0) + f * tap(i0 + 1);
    }
    for (auto backend : available_backends()) {
      simd::ScopedBackend scope(backend);
      std::vector<double> out(count, 0.5);
      simd::backproject_row(q.data(), 37, u0, du, count, out.data());
      for (int j = 0; j < count; ++j) CHECK(out[j] == doctest::Approx(ref[j]).epsilon(1e-12));
    }
  }
}

TEST_CASE("ray sums agree between variants and with a bilinear oracle") {
  const int n = 19;
  std::vector<double> grid(n * n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) grid[r * n + c] = 0.1 * r - 0.05 * c + 1.0;
  // Inside the grid a bilinear interpolant of a linear function is exact.
  const double u0 = 2.2, v0 = 3.7, du = 0.31, dv = 0.17;
  const int steps = 41;
  double exact = 0.0;
  for (int s = 0; s < steps; ++s) exact += 0.1 * (v0 + s * dv) - 0.05 * (u0 + s * du) + 1.0;
  for (auto backend : available_backends()) {
    simd::ScopedBackend scope(backend);
    CHECK(simd::ray_sum(grid.data(), n, u0, v0, du, dv, steps) == doctest::Approx(exact).epsilon(1e-12));
  }
  // A ray that leaves the grid reads zeros beyond the border.
  std::vector<double> ones(n * n, 1.0);
  for (auto backend : available_backends()) {
    simd::ScopedBackend scope(backend);
    CHECK(simd::ray_sum(ones.data(), n, -5.0, 4.0, 1.0, 0.0, 30) == doctest::Approx(19.0).epsilon(1e-12));
  }
}

TEST_CASE("scalar backend can always be forced") {
  simd::ScopedBackend scope(simd::Backend::scalar);
  CHECK(simd::active_backend() == simd::Backend::scalar);
}
