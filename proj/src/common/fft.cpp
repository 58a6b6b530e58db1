#include "ncsr/common/fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <mutex>

#include "ncsr/common/error.hpp"

namespace ncsr {
namespace {

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

struct RealFft::Impl {
  double* real = nullptr;
  fftw_complex* spec = nullptr;
  fftw_plan fwd = nullptr;
  fftw_plan inv = nullptr;

  explicit Impl(int n) {
    std::lock_guard lock(planner_mutex());
    real = fftw_alloc_real(static_cast<std::size_t>(n));
    spec = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
    fwd = fftw_plan_dft_r2c_1d(n, real, spec, FFTW_ESTIMATE);
    inv = fftw_plan_dft_c2r_1d(n, spec, real, FFTW_ESTIMATE);
  }
  ~Impl() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
    fftw_free(real);
    fftw_free(spec);
  }
};

RealFft::RealFft(int n) : n_(n) {
  require(n > 0, "FFT length must be positive");
  impl_ = std::make_unique<Impl>(n);
}

RealFft::~RealFft() = default;

void RealFft::forward(std::span<const double> in, std::span<std::complex<double>> out) {
  require(static_cast<int>(in.size()) == n_ && static_cast<int>(out.size()) == n_ / 2 + 1, "FFT size mismatch");
  std::copy(in.begin(), in.end(), impl_->real);
  fftw_execute(impl_->fwd);
  for (int k = 0; k <= n_ / 2; ++k) out[k] = {impl_->spec[k][0], impl_->spec[k][1]};
}

void RealFft::inverse(std::span<const std::complex<double>> in, std::span<double> out) {
  require(static_cast<int>(out.size()) == n_ && static_cast<int>(in.size()) == n_ / 2 + 1, "FFT size mismatch");
  for (int k = 0; k <= n_ / 2; ++k) {
    impl_->spec[k][0] = in[k].real();
    impl_->spec[k][1] = in[k].imag();
  }
  fftw_execute(impl_->inv);
  std::copy(impl_->real, impl_->real + n_, out.begin());
}

struct ComplexFft2D::Impl {
  fftw_complex* buf = nullptr;
  fftw_plan fwd = nullptr;
  fftw_plan inv = nullptr;

  explicit Impl(int n) {
    std::lock_guard lock(planner_mutex());
    buf = fftw_alloc_complex(static_cast<std::size_t>(n) * n);
    fwd = fftw_plan_dft_2d(n, n, buf, buf, FFTW_FORWARD, FFTW_ESTIMATE);
    inv = fftw_plan_dft_2d(n, n, buf, buf, FFTW_BACKWARD, FFTW_ESTIMATE);
  }
  ~Impl() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
    fftw_free(buf);
  }
};

ComplexFft2D::ComplexFft2D(int n) : n_(n) {
  require(n > 0, "FFT size must be positive");
  impl_ = std::make_unique<Impl>(n);
}

ComplexFft2D::~ComplexFft2D() = default;

void ComplexFft2D::transform(std::vector<std::complex<double>>& data, int sign) {
  require(data.size() == static_cast<std::size_t>(n_) * n_, "FFT size mismatch");
  for (std::size_t i = 0; i < data.size(); ++i) {
    impl_->buf[i][0] = data[i].real();
    impl_->buf[i][1] = data[i].imag();
  }
  fftw_execute(sign < 0 ? impl_->fwd : impl_->inv);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = {impl_->buf[i][0], impl_->buf[i][1]};
}

}  // namespace ncsr
