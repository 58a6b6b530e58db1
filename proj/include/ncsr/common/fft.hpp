#pragma once

#include <complex>
#include <memory>
#include <span>
#include <vector>

namespace ncsr {

/// Thin RAII wrappers over FFTW plans (double precision). Planning uses
/// FFTW_ESTIMATE and is serialized internally; execution is reentrant per object.
class RealFft {
 public:
  explicit RealFft(int n);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  int size() const { return n_; }
  /// n real samples -> n/2+1 complex bins.
  void forward(std::span<const double> in, std::span<std::complex<double>> out);
  /// n/2+1 bins -> n real samples, unnormalized (scaled by n).
  void inverse(std::span<const std::complex<double>> in, std::span<double> out);

 private:
  struct Impl;
  int n_;
  std::unique_ptr<Impl> impl_;
};

/// Complex 2D DFT of an n x n row-major array.
class ComplexFft2D {
 public:
  explicit ComplexFft2D(int n);
  ~ComplexFft2D();
  ComplexFft2D(const ComplexFft2D&) = delete;
  ComplexFft2D& operator=(const ComplexFft2D&) = delete;

  /// sign = -1 forward, +1 inverse (unnormalized).
  void transform(std::vector<std::complex<double>>& data, int sign);

 private:
  struct Impl;
  int n_;
  std::unique_ptr<Impl> impl_;
};

}  // namespace ncsr
