#include "ncsr/ctsim/ctsim.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <string>

#include "ncsr/common/error.hpp"
#include "ncsr/common/fft.hpp"
#include "ncsr/common/log.hpp"
#include "ncsr/simd/kernels.hpp"

namespace ncsr::ctsim {

void ScanGeometry::validate() const {
  require(n_angles > 0, "geometry: n_angles must be positive");
  require(n_detectors > 0, "geometry: n_detectors must be positive");
  require(detector_spacing > 0.0, "geometry: detector_spacing must be positive");
  require(fov > 0.0, "geometry: fov must be positive");
  require(coverage() >= fov * std::numbers::sqrt2 * (1.0 - 1e-9),
          "geometry: detector row (" + std::to_string(coverage()) + " mm) does not cover the FOV diagonal (" +
              std::to_string(fov * std::numbers::sqrt2) + " mm)");
}

double ScanGeometry::angle(int view) const { return std::numbers::pi * view / n_angles; }

double ScanGeometry::offset(int d) const { return (d - 0.5 * (n_detectors - 1)) * detector_spacing; }

ScanGeometry ScanGeometry::rebinned(int bin_factor) const {
  require(bin_factor >= 1, "bin factor must be >= 1");
  require(n_detectors % bin_factor == 0,
          "detector count " + std::to_string(n_detectors) + " not divisible by bin factor " + std::to_string(bin_factor));
  ScanGeometry g = *this;
  g.n_detectors = n_detectors / bin_factor;
  g.detector_spacing = detector_spacing * bin_factor;
  return g;
}

void NoiseInjectionParams::validate(bool allow_zero_scale) const {
  if (allow_zero_scale)
    require(k_hr >= 0.0 && k_lr >= 0.0, "noise scales k_hr, k_lr must be non-negative");
  else
    require(k_hr > 0.0 && k_lr > 0.0, "noise scales k_hr, k_lr must be positive");
  require(n0_hr >= 10.0 && n0_lr >= 10.0, "photon counts n0 must be >= 10");
  require(bin_factor >= 2, "bin_factor must be >= 2");
}

MuMap hu_to_mu(const Image2D& img) {
  img.validate();
  MuMap mu(img.size, img.spacing);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    mu.data[i] = std::max(0.0, kMuWater * (1.0 + img.data[i] / 1000.0));
  return mu;
}

Image2D mu_to_hu(const MuMap& mu) {
  Image2D img(mu.size, mu.spacing);
  for (std::size_t i = 0; i < mu.data.size(); ++i) img.data[i] = 1000.0 * (mu.data[i] / kMuWater - 1.0);
  return img;
}

Sinogram forward_project(const MuMap& mu, const ScanGeometry& geom) {
  mu.validate();
  geom.validate();

  double support = 0.0;
  for (int r = 0; r < mu.size; ++r)
    for (int c = 0; c < mu.size; ++c)
      if (mu.at(r, c) != 0.0) support = std::max(support, std::hypot(mu.x_of(c), mu.y_of(r)));
  if (support > 0.0) support += mu.spacing * std::numbers::sqrt2 * 0.5;
  if (support > 0.5 * geom.coverage())
    throw ValidationError("truncation: object support radius " + std::to_string(support) +
                          " mm exceeds half the detector coverage " + std::to_string(0.5 * geom.coverage()) + " mm");

  Sinogram s(geom);
  const double h = 0.5 * mu.spacing;
  const double half_len = 0.5 * mu.fov() * std::numbers::sqrt2 + mu.spacing;
  const int steps = static_cast<int>(std::ceil(2.0 * half_len / h));
  const double origin = 0.5 * mu.fov();
  for (int a = 0; a < geom.n_angles; ++a) {
    const double th = geom.angle(a);
    const double c = std::cos(th);
    const double sn = std::sin(th);
    const double du = -sn * h / mu.spacing;
    const double dv = c * h / mu.spacing;
    for (int d = 0; d < geom.n_detectors; ++d) {
      const double off = geom.offset(d);
      if (std::abs(off) > support) continue;
      const double l0 = -half_len + 0.5 * h;
      const double x0 = off * c - l0 * sn;
      const double y0 = off * sn + l0 * c;
      const double u0 = (x0 + origin) / mu.spacing - 0.5;
      const double v0 = (y0 + origin) / mu.spacing - 0.5;
      s.at(a, d) = h * simd::ray_sum(mu.data.data(), mu.size, u0, v0, du, dv, steps);
    }
  }
  return s;
}

std::vector<double> compute_photon_counts(const Sinogram& s) {
  std::vector<double> n(s.p.size());
  std::size_t starved = 0;
  for (std::size_t i = 0; i < n.size(); ++i) {
    require(std::isfinite(s.p[i]), "sinogram contains non-finite values");
    n[i] = s.photons_in * std::exp(-s.p[i]);
    if (n[i] < 1.0) ++starved;
  }
  if (starved > 0)
    log::warn(std::to_string(starved) + " rays receive fewer than one photon; the Gaussian noise model is unreliable");
  return n;
}

std::vector<double> downsample_noise(std::span<const double> z, int n_angles, int n_detectors, int bin_factor) {
  require(bin_factor >= 1, "bin factor must be >= 1");
  require(z.size() == static_cast<std::size_t>(n_angles) * n_detectors, "noise field shape mismatch");
  require(n_detectors % bin_factor == 0, "detector count " + std::to_string(n_detectors) +
                                             " not divisible by bin factor " + std::to_string(bin_factor));
  const int out_det = n_detectors / bin_factor;
  std::vector<double> out(static_cast<std::size_t>(n_angles) * out_det);
  const double inv = 1.0 / bin_factor;
  for (int a = 0; a < n_angles; ++a)
    for (int d = 0; d < out_det; ++d) {
      double acc = 0.0;
      for (int b = 0; b < bin_factor; ++b) acc += z[static_cast<std::size_t>(a) * n_detectors + d * bin_factor + b];
      out[static_cast<std::size_t>(a) * out_det + d] = acc * inv;
    }
  return out;
}

Sinogram rebin_sinogram(const Sinogram& s, int bin_factor) {
  Sinogram out(s.geometry.rebinned(bin_factor), s.photons_in * bin_factor);
  out.p = downsample_noise(s.p, s.geometry.n_angles, s.geometry.n_detectors, bin_factor);
  return out;
}

NoisyPair inject_correlated_noise(const Sinogram& hr, const Sinogram& lr, const NoiseInjectionParams& params,
                                  Rng& rng) {
  std::vector<double> z(hr.p.size());
  fill_normal(rng, z);
  return inject_correlated_noise(hr, lr, params, z);
}

NoisyPair inject_correlated_noise(const Sinogram& hr, const Sinogram& lr, const NoiseInjectionParams& params,
                                  std::span<const double> z) {
  params.validate(/*allow_zero_scale=*/true);
  const ScanGeometry expected = hr.geometry.rebinned(params.bin_factor);
  require(lr.geometry.n_angles == expected.n_angles && lr.geometry.n_detectors == expected.n_detectors &&
              std::abs(lr.geometry.detector_spacing - expected.detector_spacing) <= 1e-9 * expected.detector_spacing,
          "LR geometry is not the HR geometry rebinned by bin_factor");
  require(z.size() == hr.p.size(), "noise field must have the HR sinogram shape");

  const std::vector<double> n_hr = compute_photon_counts(hr);
  const std::vector<double> n_lr = compute_photon_counts(lr);
  const std::vector<double> z_lr =
      downsample_noise(z, hr.geometry.n_angles, hr.geometry.n_detectors, params.bin_factor);

  NoisyPair out{hr, lr};
  for (std::size_t i = 0; i < out.hr.p.size(); ++i) out.hr.p[i] += params.k_hr / std::sqrt(n_hr[i]) * z[i];
  for (std::size_t i = 0; i < out.lr.p.size(); ++i) out.lr.p[i] += params.k_lr / std::sqrt(n_lr[i]) * z_lr[i];
  return out;
}

std::vector<double> filter_response(FilterKernel kernel, int padded, double detector_spacing) {
  const double tau = detector_spacing;
  std::vector<double> h(static_cast<std::size_t>(padded), 0.0);
  h[0] = 1.0 / (4.0 * tau * tau);
  for (int j = 1; j < padded / 2; j += 2) {
    const double v = -1.0 / (std::numbers::pi * std::numbers::pi * j * j * tau * tau);
    h[j] = v;
    h[padded - j] = v;
  }
  RealFft fft(padded);
  std::vector<std::complex<double>> spectrum(padded / 2 + 1);
  fft.forward(h, spectrum);
  std::vector<double> response(spectrum.size());
  for (std::size_t k = 0; k < spectrum.size(); ++k) {
    double gain = spectrum[k].real() * tau;
    if (kernel == FilterKernel::bone) {
      const double s = std::sin(0.5 * std::numbers::pi * static_cast<double>(k) / (padded / 2));
      gain *= 1.0 + kBoneBoost * s * s;
    }
    response[k] = gain;
  }
  return response;
}

Image2D reconstruct_fbp(const Sinogram& s, FilterKernel kernel, int out_size, double out_spacing) {
  const ScanGeometry& g = s.geometry;
  g.validate();
  require(out_size > 0 && out_spacing > 0.0, "reconstruction grid must be non-empty");
  require(s.p.size() == static_cast<std::size_t>(g.n_angles) * g.n_detectors, "sinogram shape mismatch");
  require(std::all_of(s.p.begin(), s.p.end(), [](double v) { return std::isfinite(v); }),
          "sinogram contains non-finite values");
  if (out_spacing > 2.0 * g.detector_spacing || out_spacing < 0.5 * g.detector_spacing)
    log::warn("reconstruction spacing " + std::to_string(out_spacing) + " mm is incompatible with the detector Nyquist (spacing " +
              std::to_string(g.detector_spacing) + " mm)");
  if (out_size * out_spacing * std::numbers::sqrt2 > g.coverage() * (1.0 + 1e-9))
    log::warn("reconstruction grid extends beyond the detector coverage");

  int padded = 1;
  while (padded < 2 * g.n_detectors) padded <<= 1;
  const std::vector<double> response = filter_response(kernel, padded, g.detector_spacing);

  RealFft fft(padded);
  std::vector<double> line(static_cast<std::size_t>(padded));
  std::vector<std::complex<double>> spectrum(padded / 2 + 1);
  MuMap mu(out_size, out_spacing);
  const double inv_tau = 1.0 / g.detector_spacing;
  const double center = 0.5 * (g.n_detectors - 1);
  for (int a = 0; a < g.n_angles; ++a) {
    std::fill(line.begin(), line.end(), 0.0);
    std::copy_n(&s.p[static_cast<std::size_t>(a) * g.n_detectors], g.n_detectors, line.begin());
    fft.forward(line, spectrum);
    for (std::size_t k = 0; k < spectrum.size(); ++k) spectrum[k] *= response[k] / padded;
    fft.inverse(spectrum, line);

    const double th = g.angle(a);
    const double c = std::cos(th);
    const double sn = std::sin(th);
    const double du = out_spacing * c * inv_tau;
    for (int r = 0; r < out_size; ++r) {
      const double y = mu.y_of(r);
      const double u0 = (mu.x_of(0) * c + y * sn) * inv_tau + center;
      simd::backproject_row(line.data(), g.n_detectors, u0, du, out_size, &mu.data[static_cast<std::size_t>(r) * out_size]);
    }
  }
  const double scale = std::numbers::pi / g.n_angles;
  for (double& v : mu.data) v *= scale;
  return mu_to_hu(mu);
}

void to_json(nlohmann::json& j, const ScanGeometry& g) {
  j = {{"n_angles", g.n_angles}, {"n_detectors", g.n_detectors}, {"detector_spacing_mm", g.detector_spacing},
       {"fov_mm", g.fov}};
}

void from_json(const nlohmann::json& j, ScanGeometry& g) {
  g.n_angles = j.value("n_angles", 180);
  g.n_detectors = j.value("n_detectors", 256);
  g.detector_spacing = j.value("detector_spacing_mm", 0.375);
  g.fov = j.value("fov_mm", 64.0);
}

void to_json(nlohmann::json& j, const NoiseInjectionParams& p) {
  j = {{"k_hr", p.k_hr}, {"k_lr", p.k_lr}, {"n0_hr", p.n0_hr}, {"n0_lr", p.n0_lr}, {"bin_factor", p.bin_factor}};
}

void from_json(const nlohmann::json& j, NoiseInjectionParams& p) {
  p.k_hr = j.value("k_hr", 0.12);
  p.k_lr = j.value("k_lr", 0.60);
  p.n0_hr = j.value("n0_hr", 1e4);
  p.n0_lr = j.value("n0_lr", 4e4);
  p.bin_factor = j.value("bin_factor", 2);
}

}  // namespace ncsr::ctsim
