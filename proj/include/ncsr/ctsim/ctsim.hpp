#pragma once

#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ncsr/common/image.hpp"
#include "ncsr/common/rng.hpp"

namespace ncsr::ctsim {

/// Attenuation of water at ~70 keV.
inline constexpr double kMuWater = 0.02;  // 1/mm

/// 2D parallel-beam geometry; views uniformly cover [0, pi).
struct ScanGeometry {
  int n_angles = 180;
  int n_detectors = 256;
  double detector_spacing = 0.375;  // mm
  double fov = 64.0;                // mm, side of the square reconstruction field

  /// Detector row must span the FOV diagonal.
  void validate() const;
  double angle(int view) const;
  /// Signed distance from the rotation axis to the center of detector `d`.
  double offset(int d) const;
  double coverage() const { return n_detectors * detector_spacing; }
  ScanGeometry rebinned(int bin_factor) const;
  bool operator==(const ScanGeometry&) const = default;
};

/// Post-log line integrals, view-major (n_angles x n_detectors).
struct Sinogram {
  ScanGeometry geometry;
  double photons_in = 1e4;
  std::vector<double> p;

  Sinogram() = default;
  explicit Sinogram(const ScanGeometry& g, double n0 = 1e4)
      : geometry(g), photons_in(n0), p(static_cast<std::size_t>(g.n_angles) * g.n_detectors, 0.0) {}

  double& at(int view, int det) { return p[static_cast<std::size_t>(view) * geometry.n_detectors + det]; }
  double at(int view, int det) const { return p[static_cast<std::size_t>(view) * geometry.n_detectors + det]; }
};

struct NoiseInjectionParams {
  double k_hr = 0.12;
  double k_lr = 0.60;
  double n0_hr = 1e4;
  double n0_lr = 4e4;
  int bin_factor = 2;

  /// k > 0 unless `allow_zero_scale`, n0 >= 10, bin_factor >= 2.
  void validate(bool allow_zero_scale = false) const;
};

enum class FilterKernel { ramp, bone };

/// Relative gain of the bone kernel over the ramp: 1 + 0.6 sin^2(pi f / (2 f_N)).
inline constexpr double kBoneBoost = 0.6;

MuMap hu_to_mu(const Image2D& img);
Image2D mu_to_hu(const MuMap& mu);

/// Ray marching with bilinear interpolation at half-pixel steps (midpoint rule).
/// Throws ValidationError when nonzero attenuation lies outside the detector coverage.
Sinogram forward_project(const MuMap& mu, const ScanGeometry& geom);

/// N = N0 exp(-p) per ray; warns when any ray receives fewer than one photon.
std::vector<double> compute_photon_counts(const Sinogram& s);

/// Block mean over groups of `bin_factor` detector samples within each view.
std::vector<double> downsample_noise(std::span<const double> z, int n_angles, int n_detectors, int bin_factor);

/// Detector-direction block mean; spacing and N0 scale by `bin_factor`.
Sinogram rebin_sinogram(const Sinogram& s, int bin_factor);

struct NoisyPair {
  Sinogram hr;
  Sinogram lr;
};

/// One shared standard-normal field z (shape of `hr`):
///   hr + k_hr / sqrt(N_hr) * z,   lr + k_lr / sqrt(N_lr) * downsample(z).
/// Photon counts come from each sinogram's own `photons_in`.
NoisyPair inject_correlated_noise(const Sinogram& hr, const Sinogram& lr, const NoiseInjectionParams& params,
                                  Rng& rng);

/// Same as above with an explicit z, for tests and reproducible replays.
NoisyPair inject_correlated_noise(const Sinogram& hr, const Sinogram& lr, const NoiseInjectionParams& params,
                                  std::span<const double> z);

/// Filtered back-projection; returns HU on an out_size x out_size grid.
Image2D reconstruct_fbp(const Sinogram& s, FilterKernel kernel, int out_size, double out_spacing);

/// Frequency response applied to each zero-padded projection of length `padded`.
std::vector<double> filter_response(FilterKernel kernel, int padded, double detector_spacing);

void to_json(nlohmann::json& j, const ScanGeometry& g);
void from_json(const nlohmann::json& j, ScanGeometry& g);
void to_json(nlohmann::json& j, const NoiseInjectionParams& p);
void from_json(const nlohmann::json& j, NoiseInjectionParams& p);

}  // namespace ncsr::ctsim
