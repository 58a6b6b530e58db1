#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>

#include "ncsr/common/error.hpp"
#include "ncsr/common/log.hpp"
#include "ncsr/ctsim/ctsim.hpp"
#include "ncsr/ctsim/sinogram_io.hpp"
#include "ncsr/phantoms/phantom.hpp"

using namespace ncsr;
using namespace ncsr::ctsim;

namespace {

ScanGeometry hr_geometry() { return {180, 256, 0.375, 64.0}; }

MuMap disk_mu(double cx, double cy, double r, double hu, int size = 256, double spacing = 0.25) {
  phantoms::PhantomSpec s;
  s.image_size = size;
  s.pixel_spacing = spacing;
  s.ellipses = {{cx, cy, r, r, 0.0, hu}};
  return hu_to_mu(phantoms::render_phantom(s));
}

double chord(double mu, double r, double s) { return std::abs(s) < r ? 2.0 * mu * std::sqrt(r * r - s * s) : 0.0; }

double rel_l2(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / den);
}

// Separable Gaussian smoothing with zero padding (test-local, independent of the library).
Image2D smooth(const Image2D& img, double sigma) {
  const int rad = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k(2 * rad + 1);
  for (int i = -rad; i <= rad; ++i) k[i + rad] = std::exp(-0.5 * i * i / (sigma * sigma));
  const double sum = std::accumulate(k.begin(), k.end(), 0.0);
  for (double& v : k) v /= sum;
  Image2D tmp = img, out = img;
  const int n = img.size;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      double acc = 0.0;
      for (int t = -rad; t <= rad; ++t) acc += k[t + rad] * img.at(r, std::clamp(c + t, 0, n - 1));
      tmp.at(r, c) = acc;
    }
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      double acc = 0.0;
      for (int t = -rad; t <= rad; ++t) acc += k[t + rad] * tmp.at(std::clamp(r + t, 0, n - 1), c);
      out.at(r, c) = acc;
    }
  return out;
}

}  // namespace

TEST_CASE("HU to attenuation conversion") {
  Image2D img(2, 1.0);
  img.data = {0.0, -1000.0, 1000.0, -1500.0};
  const MuMap mu = hu_to_mu(img);
  CHECK(mu.data[0] == doctest::Approx(0.02));
  CHECK(mu.data[1] == doctest::Approx(0.0));
  CHECK(mu.data[2] == doctest::Approx(0.04));
  CHECK(mu.data[3] == 0.0);
}

TEST_CASE("geometry must cover the FOV diagonal") {
  CHECK_NOTHROW(hr_geometry().validate());
  CHECK_THROWS_AS((ScanGeometry{180, 128, 0.5, 64.0}.validate()), ValidationError);
  CHECK(hr_geometry().rebinned(2).n_detectors == 128);
  CHECK(hr_geometry().rebinned(2).detector_spacing == doctest::Approx(0.75));
  CHECK_THROWS_AS(hr_geometry().rebinned(3), ValidationError);
}

TEST_CASE("zero attenuation projects to an all-zero sinogram") {
  const Sinogram s = forward_project(MuMap(64, 1.0), hr_geometry());
  CHECK(std::all_of(s.p.begin(), s.p.end(), [](double v) { return v == 0.0; }));
}

TEST_CASE("disk sinogram matches analytic chord lengths") {
  const double r = 20.0;
  const ScanGeometry g = hr_geometry();
  const Sinogram s = forward_project(disk_mu(0.0, 0.0, r, 0.0), g);
  std::vector<double> analytic(s.p.size());
  for (int a = 0; a < g.n_angles; ++a)
    for (int d = 0; d < g.n_detectors; ++d) analytic[a * g.n_detectors + d] = chord(kMuWater, r, g.offset(d));
  CHECK(rel_l2(s.p, analytic) <= 0.01);
}

TEST_CASE("per-view mass is conserved and off-center objects follow the sinusoid law") {
  const ScanGeometry g = hr_geometry();
  const double x0 = 6.0, y0 = -4.0;
  const Sinogram s = forward_project(disk_mu(x0, y0, 9.0, 500.0), g);
  std::vector<double> mass(g.n_angles);
  for (int a = 0; a < g.n_angles; ++a) {
    double m = 0.0, first = 0.0;
    for (int d = 0; d < g.n_detectors; ++d) {
      m += s.at(a, d);
      first += s.at(a, d) * g.offset(d);
    }
    mass[a] = m * g.detector_spacing;
    const double centroid = first / m;
    const double th = g.angle(a);
    CHECK(std::abs(centroid - (x0 * std::cos(th) + y0 * std::sin(th))) < 0.02);
  }
  const double mean = std::accumulate(mass.begin(), mass.end(), 0.0) / mass.size();
  for (double m : mass) CHECK(std::abs(m - mean) <= 0.005 * mean);
}

TEST_CASE("forward projection is linear") {
  const ScanGeometry g{60, 256, 0.375, 64.0};
  const MuMap m1 = disk_mu(3.0, 2.0, 12.0, 300.0, 128, 0.5);
  const MuMap m2 = disk_mu(-8.0, 1.0, 6.0, 1200.0, 128, 0.5);
  MuMap combo(128, 0.5);
  for (std::size_t i = 0; i < combo.data.size(); ++i) combo.data[i] = 0.7 * m1.data[i] + 1.3 * m2.data[i];
  const Sinogram s1 = forward_project(m1, g), s2 = forward_project(m2, g), sc = forward_project(combo, g);
  for (std::size_t i = 0; i < sc.p.size(); ++i)
    CHECK(sc.p[i] == doctest::Approx(0.7 * s1.p[i] + 1.3 * s2.p[i]).epsilon(1e-10).scale(1e-9));
}

TEST_CASE("objects outside the detector coverage are rejected as truncated") {
  const MuMap big = disk_mu(0.0, 0.0, 55.0, 0.0, 128, 1.0);
  CHECK_THROWS_AS(forward_project(big, hr_geometry()), ValidationError);
}

TEST_CASE("photon counts follow the exponential law") {
  ScanGeometry g{1, 4, 1.0, 2.0};
  Sinogram s(g, 1e4);
  s.p = {0.0, std::log(2.0), 1.0, 0.0};
  const auto n = compute_photon_counts(s);
  CHECK(n[0] == doctest::Approx(1e4));
  CHECK(n[1] == doctest::Approx(5e3));
  CHECK(n[2] == doctest::Approx(1e4 / std::numbers::e));

  const Sinogram disk = forward_project(disk_mu(0.0, 0.0, 20.0, 0.0), hr_geometry());
  const auto nd = compute_photon_counts(disk);
  for (int a = 0; a < 180; a += 30) {
    auto begin = nd.begin() + a * 256;
    const double lowest = *std::min_element(begin, begin + 256);
    CHECK(std::min(begin[127], begin[128]) <= lowest * 1.001);
    CHECK(begin[0] == doctest::Approx(1e4));
  }
}

TEST_CASE("photon starvation is reported as a warning") {
  Sinogram s(ScanGeometry{1, 2, 1.0, 1.0}, 1e4);
  s.p = {20.0, 0.0};
  log::ScopedCapture capture;
  compute_photon_counts(s);
  CHECK(capture.warnings() == 1);
}

TEST_CASE("noise downsampling is a detector block mean") {
  const std::vector<double> z{1, 3, 5, 7};
  CHECK(downsample_noise(z, 1, 4, 2) == std::vector<double>{2, 6});
  const std::vector<double> c(24, 2.5);
  for (double v : downsample_noise(c, 3, 8, 4)) CHECK(v == doctest::Approx(2.5));
  CHECK_THROWS_AS(downsample_noise(z, 1, 4, 3), ValidationError);

  Rng rng(99);
  std::vector<double> w(100000);
  fill_normal(rng, w);
  const auto down = downsample_noise(w, 1000, 100, 2);
  double ss = 0.0, m = 0.0;
  for (double v : down) m += v;
  m /= down.size();
  for (double v : down) ss += (v - m) * (v - m);
  CHECK(std::sqrt(ss / down.size()) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(0.02));
}

TEST_CASE("rebinning averages detectors and aggregates photons") {
  Sinogram s(ScanGeometry{2, 8, 0.5, 2.0}, 100.0);
  std::fill(s.p.begin(), s.p.end(), 1.25);
  const Sinogram r = rebin_sinogram(s, 2);
  CHECK(r.geometry.n_detectors == 4);
  CHECK(r.geometry.detector_spacing == doctest::Approx(1.0));
  CHECK(r.photons_in == doctest::Approx(200.0));
  for (double v : r.p) CHECK(v == doctest::Approx(1.25));
  const Sinogram same = rebin_sinogram(s, 1);
  CHECK(same.p == s.p);
  CHECK(same.geometry == s.geometry);
  CHECK_THROWS_AS(rebin_sinogram(s, 3), ValidationError);
}

TEST_CASE("rebinned disk sinogram matches bin-averaged analytic chords") {
  const double r = 20.0;
  const ScanGeometry g = hr_geometry();
  const Sinogram lr = rebin_sinogram(forward_project(disk_mu(0.0, 0.0, r, 0.0), g), 2);
  std::vector<double> analytic(lr.p.size());
  for (int a = 0; a < g.n_angles; ++a)
    for (int d = 0; d < lr.geometry.n_detectors; ++d)
      analytic[a * lr.geometry.n_detectors + d] =
          0.5 * (chord(kMuWater, r, g.offset(2 * d)) + chord(kMuWater, r, g.offset(2 * d + 1)));
  CHECK(rel_l2(lr.p, analytic) <= 0.01);
}

TEST_CASE("correlated noise injection") {
  const ScanGeometry g{4, 8, 1.0, 4.0};
  Sinogram hr(g, 1e4);
  for (std::size_t i = 0; i < hr.p.size(); ++i) hr.p[i] = 0.1 + 0.05 * static_cast<double>(i);
  Sinogram lr = rebin_sinogram(hr, 2);
  lr.photons_in = 4e4;
  NoiseInjectionParams params;
  params.k_hr = 0.8;
  params.k_lr = 1.7;

  SUBCASE("zero scale leaves the sinograms untouched") {
    NoiseInjectionParams off = params;
    off.k_hr = off.k_lr = 0.0;
    Rng rng(1);
    const NoisyPair out = inject_correlated_noise(hr, lr, off, rng);
    CHECK(out.hr.p == hr.p);
    CHECK(out.lr.p == lr.p);
  }

  SUBCASE("per-ray standard deviation is k / sqrt(N)") {
    const auto n_hr = compute_photon_counts(hr);
    const auto n_lr = compute_photon_counts(lr);
    const int reps = 100000;
    std::vector<double> s1(hr.p.size()), s2(hr.p.size()), l1(lr.p.size()), l2(lr.p.size());
    Rng rng(2024);
    double corr_num = 0.0, corr_a = 0.0, corr_b = 0.0;
    for (int rep = 0; rep < reps; ++rep) {
      const NoisyPair out = inject_correlated_noise(hr, lr, params, rng);
      std::vector<double> z_hr(hr.p.size());
      for (std::size_t i = 0; i < hr.p.size(); ++i) {
        const double e = out.hr.p[i] - hr.p[i];
        s1[i] += e;
        s2[i] += e * e;
        z_hr[i] = e * std::sqrt(n_hr[i]) / params.k_hr;
      }
      const auto z_down = downsample_noise(z_hr, g.n_angles, g.n_detectors, 2);
      for (std::size_t i = 0; i < lr.p.size(); ++i) {
        const double e = out.lr.p[i] - lr.p[i];
        l1[i] += e;
        l2[i] += e * e;
        const double z_lr = e * std::sqrt(n_lr[i]) / params.k_lr;
        if (rep < 2000) {
          corr_num += z_down[i] * z_lr;
          corr_a += z_down[i] * z_down[i];
          corr_b += z_lr * z_lr;
        }
      }
    }
    for (std::size_t i = 0; i < hr.p.size(); ++i) {
      const double sd = std::sqrt(s2[i] / reps - (s1[i] / reps) * (s1[i] / reps));
      CHECK(sd == doctest::Approx(params.k_hr / std::sqrt(n_hr[i])).epsilon(0.02));
    }
    for (std::size_t i = 0; i < lr.p.size(); ++i) {
      const double sd = std::sqrt(l2[i] / reps - (l1[i] / reps) * (l1[i] / reps));
      CHECK(sd == doctest::Approx(params.k_lr / std::sqrt(n_lr[i]) / std::sqrt(2.0)).epsilon(0.02));
    }
    CHECK(corr_num / std::sqrt(corr_a * corr_b) >= 0.999);
  }

  SUBCASE("mismatched geometries are rejected") {
    Sinogram wrong(ScanGeometry{4, 8, 1.0, 4.0}, 4e4);
    Rng rng(3);
    CHECK_THROWS_AS(inject_correlated_noise(hr, wrong, params, rng), ValidationError);
  }
}

TEST_CASE("FBP of a zero sinogram is air") {
  const Sinogram s(hr_geometry());
  const Image2D img = reconstruct_fbp(s, FilterKernel::ramp, 128, 0.5);
  for (double v : img.data) CHECK(v == doctest::Approx(-1000.0));
}

TEST_CASE("FBP recovers a disk's interior attenuation") {
  const double hu = 1000.0;
  const Sinogram s = forward_project(disk_mu(0.0, 0.0, 20.0, hu, 128, 0.5), hr_geometry());
  const Image2D img = reconstruct_fbp(s, FilterKernel::ramp, 128, 0.5);
  double acc = 0.0;
  int count = 0;
  for (int r = 0; r < 128; ++r)
    for (int c = 0; c < 128; ++c)
      if (std::hypot(img.x_of(c), img.y_of(r)) < 12.0) {
        acc += img.at(r, c);
        ++count;
      }
  CHECK(std::abs(acc / count - hu) <= 0.02 * hu);
}

TEST_CASE("FBP round trip of a smooth phantom exceeds 30 dB interior PSNR") {
  phantoms::PhantomSpec spec;
  spec.image_size = 128;
  spec.pixel_spacing = 0.5;
  spec.ellipses = {{0, 0, 26, 22, 0.1, 40}, {0, 0, 23, 19, 0.1, 1200}, {0, 0, 20, 16, 0.1, 30},
                   {-8, 3, 4, 6, 0.4, 400}, {9, -5, 3, 3, 0, -600}};
  const Image2D truth = smooth(phantoms::render_phantom(spec), 2.0);
  const Sinogram s = forward_project(hu_to_mu(truth), hr_geometry());
  for (auto kernel : {FilterKernel::ramp, FilterKernel::bone}) {
    const Image2D rec = reconstruct_fbp(s, kernel, 128, 0.5);
    double mse = 0.0, lo = 1e9, hi = -1e9;
    int count = 0;
    for (int r = 0; r < 128; ++r)
      for (int c = 0; c < 128; ++c) {
        if (std::hypot(truth.x_of(c), truth.y_of(r)) > 24.0) continue;
        const double e = rec.at(r, c) - truth.at(r, c);
        mse += e * e;
        lo = std::min(lo, truth.at(r, c));
        hi = std::max(hi, truth.at(r, c));
        ++count;
      }
    const double psnr = 10.0 * std::log10((hi - lo) * (hi - lo) / (mse / count));
    CAPTURE(psnr);
    if (kernel == FilterKernel::ramp) CHECK(psnr >= 30.0);
    else CHECK(psnr >= 25.0);
  }
}

TEST_CASE("bone kernel boosts high frequencies monotonically") {
  const auto ramp = filter_response(FilterKernel::ramp, 512, 0.375);
  const auto bone = filter_response(FilterKernel::bone, 512, 0.375);
  CHECK(bone[0] == doctest::Approx(ramp[0]));
  CHECK(bone.back() == doctest::Approx(ramp.back() * (1.0 + kBoneBoost)));
  for (std::size_t k = 1; k < bone.size(); ++k) CHECK(bone[k] / ramp[k] >= bone[k - 1] / std::max(ramp[k - 1], 1e-300) - 1e-12);
}

TEST_CASE("sinograms round-trip through the raster container") {
  const auto dir = std::filesystem::temp_directory_path() / "ncsr_test_sino";
  Sinogram s(ScanGeometry{3, 4, 0.5, 1.0}, 777.0);
  for (std::size_t i = 0; i < s.p.size(); ++i) s.p[i] = 0.25 * static_cast<double>(i);
  io::save_sinogram(dir / "s", s);
  const Sinogram back = io::load_sinogram(dir / "s");
  CHECK(back.geometry == s.geometry);
  CHECK(back.photons_in == 777.0);
  CHECK(back.p == s.p);
  std::filesystem::remove_all(dir);
}
