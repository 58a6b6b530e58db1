#include "ncsr/phantoms/head.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "ncsr/common/rng.hpp"

namespace ncsr::phantoms {
namespace {

class Draw {
 public:
  explicit Draw(std::uint64_t seed) : rng_(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

 private:
  Rng rng_;
};

bool overlaps_disk(const DiskMm& d, double x, double y, double r, double margin) {
  return std::hypot(x - d.cx, y - d.cy) < d.radius + r + margin;
}

bool overlaps_square(const SquareMm& s, double x, double y, double r, double margin) {
  return std::abs(x - s.cx) < s.half + r + margin && std::abs(y - s.cy) < s.half + r + margin;
}

}  // namespace

HeadPhantom generate_head_phantom(std::uint64_t seed, HeadStyle style, const HeadOptions& options) {
  Draw d(derive_seed(seed, style == HeadStyle::smooth ? 11 : 23));
  HeadPhantom out;
  PhantomSpec& spec = out.spec;
  spec.image_size = options.image_size;
  spec.pixel_spacing = options.pixel_spacing;
  spec.background_hu = -1000.0;
  spec.rng_seed = derive_seed(seed, 101);

  const double scale = spec.fov() / 64.0;
  auto mm = [scale](double v) { return v * scale; };

  Ellipse scalp{0.0, 0.0, mm(d.uniform(26.0, 28.5)), mm(d.uniform(23.0, 26.0)), d.uniform(-0.1, 0.1),
                d.uniform(30.0, 50.0)};
  Ellipse skull = scalp;
  skull.ax -= mm(d.uniform(1.5, 2.5));
  skull.ay -= mm(d.uniform(1.5, 2.5));
  skull.value_hu = d.uniform(1100.0, 1500.0);
  Ellipse brain = skull;
  brain.ax -= mm(d.uniform(2.5, 4.0));
  brain.ay -= mm(d.uniform(2.5, 4.0));
  out.brain_hu = d.uniform(25.0, 45.0);
  brain.value_hu = out.brain_hu;
  spec.ellipses = {scalp, skull, brain};

  out.uniform_region = {mm(d.uniform(-2.0, 2.0)), mm(d.uniform(9.0, 11.5)), mm(options.uniform_radius_mm)};

  for (double side : {-1.0, 1.0}) {
    const double vx = mm(d.uniform(-0.6, 0.6));
    const double vy = mm(d.uniform(-2.0, 2.0));
    spec.ellipses.push_back({side * mm(d.uniform(2.0, 3.5)) + vx, vy, mm(d.uniform(1.0, 1.8)), mm(d.uniform(3.0, 4.5)),
                             side * d.uniform(0.0, 0.3), d.uniform(2.0, 10.0)});
  }

  const int lesions = d.integer(1, 3);
  for (int placed = 0, tries = 0; placed < lesions && tries < 200; ++tries) {
    const double r = mm(d.uniform(1.0, 2.5));
    const double x = mm(d.uniform(-10.0, 10.0));
    const double y = mm(d.uniform(-14.0, 6.0));
    if (overlaps_disk(out.uniform_region, x, y, r, mm(1.0))) continue;
    const double contrast = d.uniform(10.0, 30.0) * (d.uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0);
    spec.ellipses.push_back({x, y, r, r * d.uniform(0.7, 1.0), d.uniform(0.0, std::numbers::pi), out.brain_hu + contrast});
    ++placed;
  }

  spec.ellipses.push_back({mm(d.uniform(-3.0, 3.0)), -mm(d.uniform(16.5, 18.5)), mm(d.uniform(2.5, 4.0)),
                           mm(d.uniform(1.5, 2.5)), d.uniform(-0.2, 0.2), -1000.0});

  std::vector<Ellipse> petrous;
  for (double side : {-1.0, 1.0}) {
    Ellipse p{side * mm(d.uniform(13.0, 15.5)), mm(d.uniform(-4.0, 1.0)), mm(d.uniform(6.0, 7.0)),
              mm(d.uniform(5.0, 5.8)), side * d.uniform(0.1, 0.5), 0.0};
    p.value_hu = style == HeadStyle::smooth ? d.uniform(900.0, 1400.0) : d.uniform(700.0, 800.0);
    petrous.push_back(p);
    spec.ellipses.push_back(p);
  }
  out.bone_region = {petrous[0].cx, petrous[0].cy, mm(options.bone_half_mm)};

  if (style == HeadStyle::trabecular) {
    for (const Ellipse& p : petrous) {
      const int cells = d.integer(2, 4);
      for (int placed = 0, tries = 0; placed < cells && tries < 200; ++tries) {
        const double r = mm(d.uniform(0.5, 1.0));
        const double ang = d.uniform(0.0, 2.0 * std::numbers::pi);
        const double rho = d.uniform(0.45, 0.75);
        const double x = p.cx + rho * p.ax * std::cos(ang);
        const double y = p.cy + rho * p.ay * std::sin(ang);
        if (overlaps_square(out.bone_region, x, y, r, mm(0.5))) continue;
        spec.ellipses.push_back({x, y, r, r, 0.0, -1000.0});
        ++placed;
      }
    }
    TextureRegion tex;
    tex.region.include = petrous;
    tex.region.min_input_hu = 200.0;
    tex.params.correlation_length_mm = mm(options.texture_correlation_mm);
    tex.params.amplitude_hu = d.uniform(400.0, 480.0);
    tex.params.threshold = d.uniform(-0.1, 0.1);
    spec.textures.push_back(tex);
  }
  return out;
}

}  // namespace ncsr::phantoms
