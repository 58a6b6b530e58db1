#include "ncsr/phantoms/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ncsr/common/error.hpp"
#include "ncsr/common/rng.hpp"

namespace ncsr::phantoms {

bool Ellipse::contains(double x, double y) const {
  const double c = std::cos(rotation);
  const double s = std::sin(rotation);
  const double dx = x - cx;
  const double dy = y - cy;
  const double u = c * dx + s * dy;
  const double v = -s * dx + c * dy;
  return (u * u) / (ax * ax) + (v * v) / (ay * ay) <= 1.0;
}

double Ellipse::extent_x() const {
  const double c = std::cos(rotation);
  const double s = std::sin(rotation);
  return std::sqrt(ax * ax * c * c + ay * ay * s * s);
}

double Ellipse::extent_y() const {
  const double c = std::cos(rotation);
  const double s = std::sin(rotation);
  return std::sqrt(ax * ax * s * s + ay * ay * c * c);
}

void PhantomSpec::validate() const {
  require(image_size > 0, "phantom image_size must be positive");
  require(pixel_spacing > 0.0, "phantom pixel_spacing must be positive");
  require(background_hu >= kMinHu && background_hu <= kMaxHu, "background HU outside [-1000, 3000]");
  const double half = 0.5 * fov() + 1e-9;
  for (std::size_t i = 0; i < ellipses.size(); ++i) {
    const Ellipse& e = ellipses[i];
    const std::string tag = "ellipse " + std::to_string(i);
    require(e.ax > 0.0 && e.ay > 0.0, tag + ": semi-axes must be positive");
    require(e.value_hu >= kMinHu && e.value_hu <= kMaxHu, tag + ": HU outside [-1000, 3000]");
    require(std::abs(e.cx) + e.extent_x() <= half && std::abs(e.cy) + e.extent_y() <= half,
            tag + ": extends outside the field of view");
  }
  for (std::size_t i = 0; i < textures.size(); ++i) {
    const TextureParams& p = textures[i].params;
    const std::string tag = "texture " + std::to_string(i);
    require(p.correlation_length_mm > 0.0, tag + ": correlation length must be positive");
    require(p.amplitude_hu >= 0.0, tag + ": amplitude must be non-negative");
  }
}

namespace {

constexpr int kSubsamples = 4;

struct PreparedEllipse {
  Ellipse e;
  double c, s, inv_ax2, inv_ay2;
  double xmin, xmax, ymin, ymax;

  explicit PreparedEllipse(const Ellipse& el)
      : e(el),
        c(std::cos(el.rotation)),
        s(std::sin(el.rotation)),
        inv_ax2(1.0 / (el.ax * el.ax)),
        inv_ay2(1.0 / (el.ay * el.ay)),
        xmin(el.cx - el.extent_x()),
        xmax(el.cx + el.extent_x()),
        ymin(el.cy - el.extent_y()),
        ymax(el.cy + el.extent_y()) {}

  bool contains(double x, double y) const {
    if (x < xmin || x > xmax || y < ymin || y > ymax) return false;
    const double dx = x - e.cx;
    const double dy = y - e.cy;
    const double u = c * dx + s * dy;
    const double v = -s * dx + c * dy;
    return u * u * inv_ax2 + v * v * inv_ay2 <= 1.0;
  }
};

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

int reflect(int i, int n) {
  while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
  return i;
}

std::vector<double> blur(const std::vector<double>& in, int n, double sigma) {
  const std::vector<double> k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(in.size()), out(in.size());
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t) acc += k[t + radius] * in[static_cast<std::size_t>(r) * n + reflect(c + t, n)];
      tmp[static_cast<std::size_t>(r) * n + c] = acc;
    }
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t) acc += k[t + radius] * tmp[static_cast<std::size_t>(reflect(r + t, n)) * n + c];
      out[static_cast<std::size_t>(r) * n + c] = acc;
    }
  return out;
}

double clamp_hu(double v) { return std::clamp(v, kMinHu, kMaxHu); }

}  // namespace

Image2D render_phantom(const PhantomSpec& spec) {
  spec.validate();
  std::vector<PreparedEllipse> prepared;
  prepared.reserve(spec.ellipses.size());
  for (const Ellipse& e : spec.ellipses) prepared.emplace_back(e);

  Image2D img(spec.image_size, spec.pixel_spacing, spec.background_hu);
  const double h = spec.pixel_spacing;
  const double inv = 1.0 / (kSubsamples * kSubsamples);
  for (int r = 0; r < spec.image_size; ++r) {
    for (int c = 0; c < spec.image_size; ++c) {
      const double x0 = img.x_of(c);
      const double y0 = img.y_of(r);
      double acc = 0.0;
      for (int sy = 0; sy < kSubsamples; ++sy) {
        const double y = y0 + ((sy + 0.5) / kSubsamples - 0.5) * h;
        for (int sx = 0; sx < kSubsamples; ++sx) {
          const double x = x0 + ((sx + 0.5) / kSubsamples - 0.5) * h;
          double value = spec.background_hu;
          for (auto it = prepared.rbegin(); it != prepared.rend(); ++it) {
            if (it->contains(x, y)) {
              value = it->e.value_hu;
              break;
            }
          }
          acc += value;
        }
      }
      img.at(r, c) = clamp_hu(acc * inv);
    }
  }
  for (std::size_t i = 0; i < spec.textures.size(); ++i)
    img = add_trabecular_texture(img, spec.textures[i].region, spec.textures[i].params,
                                 derive_seed(spec.rng_seed, i));
  return img;
}

Mask2D rasterize_region(const RegionSpec& region, const Image2D& img) {
  Mask2D mask(img.size);
  std::vector<PreparedEllipse> inc(region.include.begin(), region.include.end());
  std::vector<PreparedEllipse> exc(region.exclude.begin(), region.exclude.end());
  for (int r = 0; r < img.size; ++r)
    for (int c = 0; c < img.size; ++c) {
      const double x = img.x_of(c);
      const double y = img.y_of(r);
      bool in = std::any_of(inc.begin(), inc.end(), [&](const PreparedEllipse& e) { return e.contains(x, y); });
      if (in) in = std::none_of(exc.begin(), exc.end(), [&](const PreparedEllipse& e) { return e.contains(x, y); });
      if (in && region.min_input_hu) in = img.at(r, c) >= *region.min_input_hu;
      mask.at(r, c) = in ? 1 : 0;
    }
  return mask;
}

std::vector<double> band_pass_field(int size, double spacing, double correlation_length_mm, std::uint64_t seed) {
  require(size > 0 && spacing > 0.0 && correlation_length_mm > 0.0, "invalid band-pass field parameters");
  Rng rng(seed);
  std::vector<double> white(static_cast<std::size_t>(size) * size);
  fill_normal(rng, white);
  const double sigma = 0.5 * correlation_length_mm / spacing;
  const std::vector<double> narrow = blur(white, size, sigma);
  const std::vector<double> wide = blur(white, size, 2.0 * sigma);
  std::vector<double> field(white.size());
  for (std::size_t i = 0; i < field.size(); ++i) field[i] = narrow[i] - wide[i];
  const double mean = std::accumulate(field.begin(), field.end(), 0.0) / static_cast<double>(field.size());
  double var = 0.0;
  for (double v : field) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(field.size()));
  for (double& v : field) v = sd > 0.0 ? (v - mean) / sd : 0.0;
  return field;
}

Image2D add_trabecular_texture(const Image2D& img, const RegionSpec& region, const TextureParams& params,
                               std::uint64_t seed) {
  img.validate();
  const Mask2D mask = rasterize_region(region, img);
  if (mask.empty() || params.amplitude_hu == 0.0) return img;
  const std::vector<double> field = band_pass_field(img.size, img.spacing, params.correlation_length_mm, seed);
  Image2D out = img;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    if (!mask.data[i]) continue;
    const double sign = field[i] > params.threshold ? 1.0 : -1.0;
    out.data[i] = clamp_hu(img.data[i] + sign * params.amplitude_hu);
  }
  return out;
}

void to_json(nlohmann::json& j, const Ellipse& e) {
  j = {{"center_mm", {e.cx, e.cy}}, {"semi_axes_mm", {e.ax, e.ay}}, {"rotation_rad", e.rotation},
       {"value_hu", e.value_hu}};
}

void from_json(const nlohmann::json& j, Ellipse& e) {
  e.cx = j.at("center_mm").at(0).get<double>();
  e.cy = j.at("center_mm").at(1).get<double>();
  e.ax = j.at("semi_axes_mm").at(0).get<double>();
  e.ay = j.at("semi_axes_mm").at(1).get<double>();
  e.rotation = j.value("rotation_rad", 0.0);
  e.value_hu = j.value("value_hu", 0.0);
}

void to_json(nlohmann::json& j, const RegionSpec& r) {
  j = {{"include", r.include}, {"exclude", r.exclude}};
  if (r.min_input_hu) j["min_input_hu"] = *r.min_input_hu;
}

void from_json(const nlohmann::json& j, RegionSpec& r) {
  r.include = j.value("include", std::vector<Ellipse>{});
  r.exclude = j.value("exclude", std::vector<Ellipse>{});
  r.min_input_hu.reset();
  if (j.contains("min_input_hu")) r.min_input_hu = j.at("min_input_hu").get<double>();
}

void to_json(nlohmann::json& j, const TextureParams& p) {
  j = {{"correlation_length_mm", p.correlation_length_mm}, {"amplitude_hu", p.amplitude_hu},
       {"threshold", p.threshold}};
}

void from_json(const nlohmann::json& j, TextureParams& p) {
  p.correlation_length_mm = j.value("correlation_length_mm", 1.5);
  p.amplitude_hu = j.value("amplitude_hu", 0.0);
  p.threshold = j.value("threshold", 0.0);
}

void to_json(nlohmann::json& j, const TextureRegion& t) { j = {{"region", t.region}, {"params", t.params}}; }

void from_json(const nlohmann::json& j, TextureRegion& t) {
  t.region = j.at("region").get<RegionSpec>();
  t.params = j.at("params").get<TextureParams>();
}

void to_json(nlohmann::json& j, const PhantomSpec& s) {
  j = {{"image_size", s.image_size}, {"pixel_spacing_mm", s.pixel_spacing}, {"background_hu", s.background_hu},
       {"ellipses", s.ellipses},     {"textures", s.textures},              {"rng_seed", s.rng_seed}};
}

void from_json(const nlohmann::json& j, PhantomSpec& s) {
  s.image_size = j.value("image_size", 128);
  s.pixel_spacing = j.value("pixel_spacing_mm", 0.5);
  s.background_hu = j.value("background_hu", kMinHu);
  s.ellipses = j.value("ellipses", std::vector<Ellipse>{});
  s.textures = j.value("textures", std::vector<TextureRegion>{});
  s.rng_seed = j.value("rng_seed", std::uint64_t{0});
}

}  // namespace ncsr::phantoms
