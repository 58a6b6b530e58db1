#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <json.hpp>

#include "ncsr/common/image.hpp"

namespace ncsr::phantoms {

inline constexpr double kMinHu = -1000.0;
inline constexpr double kMaxHu = 3000.0;

/// Filled ellipse in millimetres; `rotation` is counter-clockwise in radians.
struct Ellipse {
  double cx = 0.0;
  double cy = 0.0;
  double ax = 1.0;
  double ay = 1.0;
  double rotation = 0.0;
  double value_hu = 0.0;

  bool contains(double x, double y) const;
  /// Half-widths of the axis-aligned bounding box.
  double extent_x() const;
  double extent_y() const;
};

/// Pixel set: centers inside any `include` ellipse and outside every `exclude`
/// ellipse, optionally gated on the underlying image value.
struct RegionSpec {
  std::vector<Ellipse> include;
  std::vector<Ellipse> exclude;
  std::optional<double> min_input_hu;
};

struct TextureParams {
  double correlation_length_mm = 1.5;
  double amplitude_hu = 0.0;
  /// Binarization level in units of the field's standard deviation; 0 gives a 50 % fill.
  double threshold = 0.0;
};

struct TextureRegion {
  RegionSpec region;
  TextureParams params;
};

struct PhantomSpec {
  int image_size = 128;
  double pixel_spacing = 0.5;
  double background_hu = kMinHu;
  std::vector<Ellipse> ellipses;
  std::vector<TextureRegion> textures;
  std::uint64_t rng_seed = 0;

  double fov() const { return image_size * pixel_spacing; }
  /// Throws ValidationError on ellipses leaving the field of view or HU out of range.
  void validate() const;
};

/// Rasterize with 4x4 subpixel sampling; later ellipses overwrite earlier ones.
/// Texture regions are applied afterwards in order, each with its own seed
/// stream derived from `rng_seed`.
Image2D render_phantom(const PhantomSpec& spec);

Mask2D rasterize_region(const RegionSpec& region, const Image2D& img);

/// Binarized band-pass random field inside `region`: each pixel becomes
/// value + amplitude or value - amplitude. Pixels outside are untouched.
Image2D add_trabecular_texture(const Image2D& img, const RegionSpec& region, const TextureParams& params,
                               std::uint64_t seed);

/// Zero-mean, unit-variance difference-of-Gaussians field on the image grid.
std::vector<double> band_pass_field(int size, double spacing, double correlation_length_mm, std::uint64_t seed);

void to_json(nlohmann::json& j, const Ellipse& e);
void from_json(const nlohmann::json& j, Ellipse& e);
void to_json(nlohmann::json& j, const RegionSpec& r);
void from_json(const nlohmann::json& j, RegionSpec& r);
void to_json(nlohmann::json& j, const TextureParams& p);
void from_json(const nlohmann::json& j, TextureParams& p);
void to_json(nlohmann::json& j, const TextureRegion& t);
void from_json(const nlohmann::json& j, TextureRegion& t);
void to_json(nlohmann::json& j, const PhantomSpec& s);
void from_json(const nlohmann::json& j, PhantomSpec& s);

}  // namespace ncsr::phantoms
