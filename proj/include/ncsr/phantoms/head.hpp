#pragma once

#include <cstdint>

#include "ncsr/phantoms/phantom.hpp"

namespace ncsr::phantoms {

/// smooth: homogeneous bone, the stand-in for the simulation phantoms.
/// trabecular: textured petrous bone with air cells, the stand-in for real anatomy.
enum class HeadStyle { smooth, trabecular };

/// Axis-aligned square in millimetres.
struct SquareMm {
  double cx = 0.0;
  double cy = 0.0;
  double half = 0.0;
};

/// Disk in millimetres.
struct DiskMm {
  double cx = 0.0;
  double cy = 0.0;
  double radius = 0.0;
};

struct HeadPhantom {
  PhantomSpec spec;
  /// Feature-free region of constant soft tissue.
  DiskMm uniform_region;
  /// Square fully inside a petrous bone block (textured for the trabecular style).
  SquareMm bone_region;
  double brain_hu = 0.0;
};

struct HeadOptions {
  int image_size = 256;
  double pixel_spacing = 0.25;
  double uniform_radius_mm = 3.5;
  double bone_half_mm = 2.5;
  double texture_correlation_mm = 1.5;
};

/// Randomized head-like slice. Deterministic in (seed, style, options).
HeadPhantom generate_head_phantom(std::uint64_t seed, HeadStyle style, const HeadOptions& options = {});

}  // namespace ncsr::phantoms
