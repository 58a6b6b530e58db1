#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace ncsr {

/// Square grid of doubles centered on the origin.
///
/// Pixel (row, col) has its center at
///   x = (col + 0.5) * spacing - fov / 2,   y = (row + 0.5) * spacing - fov / 2
/// with x, y in millimetres.
struct Grid2D {
  int size = 0;
  double spacing = 1.0;  // mm / pixel
  std::vector<double> data;

  Grid2D() = default;
  Grid2D(int n, double pixel_spacing, double fill = 0.0);

  double& at(int row, int col) { return data[static_cast<std::size_t>(row) * size + col]; }
  double at(int row, int col) const { return data[static_cast<std::size_t>(row) * size + col]; }

  double fov() const { return size * spacing; }
  double x_of(int col) const { return (col + 0.5) * spacing - 0.5 * fov(); }
  double y_of(int row) const { return (row + 0.5) * spacing - 0.5 * fov(); }
  std::size_t pixel_count() const { return data.size(); }

  /// Square shape, positive spacing, finite values.
  void validate() const;
  bool same_grid(const Grid2D& other) const;
};

/// Attenuation image in Hounsfield units.
struct Image2D : Grid2D {
  using Grid2D::Grid2D;
};

/// Linear attenuation coefficients in 1/mm.
struct MuMap : Grid2D {
  using Grid2D::Grid2D;
};

/// Binary mask on a square grid (0 / 1 per pixel).
struct Mask2D {
  int size = 0;
  std::vector<std::uint8_t> data;

  Mask2D() = default;
  explicit Mask2D(int n, std::uint8_t fill = 0)
      : size(n), data(static_cast<std::size_t>(n) * n, fill) {}

  std::uint8_t& at(int row, int col) { return data[static_cast<std::size_t>(row) * size + col]; }
  std::uint8_t at(int row, int col) const { return data[static_cast<std::size_t>(row) * size + col]; }
  std::size_t count() const;
  bool empty() const { return count() == 0; }
  bool operator==(const Mask2D&) const = default;
};

/// Extract / insert a square crop.
Image2D crop(const Image2D& img, int row0, int col0, int extent);

}  // namespace ncsr
