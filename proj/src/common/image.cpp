#include "ncsr/common/image.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ncsr/common/error.hpp"

namespace ncsr {

Grid2D::Grid2D(int n, double pixel_spacing, double fill)
    : size(n), spacing(pixel_spacing), data(static_cast<std::size_t>(std::max(n, 0)) * std::max(n, 0), fill) {}

void Grid2D::validate() const {
  require(size > 0, "grid size must be positive");
  require(spacing > 0.0 && std::isfinite(spacing), "pixel spacing must be positive");
  require(data.size() == static_cast<std::size_t>(size) * size,
          "grid data does not match " + std::to_string(size) + "x" + std::to_string(size));
  require(std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); }),
          "grid contains non-finite values");
}

bool Grid2D::same_grid(const Grid2D& other) const {
  return size == other.size && std::abs(spacing - other.spacing) <= 1e-12 * std::max(1.0, spacing);
}

std::size_t Mask2D::count() const {
  return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](std::uint8_t v) { return v != 0; }));
}

Image2D crop(const Image2D& img, int row0, int col0, int extent) {
  require(row0 >= 0 && col0 >= 0 && extent > 0 && row0 + extent <= img.size && col0 + extent <= img.size,
          "crop window outside image");
  Image2D out(extent, img.spacing);
  for (int r = 0; r < extent; ++r)
    std::copy_n(&img.data[static_cast<std::size_t>(row0 + r) * img.size + col0], extent,
                &out.data[static_cast<std::size_t>(r) * extent]);
  return out;
}

}  // namespace ncsr
