#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ncsr/common/image.hpp"
#include "ncsr/metrics/metrics.hpp"

namespace ncsr::pipeline {

struct Report;

/// 8-bit RGB, row-major, lossless PNG.
void write_png_rgb(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& rgb);
std::vector<std::uint8_t> read_png_rgb(const std::filesystem::path& path, int& width, int& height);

/// One row of the figure: images in column order plus the ROIs to outline.
struct FigureRow {
  std::vector<Image2D> images;
  std::vector<metrics::ROISpec> rois;
  /// Pixel ROI to enlarge in the zoom strip below the row (none when half extent is 0).
  metrics::ROISpec zoom;
};

/// Tiles rows of equally sized images, gray-mapped through [low_hu, high_hu], with ROI
/// outlines in yellow and a 4x nearest-neighbour zoom strip under each row.
void render_figure(const std::filesystem::path& path, const std::vector<FigureRow>& rows, double low_hu,
                   double high_hu);

/// Medians per method and column, in method display order.
void write_summary_csv(const std::filesystem::path& path, const Report& report);
std::string summary_markdown(const Report& report);

}  // namespace ncsr::pipeline
