#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ncsr/common/image.hpp"

namespace ncsr::io {

/// On-disk raster container: `<stem>.f32` holds raw little-endian float32
/// samples in row-major order; `<stem>.json` is the sidecar with at least
/// {"kind", "shape": [rows, cols], "dtype": "float32"} plus kind-specific keys.
struct Raster {
  int rows = 0;
  int cols = 0;
  std::vector<float> samples;
  nlohmann::json meta = nlohmann::json::object();
};

void write_raster(const std::filesystem::path& stem, const Raster& raster);
Raster read_raster(const std::filesystem::path& stem);

std::filesystem::path data_path(const std::filesystem::path& stem);
std::filesystem::path sidecar_path(const std::filesystem::path& stem);

void save_image(const std::filesystem::path& stem, const Image2D& img,
                const nlohmann::json& extra = nlohmann::json::object());
Image2D load_image(const std::filesystem::path& stem);

void write_json(const std::filesystem::path& path, const nlohmann::json& doc);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace ncsr::io
