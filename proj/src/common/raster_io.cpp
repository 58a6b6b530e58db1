#include "ncsr/common/raster_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "ncsr/common/error.hpp"

namespace ncsr::io {

namespace fs = std::filesystem;

fs::path data_path(const fs::path& stem) { return fs::path(stem.string() + ".f32"); }
fs::path sidecar_path(const fs::path& stem) { return fs::path(stem.string() + ".json"); }

namespace {

std::uint32_t byteswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

void to_little_endian(std::vector<float>& values) {
  if constexpr (std::endian::native == std::endian::big) {
    for (float& f : values) {
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      u = byteswap32(u);
      std::memcpy(&f, &u, 4);
    }
  }
}

}  // namespace

void write_json(const fs::path& path, const nlohmann::json& doc) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw RuntimeError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_raster(const fs::path& stem, const Raster& raster) {
  require(raster.samples.size() == static_cast<std::size_t>(raster.rows) * raster.cols,
          "raster sample count does not match its shape");
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  std::vector<float> le = raster.samples;
  to_little_endian(le);
  {
    std::ofstream out(data_path(stem), std::ios::binary);
    if (!out) throw RuntimeError("cannot write " + data_path(stem).string());
    out.write(reinterpret_cast<const char*>(le.data()), static_cast<std::streamsize>(le.size() * sizeof(float)));
  }
  nlohmann::json meta = raster.meta;
  meta["shape"] = {raster.rows, raster.cols};
  meta["dtype"] = "float32";
  meta["byte_order"] = "little";
  write_json(sidecar_path(stem), meta);
}

Raster read_raster(const fs::path& stem) {
  Raster raster;
  raster.meta = read_json(sidecar_path(stem));
  require(raster.meta.value("dtype", "") == "float32", stem.string() + ": only float32 rasters are supported");
  raster.rows = raster.meta.at("shape").at(0).get<int>();
  raster.cols = raster.meta.at("shape").at(1).get<int>();
  const std::size_t n = static_cast<std::size_t>(raster.rows) * raster.cols;
  raster.samples.resize(n);
  std::ifstream in(data_path(stem), std::ios::binary);
  if (!in) throw RuntimeError("cannot read " + data_path(stem).string());
  in.read(reinterpret_cast<char*>(raster.samples.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != n * sizeof(float))
    throw RuntimeError(data_path(stem).string() + ": truncated raster");
  to_little_endian(raster.samples);
  return raster;
}

void save_image(const fs::path& stem, const Image2D& img, const nlohmann::json& extra) {
  Raster r;
  r.rows = r.cols = img.size;
  r.samples.assign(img.data.begin(), img.data.end());
  r.meta = extra;
  r.meta["kind"] = r.meta.value("kind", "image");
  r.meta["units"] = "HU";
  r.meta["pixel_spacing_mm"] = img.spacing;
  write_raster(stem, r);
}

Image2D load_image(const fs::path& stem) {
  Raster r = read_raster(stem);
  require(r.rows == r.cols, stem.string() + ": image must be square");
  Image2D img(r.rows, r.meta.at("pixel_spacing_mm").get<double>());
  std::copy(r.samples.begin(), r.samples.end(), img.data.begin());
  return img;
}

}  // namespace ncsr::io
