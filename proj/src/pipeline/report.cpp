#include "ncsr/pipeline/report.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <memory>
#include <set>
#include <sstream>

#include "ncsr/common/error.hpp"
#include "ncsr/pipeline/experiment.hpp"

namespace ncsr::pipeline {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

constexpr int kZoom = 4;
constexpr int kGap = 4;

void put(std::vector<std::uint8_t>& rgb, int width, int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
  rgb[i] = r;
  rgb[i + 1] = g;
  rgb[i + 2] = b;
}

std::uint8_t gray(double hu, double lo, double hi) {
  const double v = std::clamp((hu - lo) / (hi - lo), 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(255.0 * v));
}

// Yellow on pixels of the mask that touch a pixel outside it.
void outline(std::vector<std::uint8_t>& rgb, int width, int x0, int y0, const Mask2D& m, int scale, int r0, int c0,
             int extent) {
  auto inside = [&](int r, int c) { return r >= 0 && c >= 0 && r < m.size && c < m.size && m.at(r, c); };
  for (int r = r0; r < r0 + extent; ++r)
    for (int c = c0; c < c0 + extent; ++c) {
      if (!inside(r, c)) continue;
      if (inside(r - 1, c) && inside(r + 1, c) && inside(r, c - 1) && inside(r, c + 1)) continue;
      for (int dy = 0; dy < scale; ++dy)
        for (int dx = 0; dx < scale; ++dx)
          put(rgb, width, x0 + (c - c0) * scale + dx, y0 + (r - r0) * scale + dy, 255, 220, 0);
    }
}

}  // namespace

void write_png_rgb(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& rgb) {
  require(width > 0 && height > 0 && rgb.size() == static_cast<std::size_t>(width) * height * 3,
          "write_png_rgb: buffer does not match the image size");
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "wb"));
  if (!f) throw RuntimeError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw RuntimeError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw RuntimeError("libpng failed writing " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(rgb.data() + static_cast<std::size_t>(y) * width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<std::uint8_t> read_png_rgb(const std::filesystem::path& path, int& width, int& height) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) throw RuntimeError("cannot read PNG " + path.string());
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw RuntimeError("cannot decode PNG " + path.string());
  }
  width = static_cast<int>(image.width);
  height = static_cast<int>(image.height);
  return buf;
}

void render_figure(const std::filesystem::path& path, const std::vector<FigureRow>& rows, double low_hu,
                   double high_hu) {
  require(!rows.empty() && !rows.front().images.empty(), "render_figure: nothing to draw");
  const int n = rows.front().images.front().size;
  const int cols = static_cast<int>(rows.front().images.size());
  for (const auto& r : rows) {
    require(static_cast<int>(r.images.size()) == cols, "render_figure: rows have different column counts");
    for (const auto& img : r.images) require(img.size == n, "render_figure: images differ in size");
  }
  const int zoom_extent = n / kZoom;
  const int row_height = n + kGap + zoom_extent * kZoom;
  const int width = cols * n + (cols + 1) * kGap;
  const int height = static_cast<int>(rows.size()) * (row_height + kGap) + kGap;
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(width) * height * 3, 0);

  for (std::size_t ri = 0; ri < rows.size(); ++ri) {
    const FigureRow& row = rows[ri];
    const int y0 = kGap + static_cast<int>(ri) * (row_height + kGap);
    // Zoom window: centred on the zoom ROI, clamped to the image.
    const int zr = std::clamp(static_cast<int>(std::lround(row.zoom.center_row)) - zoom_extent / 2, 0, n - zoom_extent);
    const int zc = std::clamp(static_cast<int>(std::lround(row.zoom.center_col)) - zoom_extent / 2, 0, n - zoom_extent);
    for (int ci = 0; ci < cols; ++ci) {
      const Image2D& img = row.images[ci];
      const int x0 = kGap + ci * (n + kGap);
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
          const std::uint8_t g = gray(img.at(r, c), low_hu, high_hu);
          put(rgb, width, x0 + c, y0 + r, g, g, g);
        }
      for (const auto& roi : row.rois) outline(rgb, width, x0, y0, roi.mask(n), 1, 0, 0, n);
      const int zy = y0 + n + kGap;
      for (int r = 0; r < zoom_extent; ++r)
        for (int c = 0; c < zoom_extent; ++c) {
          const std::uint8_t g = gray(img.at(zr + r, zc + c), low_hu, high_hu);
          for (int dy = 0; dy < kZoom; ++dy)
            for (int dx = 0; dx < kZoom; ++dx) put(rgb, width, x0 + c * kZoom + dx, zy + r * kZoom + dy, g, g, g);
        }
      if (row.zoom.half_rows > 0) outline(rgb, width, x0, zy, row.zoom.mask(n), kZoom, zr, zc, zoom_extent);
    }
  }
  write_png_rgb(path, width, height, rgb);
}

namespace {

std::vector<std::string> columns_of(const Report& report) {
  std::vector<std::string> cols;
  std::set<std::string> seen;
  for (const auto& m : report.methods) {
    auto it = report.table.find(m);
    if (it == report.table.end()) continue;
    for (const auto& [col, v] : it->second)
      if (seen.insert(col).second) cols.push_back(col);
  }
  std::stable_sort(cols.begin(), cols.end(), [](const std::string& a, const std::string& b) {
    auto rank = [](const std::string& s) { return s.rfind("std:", 0) == 0 ? 0 : s.rfind("haralick:", 0) == 0 ? 1 : 2; };
    return rank(a) < rank(b);
  });
  return cols;
}

std::string fmt(double v, int precision) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

}  // namespace

void write_summary_csv(const std::filesystem::path& path, const Report& report) {
  std::ofstream out(path);
  if (!out) throw RuntimeError("cannot write " + path.string());
  const auto cols = columns_of(report);
  out << "method";
  for (const auto& c : cols) out << ',' << c;
  out << '\n' << std::setprecision(10);
  for (const auto& m : report.methods) {
    out << m;
    const auto it = report.table.find(m);
    for (const auto& c : cols) {
      out << ',';
      if (it != report.table.end() && it->second.count(c)) out << fmt(it->second.at(c), 6);
    }
    out << '\n';
  }
}

std::string summary_markdown(const Report& report) {
  const auto cols = columns_of(report);
  std::ostringstream s;
  s << "| method |";
  for (const auto& c : cols) s << ' ' << c << " |";
  s << "\n|---|";
  for (std::size_t i = 0; i < cols.size(); ++i) s << "---|";
  s << '\n';
  for (const auto& m : report.methods) {
    s << "| " << m << " |";
    const auto it = report.table.find(m);
    for (const auto& c : cols) {
      const bool has = it != report.table.end() && it->second.count(c);
      s << ' ' << (has ? fmt(it->second.at(c), 2) : "-") << " |";
    }
    s << '\n';
  }
  s << "\nMedians over " << report.cases << " held-out slices.\n";
  return s.str();
}

}  // namespace ncsr::pipeline
