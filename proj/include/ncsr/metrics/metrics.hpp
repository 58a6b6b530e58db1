#pragma once

#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ncsr/common/image.hpp"

namespace ncsr::metrics {

enum class RoiShape { ellipse, rectangle };
enum class RoiRole { uniform, textured };

/// Region of interest in pixel coordinates (row, col of pixel centres).
/// Ellipse: ((r - cr) / hr)^2 + ((c - cc) / hc)^2 <= 1. Rectangle: |r - cr| <= hr and |c - cc| <= hc.
struct ROISpec {
  std::string name;
  RoiShape shape = RoiShape::ellipse;
  RoiRole role = RoiRole::uniform;
  double center_row = 0.0;
  double center_col = 0.0;
  double half_rows = 0.0;
  double half_cols = 0.0;

  /// Inside an image of the given side; uniform ROIs need at least kMinUniformPixels.
  void validate(int image_size) const;
  Mask2D mask(int image_size) const;
};

inline constexpr std::size_t kMinUniformPixels = 100;

void to_json(nlohmann::json& j, const ROISpec& r);
void from_json(const nlohmann::json& j, ROISpec& r);

/// Population standard deviation inside the ROI.
double roi_std(const Image2D& img, const ROISpec& roi);

struct Offset {
  int dr = 0;
  int dc = 0;
};

struct HaralickConfig {
  int gray_levels = 64;
  double window_min_hu = -1000.0;
  double window_max_hu = 2000.0;
  std::vector<Offset> offsets = {{0, 1}, {1, 0}, {1, 1}, {1, -1}};

  void validate() const;
};

void to_json(nlohmann::json& j, const HaralickConfig& c);
void from_json(const nlohmann::json& j, HaralickConfig& c);

inline constexpr int kHaralickFeatures = 13;
extern const char* const kHaralickNames[kHaralickFeatures];

/// Gray level of each ROI pixel (row-major over the image, -1 outside the ROI).
std::vector<int> quantize(const Image2D& img, const Mask2D& roi, const HaralickConfig& cfg);

/// Normalized symmetric co-occurrence matrix (levels x levels, row-major) for one offset.
std::vector<double> glcm(const std::vector<int>& levels, int size, int gray_levels, Offset offset);

/// The 13 classic features of one normalized GLCM (natural-log entropies).
std::vector<double> glcm_features(const std::vector<double>& p, int gray_levels);

/// Features averaged over the configured offsets. The ROI must span at least 8x8 pixels.
std::vector<double> haralick_features(const Image2D& img, const ROISpec& roi, const HaralickConfig& cfg);

/// Per-dimension z-scoring fitted on a reference feature set. Zero-variance dimensions are dropped.
struct FeatureStandardization {
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<int> dropped;

  bool kept(int dim) const;
};

void to_json(nlohmann::json& j, const FeatureStandardization& s);
void from_json(const nlohmann::json& j, FeatureStandardization& s);

FeatureStandardization fit_standardization(const std::vector<std::vector<double>>& features);

double feature_distance(const std::vector<double>& a, const std::vector<double>& b, const FeatureStandardization& s);

double haralick_distance(const Image2D& a, const Image2D& b, const ROISpec& roi, const HaralickConfig& cfg,
                         const FeatureStandardization& s);

/// Sentinel for identical images.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// 10 log10(R^2 / MSE), R = max - min of the whole reference image; MSE over the ROI when given.
double psnr(const Image2D& a, const Image2D& ref, const std::optional<ROISpec>& roi = std::nullopt);

struct MetricRow {
  std::string case_id;
  std::string arm;
  std::string roi;
  std::string metric;
  double value = 0.0;
};

/// CSV with header case,arm,roi,metric,value. Infinite values are written as "inf".
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows);
std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path);

}  // namespace ncsr::metrics
