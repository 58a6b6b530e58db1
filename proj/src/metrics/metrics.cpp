#include "ncsr/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "ncsr/common/error.hpp"
#include "ncsr/common/log.hpp"

namespace ncsr::metrics {
namespace {

const char* shape_name(RoiShape s) { return s == RoiShape::ellipse ? "ellipse" : "rectangle"; }
const char* role_name(RoiRole r) { return r == RoiRole::uniform ? "uniform" : "textured"; }

std::vector<double> roi_values(const Image2D& img, const ROISpec& roi) {
  img.validate();
  roi.validate(img.size);
  const Mask2D m = roi.mask(img.size);
  std::vector<double> out;
  out.reserve(m.count());
  for (std::size_t i = 0; i < m.data.size(); ++i)
    if (m.data[i]) out.push_back(img.data[i]);
  return out;
}

double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

}  // namespace

void ROISpec::validate(int image_size) const {
  require(half_rows >= 0.0 && half_cols >= 0.0, "ROI '" + name + "': negative extent");
  require(center_row - half_rows >= 0.0 && center_col - half_cols >= 0.0 &&
              center_row + half_rows <= image_size - 1 && center_col + half_cols <= image_size - 1,
          "ROI '" + name + "' extends outside the " + std::to_string(image_size) + "x" + std::to_string(image_size) +
              " image");
  const std::size_t n = mask(image_size).count();
  require(n > 0, "ROI '" + name + "' contains no pixels");
  if (role == RoiRole::uniform)
    require(n >= kMinUniformPixels,
            "uniform ROI '" + name + "' has " + std::to_string(n) + " pixels, needs " + std::to_string(kMinUniformPixels));
}

Mask2D ROISpec::mask(int image_size) const {
  Mask2D m(image_size);
  for (int r = 0; r < image_size; ++r)
    for (int c = 0; c < image_size; ++c) {
      const double dr = r - center_row, dc = c - center_col;
      bool in;
      if (shape == RoiShape::rectangle) {
        in = std::abs(dr) <= half_rows && std::abs(dc) <= half_cols;
      } else {
        const double a = half_rows > 0 ? dr / half_rows : (dr == 0 ? 0.0 : 2.0);
        const double b = half_cols > 0 ? dc / half_cols : (dc == 0 ? 0.0 : 2.0);
        in = a * a + b * b <= 1.0;
      }
      m.at(r, c) = in ? 1 : 0;
    }
  return m;
}

void to_json(nlohmann::json& j, const ROISpec& r) {
  j = {{"name", r.name},           {"shape", shape_name(r.shape)},  {"role", role_name(r.role)},
       {"center_row", r.center_row}, {"center_col", r.center_col}, {"half_rows", r.half_rows},
       {"half_cols", r.half_cols}};
}

void from_json(const nlohmann::json& j, ROISpec& r) {
  r.name = j.value("name", std::string{});
  const std::string shape = j.value("shape", std::string("ellipse"));
  require(shape == "ellipse" || shape == "rectangle", "ROI shape must be ellipse or rectangle, got " + shape);
  r.shape = shape == "ellipse" ? RoiShape::ellipse : RoiShape::rectangle;
  const std::string role = j.value("role", std::string("uniform"));
  require(role == "uniform" || role == "textured", "ROI role must be uniform or textured, got " + role);
  r.role = role == "uniform" ? RoiRole::uniform : RoiRole::textured;
  r.center_row = j.at("center_row").get<double>();
  r.center_col = j.at("center_col").get<double>();
  r.half_rows = j.at("half_rows").get<double>();
  r.half_cols = j.at("half_cols").get<double>();
}

double roi_std(const Image2D& img, const ROISpec& roi) {
  const auto v = roi_values(img, roi);
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(v.size()));
}

const char* const kHaralickNames[kHaralickFeatures] = {
    "angular_second_moment", "contrast",           "correlation",        "sum_of_squares_variance",
    "inverse_difference_moment", "sum_average",    "sum_variance",       "sum_entropy",
    "entropy",               "difference_variance", "difference_entropy", "info_correlation_1",
    "info_correlation_2"};

void HaralickConfig::validate() const {
  require(gray_levels >= 8, "Haralick gray_levels must be >= 8");
  require(window_max_hu > window_min_hu, "Haralick window must have max > min");
  require(!offsets.empty(), "Haralick needs at least one offset");
  for (const Offset& o : offsets) require(o.dr != 0 || o.dc != 0, "Haralick offsets must be nonzero");
}

void to_json(nlohmann::json& j, const HaralickConfig& c) {
  nlohmann::json offs = nlohmann::json::array();
  for (const Offset& o : c.offsets) offs.push_back({o.dr, o.dc});
  j = {{"gray_levels", c.gray_levels},
       {"window_min_hu", c.window_min_hu},
       {"window_max_hu", c.window_max_hu},
       {"offsets", offs}};
}

void from_json(const nlohmann::json& j, HaralickConfig& c) {
  c = HaralickConfig{};
  c.gray_levels = j.value("gray_levels", c.gray_levels);
  c.window_min_hu = j.value("window_min_hu", c.window_min_hu);
  c.window_max_hu = j.value("window_max_hu", c.window_max_hu);
  if (j.contains("offsets")) {
    c.offsets.clear();
    for (const auto& o : j.at("offsets")) c.offsets.push_back({o.at(0).get<int>(), o.at(1).get<int>()});
  }
  c.validate();
}

std::vector<int> quantize(const Image2D& img, const Mask2D& roi, const HaralickConfig& cfg) {
  require(roi.size == img.size, "quantize: ROI mask and image sizes differ");
  std::vector<int> q(img.data.size(), -1);
  const double scale = cfg.gray_levels / (cfg.window_max_hu - cfg.window_min_hu);
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (!roi.data[i]) continue;
    const int level = static_cast<int>(std::floor((img.data[i] - cfg.window_min_hu) * scale));
    q[i] = std::clamp(level, 0, cfg.gray_levels - 1);
  }
  return q;
}

std::vector<double> glcm(const std::vector<int>& levels, int size, int gray_levels, Offset offset) {
  std::vector<double> p(static_cast<std::size_t>(gray_levels) * gray_levels, 0.0);
  double total = 0.0;
  for (int r = 0; r < size; ++r) {
    const int r2 = r + offset.dr;
    if (r2 < 0 || r2 >= size) continue;
    for (int c = 0; c < size; ++c) {
      const int c2 = c + offset.dc;
      if (c2 < 0 || c2 >= size) continue;
      const int a = levels[static_cast<std::size_t>(r) * size + c];
      const int b = levels[static_cast<std::size_t>(r2) * size + c2];
      if (a < 0 || b < 0) continue;
      p[static_cast<std::size_t>(a) * gray_levels + b] += 1.0;
      p[static_cast<std::size_t>(b) * gray_levels + a] += 1.0;
      total += 2.0;
    }
  }
  if (total == 0.0) throw ValidationError("glcm: no pixel pairs inside the ROI for this offset");
  for (double& v : p) v /= total;
  return p;
}

std::vector<double> glcm_features(const std::vector<double>& p, int L) {
  require(p.size() == static_cast<std::size_t>(L) * L, "glcm_features: matrix size mismatch");
  std::vector<double> px(L, 0.0), py(L, 0.0), psum(2 * L - 1, 0.0), pdiff(L, 0.0);
  double asm_ = 0.0, contrast = 0.0, idm = 0.0, sum_ij = 0.0;
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < L; ++j) {
      const double v = p[static_cast<std::size_t>(i) * L + j];
      if (v == 0.0) continue;
      px[i] += v;
      py[j] += v;
      psum[i + j] += v;
      pdiff[std::abs(i - j)] += v;
      asm_ += v * v;
      contrast += double(i - j) * (i - j) * v;
      idm += v / (1.0 + double(i - j) * (i - j));
      sum_ij += double(i) * j * v;
    }
  double mx = 0.0, my = 0.0;
  for (int i = 0; i < L; ++i) {
    mx += i * px[i];
    my += i * py[i];
  }
  double vx = 0.0, vy = 0.0;
  for (int i = 0; i < L; ++i) {
    vx += (i - mx) * (i - mx) * px[i];
    vy += (i - my) * (i - my) * py[i];
  }
  // A single populated level has no spread; treat it as perfectly correlated.
  const double correlation = (vx > 0.0 && vy > 0.0) ? (sum_ij - mx * my) / std::sqrt(vx * vy) : 1.0;

  double sum_avg = 0.0;
  for (int k = 0; k < 2 * L - 1; ++k) sum_avg += k * psum[k];
  double sum_var = 0.0;
  for (int k = 0; k < 2 * L - 1; ++k) sum_var += (k - sum_avg) * (k - sum_avg) * psum[k];
  double diff_mean = 0.0;
  for (int k = 0; k < L; ++k) diff_mean += k * pdiff[k];
  double diff_var = 0.0;
  for (int k = 0; k < L; ++k) diff_var += (k - diff_mean) * (k - diff_mean) * pdiff[k];

  const double hxy = entropy(p);
  const double hx = entropy(px), hy = entropy(py);
  double hxy1 = 0.0, hxy2 = 0.0;
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < L; ++j) {
      const double q = px[i] * py[j];
      if (q <= 0.0) continue;
      const double v = p[static_cast<std::size_t>(i) * L + j];
      if (v > 0.0) hxy1 -= v * std::log(q);
      hxy2 -= q * std::log(q);
    }
  const double hmax = std::max(hx, hy);
  const double imc1 = hmax > 0.0 ? (hxy - hxy1) / hmax : 0.0;
  const double imc2 = std::sqrt(std::max(0.0, 1.0 - std::exp(-2.0 * (hxy2 - hxy))));

  return {asm_, contrast, correlation, vx, idm, sum_avg, sum_var, entropy(psum), hxy, diff_var, entropy(pdiff), imc1,
          imc2};
}

std::vector<double> haralick_features(const Image2D& img, const ROISpec& roi, const HaralickConfig& cfg) {
  cfg.validate();
  img.validate();
  roi.validate(img.size);
  const Mask2D m = roi.mask(img.size);
  int r0 = img.size, r1 = -1, c0 = img.size, c1 = -1;
  for (int r = 0; r < img.size; ++r)
    for (int c = 0; c < img.size; ++c)
      if (m.at(r, c)) {
        r0 = std::min(r0, r);
        r1 = std::max(r1, r);
        c0 = std::min(c0, c);
        c1 = std::max(c1, c);
      }
  require(r1 - r0 + 1 >= 8 && c1 - c0 + 1 >= 8, "Haralick ROI '" + roi.name + "' is smaller than 8x8 pixels");
  const auto q = quantize(img, m, cfg);
  std::vector<double> avg(kHaralickFeatures, 0.0);
  for (const Offset& o : cfg.offsets) {
    const auto f = glcm_features(glcm(q, img.size, cfg.gray_levels, o), cfg.gray_levels);
    for (int k = 0; k < kHaralickFeatures; ++k) avg[k] += f[k];
  }
  for (double& v : avg) v /= static_cast<double>(cfg.offsets.size());
  return avg;
}

bool FeatureStandardization::kept(int dim) const {
  return std::find(dropped.begin(), dropped.end(), dim) == dropped.end();
}

void to_json(nlohmann::json& j, const FeatureStandardization& s) {
  j = {{"mean", s.mean}, {"stddev", s.stddev}, {"dropped", s.dropped}};
}

void from_json(const nlohmann::json& j, FeatureStandardization& s) {
  s.mean = j.at("mean").get<std::vector<double>>();
  s.stddev = j.at("stddev").get<std::vector<double>>();
  s.dropped = j.at("dropped").get<std::vector<int>>();
}

FeatureStandardization fit_standardization(const std::vector<std::vector<double>>& features) {
  require(!features.empty(), "fit_standardization: empty reference set");
  const std::size_t d = features.front().size();
  for (const auto& f : features) require(f.size() == d, "fit_standardization: inconsistent feature lengths");
  FeatureStandardization s;
  s.mean.assign(d, 0.0);
  s.stddev.assign(d, 0.0);
  const double n = static_cast<double>(features.size());
  for (const auto& f : features)
    for (std::size_t k = 0; k < d; ++k) s.mean[k] += f[k] / n;
  for (const auto& f : features)
    for (std::size_t k = 0; k < d; ++k) s.stddev[k] += (f[k] - s.mean[k]) * (f[k] - s.mean[k]) / n;
  for (std::size_t k = 0; k < d; ++k) {
    s.stddev[k] = std::sqrt(s.stddev[k]);
    if (!(s.stddev[k] > 1e-12 * std::max(1.0, std::abs(s.mean[k])))) {
      s.dropped.push_back(static_cast<int>(k));
      const char* name = d == kHaralickFeatures ? kHaralickNames[k] : "feature";
      log::info(std::string("standardization drops zero-variance dimension ") + std::to_string(k) + " (" + name + ")");
    }
  }
  return s;
}

double feature_distance(const std::vector<double>& a, const std::vector<double>& b, const FeatureStandardization& s) {
  require(a.size() == b.size() && a.size() == s.mean.size(), "feature_distance: dimension mismatch");
  double d2 = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (!s.kept(static_cast<int>(k))) continue;
    const double z = (a[k] - b[k]) / s.stddev[k];
    d2 += z * z;
  }
  return std::sqrt(d2);
}

double haralick_distance(const Image2D& a, const Image2D& b, const ROISpec& roi, const HaralickConfig& cfg,
                         const FeatureStandardization& s) {
  require(a.same_grid(b), "haralick_distance: images are on different grids");
  return feature_distance(haralick_features(a, roi, cfg), haralick_features(b, roi, cfg), s);
}

double psnr(const Image2D& a, const Image2D& ref, const std::optional<ROISpec>& roi) {
  require(a.same_grid(ref), "psnr: images are on different grids");
  a.validate();
  ref.validate();
  const auto [lo, hi] = std::minmax_element(ref.data.begin(), ref.data.end());
  const double range = *hi - *lo;
  double se = 0.0;
  std::size_t n = 0;
  if (roi) {
    roi->validate(ref.size);
    const Mask2D m = roi->mask(ref.size);
    for (std::size_t i = 0; i < m.data.size(); ++i)
      if (m.data[i]) {
        se += (a.data[i] - ref.data[i]) * (a.data[i] - ref.data[i]);
        ++n;
      }
  } else {
    for (std::size_t i = 0; i < ref.data.size(); ++i) se += (a.data[i] - ref.data[i]) * (a.data[i] - ref.data[i]);
    n = ref.data.size();
  }
  const double mse = se / static_cast<double>(n);
  if (mse == 0.0) return kPsnrIdentical;
  require(range > 0.0, "psnr: reference image has zero dynamic range");
  return 10.0 * std::log10(range * range / mse);
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  std::ofstream out(path);
  if (!out) throw RuntimeError("cannot write " + path.string());
  out << "case,arm,roi,metric,value\n";
  out << std::setprecision(17);
  for (const MetricRow& r : rows) {
    out << r.case_id << ',' << r.arm << ',' << r.roi << ',' << r.metric << ',';
    if (std::isinf(r.value))
      out << (r.value > 0 ? "inf" : "-inf");
    else
      out << r.value;
    out << '\n';
  }
  if (!out) throw RuntimeError("write failed for " + path.string());
}

std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  require(line == "case,arm,roi,metric,value", "unexpected metrics CSV header in " + path.string());
  std::vector<MetricRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    MetricRow r;
    std::string value;
    std::getline(ss, r.case_id, ',');
    std::getline(ss, r.arm, ',');
    std::getline(ss, r.roi, ',');
    std::getline(ss, r.metric, ',');
    std::getline(ss, value);
    r.value = value == "inf" ? kPsnrIdentical : value == "-inf" ? -kPsnrIdentical : std::stod(value);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace ncsr::metrics
