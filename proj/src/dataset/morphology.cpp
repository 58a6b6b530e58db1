#include "ncsr/dataset/morphology.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ncsr/common/error.hpp"
#include "ncsr/common/log.hpp"

namespace ncsr::dataset {
namespace {

constexpr int kDr[] = {0, -1, 1, 0, 0};
constexpr int kDc[] = {0, 0, 0, -1, 1};

template <bool Erode>
Mask2D cross_filter(const Mask2D& m) {
  const int n = m.size;
  Mask2D out(n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      bool v = Erode;
      for (int k = 0; k < 5; ++k) {
        const int rr = r + kDr[k], cc = c + kDc[k];
        if (rr < 0 || rr >= n || cc < 0 || cc >= n) continue;
        if constexpr (Erode) v = v && m.at(rr, cc);
        else v = v || m.at(rr, cc);
      }
      out.at(r, c) = v ? 1 : 0;
    }
  return out;
}

}  // namespace

Mask2D threshold_mask(const Image2D& img, double threshold_hu) {
  img.validate();
  Mask2D m(img.size);
  for (std::size_t i = 0; i < img.data.size(); ++i) m.data[i] = img.data[i] >= threshold_hu ? 1 : 0;
  return m;
}

Mask2D fill_holes(const Mask2D& mask, long long max_hole_pixels) {
  require(max_hole_pixels >= 0, "fill_holes: max_hole_pixels must be >= 0");
  const int n = mask.size;
  // Flood the background from the border; whatever background is not reached is a hole.
  Mask2D outside(n);
  std::vector<int> stack;
  auto seed = [&](int r, int c) {
    if (!mask.at(r, c) && !outside.at(r, c)) {
      outside.at(r, c) = 1;
      stack.push_back(r * n + c);
    }
  };
  for (int i = 0; i < n; ++i) {
    seed(0, i);
    seed(n - 1, i);
    seed(i, 0);
    seed(i, n - 1);
  }
  while (!stack.empty()) {
    const int idx = stack.back();
    stack.pop_back();
    const int r = idx / n, c = idx % n;
    for (int k = 1; k < 5; ++k) {
      const int rr = r + kDr[k], cc = c + kDc[k];
      if (rr >= 0 && rr < n && cc >= 0 && cc < n) seed(rr, cc);
    }
  }
  Mask2D out(n);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = outside.data[i] ? 0 : 1;
  if (max_hole_pixels == 0) return out;

  // Give back holes larger than the limit: flood each enclosed background component.
  Mask2D seen(n);
  std::vector<int> component;
  for (int start = 0; start < n * n; ++start) {
    if (mask.data[start] || outside.data[start] || seen.data[start]) continue;
    component.clear();
    seen.data[start] = 1;
    stack.push_back(start);
    while (!stack.empty()) {
      const int idx = stack.back();
      stack.pop_back();
      component.push_back(idx);
      const int r = idx / n, c = idx % n;
      for (int k = 1; k < 5; ++k) {
        const int rr = r + kDr[k], cc = c + kDc[k];
        if (rr < 0 || rr >= n || cc < 0 || cc >= n) continue;
        const int j = rr * n + cc;
        if (!mask.data[j] && !seen.data[j]) {
          seen.data[j] = 1;
          stack.push_back(j);
        }
      }
    }
    if (static_cast<long long>(component.size()) > max_hole_pixels)
      for (int idx : component) out.data[idx] = 0;
  }
  return out;
}

Mask2D erode(const Mask2D& mask) { return cross_filter<true>(mask); }
Mask2D dilate(const Mask2D& mask) { return cross_filter<false>(mask); }
Mask2D open(const Mask2D& mask) { return dilate(erode(mask)); }
Mask2D close(const Mask2D& mask) { return erode(dilate(mask)); }

BoneMask segment_bone(const Image2D& img, double threshold_hu, double max_hole_mm2) {
  require(std::isfinite(threshold_hu), "segment_bone: threshold must be finite");
  require(std::isfinite(max_hole_mm2) && max_hole_mm2 >= 0.0, "segment_bone: max_hole_mm2 must be >= 0");
  const long long max_px =
      max_hole_mm2 > 0.0 ? std::max(1LL, std::llround(max_hole_mm2 / (img.spacing * img.spacing))) : 0;
  BoneMask out{close(open(fill_holes(threshold_mask(img, threshold_hu), max_px))), threshold_hu};
  if (out.mask.empty()) log::warn("segment_bone: no pixels at or above " + std::to_string(threshold_hu) + " HU survive the morphology");
  return out;
}

Mask2D upsample_nearest(const Mask2D& mask, int factor) {
  require(factor >= 1, "upsample_nearest: factor must be >= 1");
  const int n = mask.size * factor;
  Mask2D out(n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) out.at(r, c) = mask.at(r / factor, c / factor);
  return out;
}

}  // namespace ncsr::dataset
