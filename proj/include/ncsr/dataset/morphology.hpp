#pragma once

#include "ncsr/common/image.hpp"

namespace ncsr::dataset {

/// Binary morphology with the 3x3 cross (center + 4-neighbours).
/// The structuring element is clipped at the image border: only in-image
/// neighbours take part in the min / max.

Mask2D threshold_mask(const Image2D& img, double threshold_hu);
/// Background components not 4-connected to the border become foreground.
/// With max_hole_pixels > 0 only holes up to that area are filled.
Mask2D fill_holes(const Mask2D& mask, long long max_hole_pixels = 0);
Mask2D erode(const Mask2D& mask);
Mask2D dilate(const Mask2D& mask);
Mask2D open(const Mask2D& mask);
Mask2D close(const Mask2D& mask);

struct BoneMask {
  Mask2D mask;
  double threshold_hu = 300.0;
};

/// close(open(fill_holes(img >= threshold))). Warns on an empty result.
/// max_hole_mm2 > 0 keeps large enclosed regions (a skull ring around the brain) out of the mask.
BoneMask segment_bone(const Image2D& img, double threshold_hu = 300.0, double max_hole_mm2 = 0.0);

/// Nearest-neighbour enlargement by an integer factor.
Mask2D upsample_nearest(const Mask2D& mask, int factor);

}  // namespace ncsr::dataset
