#include "ncsr/pipeline/inference.hpp"

#include <algorithm>

#include "ncsr/common/error.hpp"
#include "ncsr/dataset/resample.hpp"

namespace ncsr::pipeline {

Image2D pad_symmetric(const Image2D& img, int before, int after) {
  require(before >= 0 && after >= 0, "pad_symmetric: negative padding");
  require(before <= img.size && after <= img.size, "pad_symmetric: padding larger than the image");
  const int n = img.size, m = n + before + after;
  Image2D out(m, img.spacing);
  auto src = [n](int i) {
    if (i < 0) return -i - 1;
    if (i >= n) return 2 * n - i - 1;
    return i;
  };
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < m; ++c) out.at(r, c) = img.at(src(r - before), src(c - before));
  return out;
}

SuperResolution sample_conditioned(const Image2D& y_hu, const diffusion::NoisePredictor& predictor,
                                   const diffusion::DiffusionSchedule& schedule, Rng& rng,
                                   const SuperResolveOptions& options) {
  y_hu.validate();
  options.window.validate();
  require(options.size_multiple >= 1, "size_multiple must be >= 1");
  const int n = y_hu.size;
  const int padded = (n + options.size_multiple - 1) / options.size_multiple * options.size_multiple;
  const int before = (padded - n) / 2, after = padded - n - before;

  const Image2D y = pad_symmetric(options.window.normalize(y_hu), before, after);
  diffusion::ImageBatch yb(1, padded, padded);
  std::copy(y.data.begin(), y.data.end(), yb.data.begin());
  const diffusion::ImageBatch x = diffusion::sample(yb, predictor, schedule, rng, options.sampler);

  Image2D out(n, y_hu.spacing);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c)
      out.at(r, c) = options.window.denormalize(x.data[static_cast<std::size_t>(r + before) * padded + c + before]);

  SuperResolution res;
  res.image = std::move(out);
  res.meta = {{"predictor", predictor.identity()},
              {"steps", schedule.T},
              {"padding", {{"before", before}, {"after", after}, {"mode", "symmetric"}}},
              {"window", options.window}};
  return res;
}

SuperResolution super_resolve(const Image2D& lr, const diffusion::NoisePredictor& predictor,
                              const diffusion::DiffusionSchedule& schedule, Rng& rng,
                              const SuperResolveOptions& options) {
  SuperResolution res = sample_conditioned(dataset::sinc_upsample(lr, 2), predictor, schedule, rng, options);
  res.meta["input_size"] = lr.size;
  res.meta["upsampling"] = "sinc x2";
  return res;
}

SuperResolution super_resolve(const Image2D& lr, const predictor::Checkpoint& ckpt, Rng& rng,
                              SuperResolveOptions options) {
  const auto predictor = predictor::make_predictor(ckpt);
  if (ckpt.kind == "unet") options.size_multiple = std::max(options.size_multiple, ckpt.unet.size_multiple());
  return super_resolve(lr, *predictor, ckpt.schedule, rng, options);
}

Image2D composite_bone(const Image2D& sr_full, const Image2D& sr_bone, const dataset::BoneMask& mask) {
  require(sr_full.same_grid(sr_bone), "composite_bone: full and bone images are on different grids");
  require(mask.mask.size == sr_full.size, "composite_bone: mask does not match the image size");
  Image2D out = sr_full;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    if (mask.mask.data[i]) out.data[i] = sr_bone.data[i];
  return out;
}

dataset::BoneMask segment_test_bone(const Image2D& lr, double threshold_hu, double max_hole_mm2) {
  return dataset::segment_bone(dataset::sinc_upsample(lr, 2), threshold_hu, max_hole_mm2);
}

Image2D bone_condition(const Image2D& lr_up, const Mask2D& mask, double background_hu) {
  require(mask.size == lr_up.size, "bone_condition: mask does not match the image size");
  Image2D out = lr_up;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    if (!mask.data[i]) out.data[i] = background_hu;
  return out;
}

BoneSuperResolution super_resolve_with_bone(const Image2D& lr, const diffusion::NoisePredictor& predictor,
                                            const diffusion::DiffusionSchedule& schedule, Rng& rng,
                                            const SuperResolveOptions& options, double threshold_hu,
                                            double max_hole_mm2) {
  const std::uint64_t base = rng();
  Rng full_rng(derive_seed(base, 1)), bone_rng(derive_seed(base, 2));
  BoneSuperResolution out;
  const Image2D lr_up = dataset::sinc_upsample(lr, 2);
  SuperResolution full = sample_conditioned(lr_up, predictor, schedule, full_rng, options);
  out.mask = segment_test_bone(lr, threshold_hu, max_hole_mm2);
  out.full = std::move(full.image);
  if (out.mask.mask.empty()) {
    out.bone = out.full;
  } else {
    out.bone = sample_conditioned(bone_condition(lr_up, out.mask.mask), predictor, schedule, bone_rng, options).image;
  }
  out.composite = composite_bone(out.full, out.bone, out.mask);
  out.meta = full.meta;
  out.meta["bone_threshold_hu"] = threshold_hu;
  out.meta["bone_max_hole_mm2"] = max_hole_mm2;
  out.meta["bone_pixels"] = out.mask.mask.count();
  return out;
}

}  // namespace ncsr::pipeline
