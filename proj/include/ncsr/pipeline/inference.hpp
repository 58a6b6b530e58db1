#pragma once

#include <json.hpp>

#include "ncsr/common/image.hpp"
#include "ncsr/common/rng.hpp"
#include "ncsr/dataset/dataset.hpp"
#include "ncsr/dataset/morphology.hpp"
#include "ncsr/diffusion/diffusion.hpp"
#include "ncsr/predictor/checkpoint.hpp"

namespace ncsr::pipeline {

inline constexpr double kTestBoneThresholdHu = 250.0;

struct SuperResolveOptions {
  dataset::NormalizationWindow window;
  diffusion::SamplerOptions sampler;
  /// Sides are padded symmetrically up to a multiple of this before sampling.
  int size_multiple = 1;
};

struct SuperResolution {
  Image2D image;
  nlohmann::json meta = nlohmann::json::object();
};

/// Mirror padding (edge pixel repeated) by `before` / `after` pixels on every side.
Image2D pad_symmetric(const Image2D& img, int before, int after);

/// Samples an HR image conditioned on an image already on the HR grid (in HU).
SuperResolution sample_conditioned(const Image2D& y_hu, const diffusion::NoisePredictor& predictor,
                                   const diffusion::DiffusionSchedule& schedule, Rng& rng,
                                   const SuperResolveOptions& options);

/// Sinc x2 upsampling of the LR image, then sample_conditioned.
SuperResolution super_resolve(const Image2D& lr, const diffusion::NoisePredictor& predictor,
                              const diffusion::DiffusionSchedule& schedule, Rng& rng,
                              const SuperResolveOptions& options);

/// Same, with the predictor, schedule and padding multiple taken from a checkpoint.
SuperResolution super_resolve(const Image2D& lr, const predictor::Checkpoint& ckpt, Rng& rng,
                              SuperResolveOptions options = {});

/// sr_full outside the mask, sr_bone inside it.
Image2D composite_bone(const Image2D& sr_full, const Image2D& sr_bone, const dataset::BoneMask& mask);

/// Segments the sinc-upsampled LR input, so the mask is drawn on the HR grid like the training bone masks.
dataset::BoneMask segment_test_bone(const Image2D& lr, double threshold_hu = kTestBoneThresholdHu,
                                    double max_hole_mm2 = 0.0);

/// The bone-only conditioning image: upsampled LR inside the mask, background elsewhere.
Image2D bone_condition(const Image2D& lr_up, const Mask2D& mask, double background_hu = dataset::kBackgroundHu);

struct BoneSuperResolution {
  Image2D full;
  Image2D bone;
  Image2D composite;
  dataset::BoneMask mask;
  nlohmann::json meta = nlohmann::json::object();
};

/// Full-image SR, bone-only SR from the segmented input, then compositing.
/// The two sampling runs use streams derived from one draw of `rng`.
BoneSuperResolution super_resolve_with_bone(const Image2D& lr, const diffusion::NoisePredictor& predictor,
                                            const diffusion::DiffusionSchedule& schedule, Rng& rng,
                                            const SuperResolveOptions& options,
                                            double threshold_hu = kTestBoneThresholdHu, double max_hole_mm2 = 0.0);

}  // namespace ncsr::pipeline
