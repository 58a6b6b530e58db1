#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ncsr/common/image.hpp"
#include "ncsr/common/rng.hpp"
#include "ncsr/ctsim/ctsim.hpp"
#include "ncsr/dataset/morphology.hpp"
#include "ncsr/phantoms/head.hpp"

namespace ncsr::dataset {

inline constexpr double kBackgroundHu = -1000.0;

enum class PairSource { sim, bone };
std::string to_string(PairSource s);
PairSource parse_source(const std::string& s);

/// Affine map of [low_hu, high_hu] onto [-1, 1]; values outside map outside.
struct NormalizationWindow {
  double low_hu = -1000.0;
  double high_hu = 2000.0;

  double normalize(double hu) const { return 2.0 * (hu - low_hu) / (high_hu - low_hu) - 1.0; }
  double denormalize(double v) const { return low_hu + 0.5 * (v + 1.0) * (high_hu - low_hu); }
  Image2D normalize(const Image2D& img) const;
  Image2D denormalize(const Image2D& img) const;
  void validate() const;
};

struct TrainingPair {
  Image2D x0;  // HR label
  Image2D y;   // LR upsampled onto the HR grid
  PairSource source = PairSource::sim;
  std::optional<Mask2D> bone_mask;
  std::string split = "train";
  nlohmann::json provenance = nlohmann::json::object();

  /// Shapes agree; bone pairs carry a mask and are exactly `background` outside it.
  void validate(double background) const;
};

/// Pixels outside the mask become `background_hu` in both images.
TrainingPair extract_bone_pair(const Image2D& hr, const Image2D& lr_upsampled, const BoneMask& mask,
                               double background_hu = kBackgroundHu);

struct HybridDatasetConfig {
  double sim_fraction = 48.0 / 64.0;
  double bone_fraction = 16.0 / 64.0;
  int patch_size = 32;
  NormalizationWindow window;
  std::uint64_t rng_seed = 0;
  double min_bone_fraction = 0.10;  // in-mask share required of a bone patch
  double bone_threshold_hu = 300.0;
  double bone_max_hole_mm2 = 25.0;  // air cells fill, the cranial cavity does not

  void validate(int image_size) const;
  /// (sim, bone) slot counts; throws unless both are integers summing to batch_size.
  std::pair<int, int> composition(int batch_size) const;
};

void to_json(nlohmann::json& j, const NormalizationWindow& w);
void from_json(const nlohmann::json& j, NormalizationWindow& w);
void to_json(nlohmann::json& j, const HybridDatasetConfig& c);
void from_json(const nlohmann::json& j, HybridDatasetConfig& c);

// ---------------------------------------------------------------------------
// Acquisition chain shared by the simulated and real-like data.

struct AcquisitionConfig {
  ctsim::ScanGeometry geometry;  // HR geometry; LR = rebinned by bin_factor
  int bin_factor = 2;
  double n0_hr = 1e4;
  double n0_lr = 4e4;
  ctsim::FilterKernel kernel = ctsim::FilterKernel::bone;
  int hr_size = 128;
  double hr_spacing = 0.5;

  int lr_size() const { return hr_size / bin_factor; }
  double lr_spacing() const { return hr_spacing * bin_factor; }
  void validate() const;
};

void to_json(nlohmann::json& j, const AcquisitionConfig& a);
void from_json(const nlohmann::json& j, AcquisitionConfig& a);

struct CleanScan {
  ctsim::Sinogram hr;
  ctsim::Sinogram lr;  // rebinned, photons_in = n0_lr
};

struct ScanResult {
  CleanScan clean;
  ctsim::Sinogram noisy_hr;
  ctsim::Sinogram noisy_lr;
  Image2D recon_hr;  // hr_size at hr_spacing
  Image2D recon_lr;  // lr_size at lr_spacing
};

CleanScan project_clean(const Image2D& phantom_hu, const AcquisitionConfig& acq);
/// Shared-field noise (k may be zero on either chain) followed by FBP of both sinograms.
ScanResult acquire(const CleanScan& clean, const AcquisitionConfig& acq, double k_hr, double k_lr, Rng& rng);

/// Population standard deviation inside a millimetre disk.
double disk_std(const Image2D& img, const phantoms::DiskMm& roi);

// ---------------------------------------------------------------------------
// Noise calibration.

struct CalibrationSlice {
  CleanScan scan;
  phantoms::DiskMm uniform_roi;
};

struct CalibrationOptions {
  double k_max = 50.0;
  double rel_tol = 0.005;
  int max_iterations = 80;
  /// Noise realizations averaged per slice; a single draw leaves several percent of sampling error.
  int draws = 16;
  std::uint64_t seed = 7;
};

struct CalibrationResult {
  double k_hr = 0.0;
  double k_lr = 0.0;
  double std_hr = 0.0;  // achieved mean ROI std, HR recon
  double std_lr = 0.0;  // achieved mean ROI std, upsampled LR recon
  int iterations = 0;
};

/// Mean ROI std over slices and draws of one chain as a function of its k (fixed noise fields).
double chain_roi_std(const std::vector<CalibrationSlice>& slices, const AcquisitionConfig& acq, bool hr_chain,
                     double k, std::uint64_t seed, int draws = 1);

/// Independent bisection of k_hr (HR recon) and k_lr (sinc-upsampled LR recon)
/// so that the mean uniform-ROI std matches target_std_hu.
CalibrationResult calibrate_noise_levels(const std::vector<CalibrationSlice>& slices, const AcquisitionConfig& acq,
                                         double target_std_hu, const CalibrationOptions& options = {});

// ---------------------------------------------------------------------------
// Slices and corpus.

/// One simulated acquisition of a head phantom, reconstructed in HU.
struct Slice {
  std::uint64_t seed = 0;
  phantoms::HeadStyle style = phantoms::HeadStyle::smooth;
  Image2D hr;
  Image2D lr;
  Image2D lr_up;
  phantoms::DiskMm uniform_roi;
  phantoms::SquareMm bone_roi;
};

Slice make_slice(const phantoms::HeadPhantom& phantom, std::uint64_t seed, const CleanScan& clean,
                 const AcquisitionConfig& acq, double k_hr, double k_lr, Rng& rng);

/// Pair of a slice's HR recon and upsampled LR recon.
TrainingPair sim_pair(const Slice& s);
/// Segments the HR recon; nullopt (with a warning) when the mask is empty.
std::optional<TrainingPair> bone_pair(const Slice& s, double threshold_hu, double max_hole_mm2 = 0.0);

/// Normalized pairs ready for patch sampling.
struct Corpus {
  std::vector<TrainingPair> sim;
  std::vector<TrainingPair> bone;
  NormalizationWindow window;

  /// Content hash over pixels, masks and sources.
  std::string hash() const;
};

/// Applies the window and validates; at least one of the two sets must be nonempty,
/// and each must be nonempty when its batch fraction is positive.
Corpus build_hybrid_corpus(const std::vector<TrainingPair>& sim_pairs, const std::vector<TrainingPair>& bone_pairs,
                           const HybridDatasetConfig& cfg);

/// Layout: <dir>/manifest.json plus <dir>/records/<id>_{x0,y}.{f32,json}.
void save_corpus(const std::filesystem::path& dir, const Corpus& corpus);
Corpus load_corpus(const std::filesystem::path& dir);

/// Run-length encoding of a mask, alternating runs starting with zeros.
std::vector<std::uint32_t> rle_encode(const Mask2D& mask);
Mask2D rle_decode(const std::vector<std::uint32_t>& runs, int size);

// ---------------------------------------------------------------------------
// Patch sampling.

struct PatchOrigin {
  PairSource source = PairSource::sim;
  int pair = 0;
  int row = 0;
  int col = 0;
};

/// Batch of normalized patches, each patch_size x patch_size, stored contiguously.
struct PatchBatch {
  int batch = 0;
  int patch_size = 0;
  std::vector<float> x0;
  std::vector<float> y;
  std::vector<PatchOrigin> origins;
};

/// First the sim slots, then the bone slots, per cfg.composition(batch_size).
PatchBatch sample_patch_batch(const Corpus& corpus, int batch_size, const HybridDatasetConfig& cfg, Rng& rng);

}  // namespace ncsr::dataset
