#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ncsr/dataset/dataset.hpp"
#include "ncsr/diffusion/schedule.hpp"
#include "ncsr/metrics/metrics.hpp"
#include "ncsr/phantoms/head.hpp"
#include "ncsr/pipeline/train.hpp"
#include "ncsr/predictor/unet.hpp"

namespace ncsr::pipeline {

/// How an ablation arm assembles its training corpus.
///   matched_sim_plus_bone:   noise-matched simulation pairs + segmented bone pairs (the proposed method)
///   sim_only:                noise-matched simulation pairs only (M1)
///   unmatched_sim_plus_bone: simulation pairs with equal k on both chains + bone pairs (M2)
enum class Recipe { matched_sim_plus_bone, sim_only, unmatched_sim_plus_bone };

std::string to_string(Recipe r);
Recipe parse_recipe(const std::string& s);
bool uses_bone(Recipe r);

struct AblationArm {
  std::string name;
  Recipe recipe = Recipe::matched_sim_plus_bone;
};

std::vector<AblationArm> default_arms();

struct PhantomSection {
  int train_sim = 24;
  int train_real = 8;
  int test_real = 8;
  int calibration_slices = 6;  // first sim phantoms used to calibrate k
  int simulate_count = 1;      // phantoms written by the simulate command
  phantoms::HeadStyle simulate_style = phantoms::HeadStyle::trabecular;
  phantoms::HeadOptions options;
};

struct NoiseSection {
  double real_hr_k = 0.0;
  double real_lr_k = 1.0;
  dataset::CalibrationOptions calibration;
};

struct ScheduleSection {
  int steps = 100;
  diffusion::ScheduleParams params;
  diffusion::DiffusionSchedule build() const;
};

struct InferenceSection {
  double bone_threshold_hu = 250.0;
  double bone_max_hole_mm2 = 25.0;
  bool clamp_x0 = true;
};

/// ROI tied to a phantom landmark ("uniform_region" disk or "bone_region" square),
/// or "fixed" pixel coordinates.
struct RoiEntry {
  std::string name;
  std::string anchor = "uniform_region";
  metrics::ROISpec fixed;
};

struct MetricsSection {
  metrics::HaralickConfig haralick;
  std::vector<RoiEntry> rois;
};

struct ExperimentConfig {
  std::uint64_t seed = 2024;
  PhantomSection phantoms;
  dataset::AcquisitionConfig acquisition;
  NoiseSection noise;
  dataset::HybridDatasetConfig dataset;
  ScheduleSection schedule;
  predictor::UNetConfig model;
  TrainConfig training;
  std::vector<AblationArm> arms = default_arms();
  InferenceSection inference;
  MetricsSection metrics;
  std::string output_dir = "runs";

  void validate() const;
};

/// Desk profile: 64 -> 128 SR, c = 8, T = 100, 20k iterations, one uniform and one textured ROI.
ExperimentConfig default_experiment();

void to_json(nlohmann::json& j, const ExperimentConfig& c);
/// Missing keys fall back to default_experiment().
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// Sub-seeds (model init, training, patch sampling, calibration) derived from `seed`.
ExperimentConfig resolve(ExperimentConfig c);

/// Content address of a resolved configuration (output_dir excluded).
std::string config_hash(const ExperimentConfig& c);

/// Pixel ROI on the HR grid for one slice.
metrics::ROISpec roi_for_slice(const RoiEntry& entry, const dataset::Slice& slice);

struct RunOptions {
  std::filesystem::path output_root = "runs";
  bool resume = false;
  bool noise_off = false;
};

struct Check {
  std::string name;
  bool evaluated = false;
  bool pass = false;
  std::string detail;
};

/// Medians over cases, keyed by method then column ("std:<roi>", "haralick:<roi>", "psnr").
using SummaryTable = std::map<std::string, std::map<std::string, double>>;

struct Report {
  std::vector<metrics::MetricRow> rows;
  SummaryTable table;
  std::vector<std::string> methods;  // display order
  std::vector<Check> checks;
  int cases = 0;
};

/// Ordering checks of the desk-scale ablation: noise of Proposed and M2 against LR,
/// texture distance Proposed vs M1, PSNR Proposed vs M1.
std::vector<Check> ablation_checks(const Report& report, const ExperimentConfig& cfg);

/// Stage runner. Outputs live under output_root / "exp-<hash>"; each stage writes a
/// stage.json marker and is skipped under `resume` when the marker is present.
class Experiment {
 public:
  Experiment(ExperimentConfig cfg, RunOptions options);

  const ExperimentConfig& config() const { return cfg_; }
  const std::filesystem::path& dir() const { return dir_; }
  std::string hash() const { return hash_; }

  /// Phantom, noiseless and noisy sinograms and reconstructions for simulate_count phantoms.
  nlohmann::json simulate();
  /// Real-like slices, noise calibration, simulation slices and per-recipe corpora.
  nlohmann::json build_dataset();
  /// Trains the named arm (all arms when empty).
  void train(const std::optional<std::string>& arm = std::nullopt);
  /// Super-resolves the held-out slices with the named arm (all arms when empty).
  void infer(const std::optional<std::string>& arm = std::nullopt);
  /// Metrics, Table-1-shaped summary, figure panel and ordering checks.
  Report evaluate();
  /// build_dataset -> train -> infer -> evaluate.
  Report reproduce();

  std::vector<dataset::Slice> load_test_slices() const;
  const AblationArm& arm(const std::string& name) const;

 private:
  bool stage_done(const std::string& stage) const;
  using StageClock = std::chrono::steady_clock;
  /// Writes <stage>/stage.json with the config hash and the stage's wall-clock time.
  void mark_done(const std::string& stage, const nlohmann::json& summary, StageClock::time_point start) const;
  nlohmann::json stage_summary(const std::string& stage) const;

  ExperimentConfig cfg_;
  RunOptions options_;
  std::string hash_;
  std::filesystem::path dir_;
};

}  // namespace ncsr::pipeline
