#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "ncsr/dataset/dataset.hpp"
#include "ncsr/diffusion/schedule.hpp"
#include "ncsr/predictor/checkpoint.hpp"
#include "ncsr/predictor/unet.hpp"

namespace ncsr::pipeline {

/// constant: learning_rate throughout.
/// cosine: linear warmup to learning_rate, then cosine decay to min_learning_rate at the last iteration.
enum class LrSchedule { constant, cosine };

struct TrainConfig {
  long long iterations = 20000;
  int batch_size = 16;
  double learning_rate = 8e-5;
  LrSchedule lr_schedule = LrSchedule::constant;
  long long warmup_iterations = 0;
  double min_learning_rate = 0.0;
  std::uint64_t seed = 0;
  long long checkpoint_every = 1000;

  void validate() const;
  /// Learning rate used for iteration it (1-based).
  double learning_rate_at(long long it) const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct TrainOutcome {
  std::vector<double> losses;  // one per iteration, index 0 = iteration 1
  long long resumed_from = 0;  // last iteration restored from a checkpoint
  predictor::Checkpoint checkpoint;
};

/// Minimizes the noise-prediction MSE with Adam over patch batches drawn per the
/// mixing config. Iteration i draws everything from derive_seed(cfg.seed, i), so a
/// resumed run matches an uninterrupted one.
///
/// With an output directory: loss.csv, latest.ckpt every checkpoint_every
/// iterations and model.ckpt at the end. `resume` continues from latest.ckpt.
TrainOutcome train(const TrainConfig& cfg, const dataset::HybridDatasetConfig& mix, const dataset::Corpus& corpus,
                   predictor::UNet& net, const diffusion::DiffusionSchedule& schedule,
                   const std::optional<std::filesystem::path>& out_dir = std::nullopt, bool resume = false);

/// Mean of losses[from, to).
double window_mean(const std::vector<double>& losses, std::size_t from, std::size_t to);

}  // namespace ncsr::pipeline
