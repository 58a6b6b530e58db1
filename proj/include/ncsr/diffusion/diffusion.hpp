#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ncsr/common/rng.hpp"
#include "ncsr/diffusion/schedule.hpp"

namespace ncsr::diffusion {

/// n images of h x w, stored contiguously (image-major, row-major).
struct ImageBatch {
  int n = 0;
  int h = 0;
  int w = 0;
  std::vector<double> data;

  ImageBatch() = default;
  ImageBatch(int count, int rows, int cols, double fill = 0.0)
      : n(count), h(rows), w(cols), data(static_cast<std::size_t>(count) * rows * cols, fill) {}

  std::size_t image_size() const { return static_cast<std::size_t>(h) * w; }
  std::span<double> image(int i) { return {data.data() + i * image_size(), image_size()}; }
  std::span<const double> image(int i) const { return {data.data() + i * image_size(), image_size()}; }
  bool same_shape(const ImageBatch& o) const { return n == o.n && h == o.h && w == o.w; }
};

/// eps_theta(x_t, y, t): one step index per image in the batch.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual ImageBatch predict(const ImageBatch& x_t, const ImageBatch& y, std::span<const int> t) const = 0;
  virtual std::size_t parameter_count() const = 0;
  /// Stable description of the predictor and its parameters (changes when they change).
  virtual std::string identity() const = 0;
};

/// Predictor with parameter gradients; used by the finite-difference checks and training.
class DifferentiablePredictor : public NoisePredictor {
 public:
  virtual std::vector<double> parameters() const = 0;
  virtual void set_parameters(std::span<const double> params) = 0;
  /// Gradient of sum(d_out * eps_theta(x_t, y, t)) with respect to the parameters.
  virtual std::vector<double> backward(const ImageBatch& x_t, const ImageBatch& y, std::span<const int> t,
                                       const ImageBatch& d_out) const = 0;
};

/// sqrt(gamma_t) x0 + sqrt(1 - gamma_t) eps, elementwise.
std::vector<double> q_sample(std::span<const double> x0, int t, std::span<const double> eps,
                             const DiffusionSchedule& s);

struct Posterior {
  std::vector<double> mean;
  double variance = 0.0;
};

/// Mean and variance of q(x_{t-1} | x_t, x0).
Posterior posterior_params(std::span<const double> x_t, std::span<const double> x0, int t, const DiffusionSchedule& s);

/// (x_t - sqrt(1 - gamma_t) eps_hat) / sqrt(gamma_t), optionally clamped to [-1, 1].
std::vector<double> predict_x0(std::span<const double> x_t, std::span<const double> eps_hat, int t,
                               const DiffusionSchedule& s, bool clamp = false);

/// x_t for every image of x0 at its own step t[i].
ImageBatch q_sample_batch(const ImageBatch& x0, std::span<const int> t, const ImageBatch& eps, const DiffusionSchedule& s);

/// Mean over pixels and batch of (eps_theta(x_t, y, t) - eps)^2 with x_t = q_sample(x0, t, eps).
double training_loss(const NoisePredictor& predictor, const ImageBatch& x0, const ImageBatch& y, std::span<const int> t,
                     const ImageBatch& eps, const DiffusionSchedule& s);

struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> gradient;
};

LossAndGradient training_loss_gradient(const DifferentiablePredictor& predictor, const ImageBatch& x0,
                                       const ImageBatch& y, std::span<const int> t, const ImageBatch& eps,
                                       const DiffusionSchedule& s);

struct SamplerOptions {
  bool clamp_x0 = true;
  /// Replaces sigma_t for every step (0 gives the deterministic mean path).
  std::optional<double> sigma_override;
};

/// One ancestral step from x_t (all images at step t) to x_{t-1}.
ImageBatch reverse_step(const ImageBatch& x_t, const ImageBatch& y, int t, const NoisePredictor& predictor,
                        const DiffusionSchedule& s, Rng& rng, const SamplerOptions& options = {});

/// x_T ~ N(0, I), then reverse steps T..1. Throws RuntimeError on non-finite values.
ImageBatch sample(const ImageBatch& y, const NoisePredictor& predictor, const DiffusionSchedule& s, Rng& rng,
                  const SamplerOptions& options = {});

}  // namespace ncsr::diffusion
