#pragma once

#include <memory>
#include <string>
#include <vector>

#include "ncsr/diffusion/diffusion.hpp"
#include "ncsr/predictor/unet.hpp"

namespace ncsr::predictor {

/// Exact noise predictor for data concentrated at the constant image c:
/// eps_hat = (x_t - sqrt(gamma_t) c) / sqrt(1 - gamma_t).
class OracleDeltaPredictor final : public diffusion::NoisePredictor {
 public:
  OracleDeltaPredictor(double c, diffusion::DiffusionSchedule schedule);
  diffusion::ImageBatch predict(const diffusion::ImageBatch& x_t, const diffusion::ImageBatch& y,
                                std::span<const int> t) const override;
  std::size_t parameter_count() const override { return 0; }
  std::string identity() const override;
  double target() const { return c_; }

 private:
  double c_;
  diffusion::DiffusionSchedule s_;
};

std::unique_ptr<OracleDeltaPredictor> oracle_delta_predictor(double c, const diffusion::DiffusionSchedule& schedule);

/// Ten-parameter predictor, linear in its parameters, over per-pixel features
/// [x, y, 1, x u, y u, u, x y, x^2, y^2, u^2] with u = t / T.
class LinearPredictor final : public diffusion::DifferentiablePredictor {
 public:
  static constexpr int kParams = 10;
  LinearPredictor(std::vector<double> params, int T);

  diffusion::ImageBatch predict(const diffusion::ImageBatch& x_t, const diffusion::ImageBatch& y,
                                std::span<const int> t) const override;
  std::size_t parameter_count() const override { return kParams; }
  std::string identity() const override;
  std::vector<double> parameters() const override { return w_; }
  void set_parameters(std::span<const double> params) override;
  std::vector<double> backward(const diffusion::ImageBatch& x_t, const diffusion::ImageBatch& y, std::span<const int> t,
                               const diffusion::ImageBatch& d_out) const override;

 private:
  std::vector<double> w_;
  int T_;
};

/// Adapts a U-Net to the double-precision predictor interface (evaluation mode).
class UNetPredictor final : public diffusion::NoisePredictor {
 public:
  explicit UNetPredictor(std::shared_ptr<UNet> net);
  diffusion::ImageBatch predict(const diffusion::ImageBatch& x_t, const diffusion::ImageBatch& y,
                                std::span<const int> t) const override;
  std::size_t parameter_count() const override { return net_->parameter_count(); }
  std::string identity() const override;
  UNet& net() const { return *net_; }

 private:
  std::shared_ptr<UNet> net_;
};

nn::Tensor to_tensor(const diffusion::ImageBatch& b);
diffusion::ImageBatch to_batch(const nn::Tensor& t);

}  // namespace ncsr::predictor
