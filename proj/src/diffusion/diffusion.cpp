#include "ncsr/diffusion/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "ncsr/common/error.hpp"

namespace ncsr::diffusion {

std::vector<double> q_sample(std::span<const double> x0, int t, std::span<const double> eps,
                             const DiffusionSchedule& s) {
  s.check_step(t);
  require(x0.size() == eps.size(), "q_sample: eps must match x0");
  const double a = std::sqrt(s.gamma[t]), b = std::sqrt(1.0 - s.gamma[t]);
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

Posterior posterior_params(std::span<const double> x_t, std::span<const double> x0, int t, const DiffusionSchedule& s) {
  require(t != 0, "posterior_params: no posterior at t = 0");
  s.check_step(t);
  require(x_t.size() == x0.size(), "posterior_params: x_t and x0 must match");
  const double denom = 1.0 - s.gamma[t];
  const double c0 = std::sqrt(s.gamma[t - 1]) * s.beta[t] / denom;
  const double ct = std::sqrt(s.alpha[t]) * (1.0 - s.gamma[t - 1]) / denom;
  Posterior p{std::vector<double>(x0.size()), s.beta_tilde[t]};
  for (std::size_t i = 0; i < x0.size(); ++i) p.mean[i] = c0 * x0[i] + ct * x_t[i];
  return p;
}

std::vector<double> predict_x0(std::span<const double> x_t, std::span<const double> eps_hat, int t,
                               const DiffusionSchedule& s, bool clamp) {
  s.check_step(t);
  require(x_t.size() == eps_hat.size(), "predict_x0: eps_hat must match x_t");
  const double inv = 1.0 / std::sqrt(s.gamma[t]), b = std::sqrt(1.0 - s.gamma[t]);
  std::vector<double> out(x_t.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = (x_t[i] - b * eps_hat[i]) * inv;
    out[i] = clamp ? std::clamp(v, -1.0, 1.0) : v;
  }
  return out;
}

ImageBatch q_sample_batch(const ImageBatch& x0, std::span<const int> t, const ImageBatch& eps, const DiffusionSchedule& s) {
  require(x0.same_shape(eps), "q_sample: eps must match x0");
  require(t.size() == static_cast<std::size_t>(x0.n), "q_sample: one step per image required");
  ImageBatch x_t(x0.n, x0.h, x0.w);
  for (int i = 0; i < x0.n; ++i) {
    const auto v = q_sample(x0.image(i), t[i], eps.image(i), s);
    std::copy(v.begin(), v.end(), x_t.image(i).begin());
  }
  return x_t;
}

double training_loss(const NoisePredictor& predictor, const ImageBatch& x0, const ImageBatch& y, std::span<const int> t,
                     const ImageBatch& eps, const DiffusionSchedule& s) {
  require(x0.same_shape(y), "training_loss: y must match x0");
  const ImageBatch x_t = q_sample_batch(x0, t, eps, s);
  const ImageBatch pred = predictor.predict(x_t, y, t);
  require(pred.same_shape(x0), "training_loss: predictor changed the shape");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double d = pred.data[i] - eps.data[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.data.size());
}

LossAndGradient training_loss_gradient(const DifferentiablePredictor& predictor, const ImageBatch& x0,
                                       const ImageBatch& y, std::span<const int> t, const ImageBatch& eps,
                                       const DiffusionSchedule& s) {
  require(x0.same_shape(y), "training_loss: y must match x0");
  const ImageBatch x_t = q_sample_batch(x0, t, eps, s);
  const ImageBatch pred = predictor.predict(x_t, y, t);
  ImageBatch d_out(x0.n, x0.h, x0.w);
  const double scale = 2.0 / static_cast<double>(pred.data.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double d = pred.data[i] - eps.data[i];
    acc += d * d;
    d_out.data[i] = scale * d;
  }
  return {acc / static_cast<double>(pred.data.size()), predictor.backward(x_t, y, t, d_out)};
}

ImageBatch reverse_step(const ImageBatch& x_t, const ImageBatch& y, int t, const NoisePredictor& predictor,
                        const DiffusionSchedule& s, Rng& rng, const SamplerOptions& options) {
  s.check_step(t);
  require(x_t.same_shape(y), "reverse_step: y must match x_t");
  const std::vector<int> steps(static_cast<std::size_t>(x_t.n), t);
  const ImageBatch eps_hat = predictor.predict(x_t, y, steps);
  require(eps_hat.same_shape(x_t), "reverse_step: predictor changed the shape");
  const auto x0_hat = predict_x0(x_t.data, eps_hat.data, t, s, options.clamp_x0);
  Posterior post = posterior_params(x_t.data, x0_hat, t, s);
  ImageBatch out(x_t.n, x_t.h, x_t.w);
  out.data = std::move(post.mean);
  if (t > 1) {
    const double sigma = options.sigma_override ? *options.sigma_override : std::sqrt(s.sigma2[t]);
    if (sigma != 0.0) {
      std::vector<double> z(out.data.size());
      fill_normal(rng, z);
      for (std::size_t i = 0; i < z.size(); ++i) out.data[i] += sigma * z[i];
    }
  }
  return out;
}

ImageBatch sample(const ImageBatch& y, const NoisePredictor& predictor, const DiffusionSchedule& s, Rng& rng,
                  const SamplerOptions& options) {
  s.validate();
  ImageBatch x(y.n, y.h, y.w);
  fill_normal(rng, x.data);
  for (int t = s.T; t >= 1; --t) {
    x = reverse_step(x, y, t, predictor, s, rng, options);
    for (double v : x.data)
      if (!std::isfinite(v)) throw RuntimeError("sampling produced a non-finite value at step " + std::to_string(t));
  }
  return x;
}

}  // namespace ncsr::diffusion
