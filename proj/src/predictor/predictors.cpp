#include "ncsr/predictor/predictors.hpp"

#include <cmath>
#include <sstream>

#include "ncsr/common/error.hpp"
#include "ncsr/common/hash.hpp"

namespace ncsr::predictor {

using diffusion::ImageBatch;

OracleDeltaPredictor::OracleDeltaPredictor(double c, diffusion::DiffusionSchedule schedule)
    : c_(c), s_(std::move(schedule)) {
  require(std::abs(c) <= 1.0, "oracle delta predictor: |c| must be <= 1");
  s_.validate();
}

ImageBatch OracleDeltaPredictor::predict(const ImageBatch& x_t, const ImageBatch& y, std::span<const int> t) const {
  require(x_t.same_shape(y), "predictor: x_t and y shapes differ");
  require(t.size() == static_cast<std::size_t>(x_t.n), "predictor: one step per image required");
  ImageBatch out(x_t.n, x_t.h, x_t.w);
  for (int i = 0; i < x_t.n; ++i) {
    s_.check_step(t[i]);
    const double a = std::sqrt(s_.gamma[t[i]]) * c_;
    const double inv = 1.0 / std::sqrt(1.0 - s_.gamma[t[i]]);
    const auto in = x_t.image(i);
    auto o = out.image(i);
    for (std::size_t p = 0; p < in.size(); ++p) o[p] = (in[p] - a) * inv;
  }
  return out;
}

std::string OracleDeltaPredictor::identity() const {
  std::ostringstream os;
  os.precision(17);
  os << "oracle_delta(c=" << c_ << ", T=" << s_.T << ")";
  return os.str();
}

std::unique_ptr<OracleDeltaPredictor> oracle_delta_predictor(double c, const diffusion::DiffusionSchedule& schedule) {
  return std::make_unique<OracleDeltaPredictor>(c, schedule);
}

// ---------------------------------------------------------------------------

namespace {

void features(double x, double y, double u, double* f) {
  f[0] = x;
  f[1] = y;
  f[2] = 1.0;
  f[3] = x * u;
  f[4] = y * u;
  f[5] = u;
  f[6] = x * y;
  f[7] = x * x;
  f[8] = y * y;
  f[9] = u * u;
}

}  // namespace

LinearPredictor::LinearPredictor(std::vector<double> params, int T) : w_(std::move(params)), T_(T) {
  require(w_.size() == kParams, "LinearPredictor: expected 10 parameters");
  require(T >= 1, "LinearPredictor: T must be positive");
}

void LinearPredictor::set_parameters(std::span<const double> params) {
  require(params.size() == kParams, "LinearPredictor: expected 10 parameters");
  w_.assign(params.begin(), params.end());
}

ImageBatch LinearPredictor::predict(const ImageBatch& x_t, const ImageBatch& y, std::span<const int> t) const {
  require(x_t.same_shape(y), "predictor: x_t and y shapes differ");
  require(t.size() == static_cast<std::size_t>(x_t.n), "predictor: one step per image required");
  ImageBatch out(x_t.n, x_t.h, x_t.w);
  double f[kParams];
  for (int i = 0; i < x_t.n; ++i) {
    const double u = static_cast<double>(t[i]) / T_;
    const auto xi = x_t.image(i), yi = y.image(i);
    auto o = out.image(i);
    for (std::size_t p = 0; p < xi.size(); ++p) {
      features(xi[p], yi[p], u, f);
      double acc = 0.0;
      for (int k = 0; k < kParams; ++k) acc += w_[k] * f[k];
      o[p] = acc;
    }
  }
  return out;
}

std::vector<double> LinearPredictor::backward(const ImageBatch& x_t, const ImageBatch& y, std::span<const int> t,
                                              const ImageBatch& d_out) const {
  require(d_out.same_shape(x_t), "LinearPredictor::backward: gradient shape mismatch");
  std::vector<double> g(kParams, 0.0);
  double f[kParams];
  for (int i = 0; i < x_t.n; ++i) {
    const double u = static_cast<double>(t[i]) / T_;
    const auto xi = x_t.image(i), yi = y.image(i), di = d_out.image(i);
    for (std::size_t p = 0; p < xi.size(); ++p) {
      features(xi[p], yi[p], u, f);
      for (int k = 0; k < kParams; ++k) g[k] += di[p] * f[k];
    }
  }
  return g;
}

std::string LinearPredictor::identity() const {
  Fnv1a h;
  h.update_values<double>(w_);
  return "linear10:" + h.hex();
}

// ---------------------------------------------------------------------------

nn::Tensor to_tensor(const ImageBatch& b) {
  nn::Tensor t(1, b.n, b.h, b.w);
  for (std::size_t i = 0; i < b.data.size(); ++i) t.v[i] = static_cast<float>(b.data[i]);
  return t;
}

ImageBatch to_batch(const nn::Tensor& t) {
  require(t.c == 1, "to_batch: expected a single-channel tensor");
  ImageBatch b(t.n, t.h, t.w);
  for (std::size_t i = 0; i < b.data.size(); ++i) b.data[i] = t.v[i];
  return b;
}

UNetPredictor::UNetPredictor(std::shared_ptr<UNet> net) : net_(std::move(net)) {
  require(net_ != nullptr, "UNetPredictor: null network");
}

ImageBatch UNetPredictor::predict(const ImageBatch& x_t, const ImageBatch& y, std::span<const int> t) const {
  require(x_t.same_shape(y), "predictor: x_t and y shapes differ");
  return to_batch(net_->forward(to_tensor(x_t), to_tensor(y), t, /*keep=*/false));
}

std::string UNetPredictor::identity() const {
  Fnv1a h;
  h.update(nlohmann::json(net_->config()).dump());
  h.update_values<float>(net_->params().values());
  return "unet:" + h.hex();
}

}  // namespace ncsr::predictor
