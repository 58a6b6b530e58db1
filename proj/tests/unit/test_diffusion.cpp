#include <doctest.h>

#include <cmath>
#include <numeric>

#include "ncsr/common/error.hpp"
#include "ncsr/diffusion/diffusion.hpp"
#include "ncsr/diffusion/schedule.hpp"
#include "ncsr/predictor/predictors.hpp"

using namespace ncsr;
using namespace ncsr::diffusion;

namespace {

// Returns eps as given at construction (a "perfect" predictor for a fixed draw).
class FixedOutput final : public NoisePredictor {
 public:
  explicit FixedOutput(ImageBatch out) : out_(std::move(out)) {}
  ImageBatch predict(const ImageBatch&, const ImageBatch&, std::span<const int>) const override { return out_; }
  std::size_t parameter_count() const override { return 0; }
  std::string identity() const override { return "fixed"; }

 private:
  ImageBatch out_;
};

class ZeroPredictor final : public NoisePredictor {
 public:
  ImageBatch predict(const ImageBatch& x, const ImageBatch&, std::span<const int>) const override {
    return ImageBatch(x.n, x.h, x.w, 0.0);
  }
  std::size_t parameter_count() const override { return 0; }
  std::string identity() const override { return "zero"; }
};

ImageBatch normal_batch(int n, int h, int w, std::uint64_t seed) {
  ImageBatch b(n, h, w);
  Rng rng(seed);
  fill_normal(rng, b.data);
  return b;
}

// Mean and variance of the density exp(logp) over a uniform grid (trapezoid rule).
std::pair<double, double> grid_moments(double lo, double hi, int n, auto logp) {
  const double dx = (hi - lo) / (n - 1);
  double peak = -1e300;
  for (int i = 0; i < n; ++i) peak = std::max(peak, logp(lo + i * dx));
  double z = 0.0, m1 = 0.0, m2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = lo + i * dx;
    const double w = std::exp(logp(x) - peak) * ((i == 0 || i == n - 1) ? 0.5 : 1.0);
    z += w;
    m1 += w * x;
    m2 += w * x * x;
  }
  const double mean = m1 / z;
  return {mean, m2 / z - mean * mean};
}

}  // namespace

TEST_CASE("sigmoid schedule construction") {
  for (int T : {1, 2, 10, 100, 1000}) {
    const DiffusionSchedule s = make_schedule(T);
    CAPTURE(T);
    CHECK(s.gamma[0] == 1.0);
    CHECK(s.gamma[T] < 1e-3);
    CHECK(s.gamma[T] == doctest::Approx(1e-5).epsilon(1e-6));
    double log_sum = 0.0;
    for (int t = 1; t <= T; ++t) {
      CHECK(s.gamma[t] < s.gamma[t - 1]);
      CHECK(s.beta[t] > 0.0);
      CHECK(s.beta[t] < 1.0);
      CHECK(s.alpha[t] == 1.0 - s.beta[t]);
      CHECK(s.gamma[t] == s.alpha[t] * s.gamma[t - 1]);
      CHECK(s.beta_tilde[t] == ((1.0 - s.gamma[t - 1]) / (1.0 - s.gamma[t])) * s.beta[t]);
      CHECK(s.beta_tilde[t] <= s.beta[t]);
      CHECK(s.sigma2[t] == s.beta_tilde[t]);
      log_sum += std::log(s.alpha[t]);
    }
    CHECK(std::abs(std::exp(log_sum) - s.gamma[T]) <= 1e-10 * s.gamma[T]);
  }
  CHECK(make_schedule(1).beta[1] == doctest::Approx(1.0 - 1e-5).epsilon(1e-12));
  CHECK_THROWS_AS(make_schedule(0), ValidationError);
}

TEST_CASE("schedule variance override and serialization") {
  ScheduleParams p;
  p.variance = ReverseVariance::beta;
  const DiffusionSchedule s = make_schedule(50, ScheduleKind::sigmoid, p);
  for (int t = 1; t <= 50; ++t) CHECK(s.sigma2[t] == s.beta[t]);
  const DiffusionSchedule back = nlohmann::json(s).get<DiffusionSchedule>();
  CHECK(back.beta == s.beta);
  CHECK(back.gamma == s.gamma);
  CHECK(back.sigma2 == s.sigma2);
  CHECK(back.kind == ScheduleKind::sigmoid);
  std::vector<double> bad(3, 0.5);
  bad[2] = 1.5;
  CHECK_THROWS_AS(schedule_from_betas(bad, {}), ValidationError);
}

TEST_CASE("forward process sampling") {
  const DiffusionSchedule s = make_schedule(100);
  const std::vector<double> x0{0.5, -0.25, 1.0}, zero(3, 0.0), eps{0.3, -1.2, 2.0};
  const auto a = q_sample(x0, 40, zero, s);
  for (int i = 0; i < 3; ++i) CHECK(a[i] == std::sqrt(s.gamma[40]) * x0[i]);
  const auto b = q_sample(zero, 40, eps, s);
  for (int i = 0; i < 3; ++i) CHECK(b[i] == std::sqrt(1.0 - s.gamma[40]) * eps[i]);
  CHECK_THROWS_AS(q_sample(x0, 0, eps, s), ValidationError);
  CHECK_THROWS_AS(q_sample(x0, 101, eps, s), ValidationError);
}

TEST_CASE("composed single-step kernels reproduce the closed-form marginal") {
  const int T = 100, chains = 100000;
  const DiffusionSchedule s = make_schedule(T);
  const double x0 = 2.0;
  std::vector<double> x(chains, x0), z(chains);
  Rng rng(31337);
  for (int t = 1; t <= T; ++t) {
    fill_normal(rng, z);
    const double a = std::sqrt(s.alpha[t]), b = std::sqrt(s.beta[t]);
    for (int i = 0; i < chains; ++i) x[i] = a * x[i] + b * z[i];
    if (t == 1 || t % 20 == 0) {
      const double mean = std::accumulate(x.begin(), x.end(), 0.0) / chains;
      double var = 0.0;
      for (double v : x) var += (v - mean) * (v - mean);
      var /= chains;
      const double m = std::sqrt(s.gamma[t]) * x0, v = 1.0 - s.gamma[t];
      CAPTURE(t);
      CHECK(std::abs(mean - m) <= 0.01 * std::max(std::abs(m), std::sqrt(v)));
      CHECK(std::abs(var - v) <= 0.01 * v);
    }
  }
}

TEST_CASE("posterior parameters") {
  const DiffusionSchedule s = make_schedule(100);
  const std::vector<double> x_t{0.4, -0.7}, x0{0.9, 0.1};
  SUBCASE("t = 1 collapses onto x0") {
    const Posterior p = posterior_params(x_t, x0, 1, s);
    CHECK(p.mean == x0);
    CHECK(p.variance == 0.0);
  }
  SUBCASE("zero inputs give a zero mean") {
    const Posterior p = posterior_params(std::vector<double>(2, 0.0), std::vector<double>(2, 0.0), 37, s);
    CHECK(p.mean == std::vector<double>(2, 0.0));
  }
  SUBCASE("t = 0 has no posterior") { CHECK_THROWS_AS(posterior_params(x_t, x0, 0, s), ValidationError); }
  SUBCASE("matches brute-force Bayes on a grid") {
    for (int t : {2, 5, 25, 50, 75, 100}) {
      const double a = 0.6, xt = -0.35;
      auto logp = [&](double u) {
        const double m0 = std::sqrt(s.gamma[t - 1]) * a, v0 = 1.0 - s.gamma[t - 1];
        const double m1 = std::sqrt(s.alpha[t]) * u, v1 = s.beta[t];
        return -0.5 * (u - m0) * (u - m0) / v0 - 0.5 * (xt - m1) * (xt - m1) / v1;
      };
      const auto [mean, var] = grid_moments(-6.0, 6.0, 2000001, logp);
      const Posterior p = posterior_params(std::vector<double>{xt}, std::vector<double>{a}, t, s);
      CAPTURE(t);
      CHECK(std::abs(p.mean[0] - mean) <= 1e-3);
      CHECK(std::abs(p.variance - var) <= 1e-3);
    }
  }
}

TEST_CASE("x0 reparameterization") {
  const DiffusionSchedule s = make_schedule(1000);
  Rng rng(4);
  std::vector<double> x0(256), eps(256);
  fill_normal(rng, eps);
  for (std::size_t i = 0; i < x0.size(); ++i) x0[i] = std::sin(0.1 * static_cast<double>(i));
  for (int t : {1, 10, 500, 999, 1000}) {
    const auto back = predict_x0(q_sample(x0, t, eps, s), eps, t, s);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < x0.size(); ++i) {
      num += (back[i] - x0[i]) * (back[i] - x0[i]);
      den += x0[i] * x0[i];
    }
    CHECK(std::sqrt(num / den) <= 1e-6);
  }
  const std::vector<double> xt{0.3, -0.2}, zero(2, 0.0), big{50.0, -50.0};
  const auto plain = predict_x0(xt, zero, 300, s);
  CHECK(plain[0] == doctest::Approx(0.3 / std::sqrt(s.gamma[300])));
  const auto clamped = predict_x0(xt, big, 300, s, true);
  for (double v : clamped) CHECK(std::abs(v) <= 1.0);
}

TEST_CASE("training loss") {
  const DiffusionSchedule s = make_schedule(100);
  const int n = 4, h = 16, w = 16;
  const std::vector<int> t{3, 40, 77, 100};
  const ImageBatch eps = normal_batch(n, h, w, 9);
  const ImageBatch y = normal_batch(n, h, w, 10);

  SUBCASE("a predictor that returns eps has zero loss") {
    const ImageBatch x0(n, h, w, 0.25);
    CHECK(training_loss(FixedOutput(eps), x0, y, t, eps, s) == 0.0);
    const auto oracle = predictor::oracle_delta_predictor(0.25, s);
    CHECK(training_loss(*oracle, x0, y, t, eps, s) < 1e-20);
  }

  SUBCASE("a zero predictor has loss near one") {
    const int big = 100000;
    const ImageBatch e = normal_batch(1, 1, big, 11);
    const ImageBatch z(1, 1, big, 0.0);
    const std::vector<int> t1{50};
    CHECK(training_loss(ZeroPredictor(), z, z, t1, e, s) == doctest::Approx(1.0).epsilon(0.02));
  }

  SUBCASE("linear predictor gradient matches central differences") {
    const ImageBatch x0 = normal_batch(n, h, w, 12);
    predictor::LinearPredictor lin({0.1, -0.3, 0.05, 0.7, -0.2, 0.4, 0.15, -0.05, 0.02, 0.3}, s.T);
    const LossAndGradient lg = training_loss_gradient(lin, x0, y, t, eps, s);
    CHECK(lg.loss == doctest::Approx(training_loss(lin, x0, y, t, eps, s)));
    const auto base = lin.parameters();
    for (int k = 0; k < predictor::LinearPredictor::kParams; ++k) {
      const double hstep = 1e-5;
      auto p = base;
      p[k] += hstep;
      lin.set_parameters(p);
      const double up = training_loss(lin, x0, y, t, eps, s);
      p[k] -= 2 * hstep;
      lin.set_parameters(p);
      const double down = training_loss(lin, x0, y, t, eps, s);
      lin.set_parameters(base);
      const double fd = (up - down) / (2 * hstep);
      CAPTURE(k);
      CHECK(std::abs(fd - lg.gradient[k]) <= 1e-4 * std::max(std::abs(fd), 1e-8));
    }
  }
}

TEST_CASE("reverse step") {
  const DiffusionSchedule s = make_schedule(100);
  const ImageBatch x = normal_batch(2, 4, 4, 21);
  const ImageBatch y(2, 4, 4, 0.0);
  const FixedOutput pred(normal_batch(2, 4, 4, 22));
  Rng rng(1);

  SUBCASE("t = 1 returns the x0 estimate without noise") {
    SamplerOptions opt;
    opt.clamp_x0 = false;
    const ImageBatch out = reverse_step(x, y, 1, pred, s, rng, opt);
    const auto expected = predict_x0(x.data, pred.predict(x, y, std::vector<int>{1, 1}).data, 1, s);
    CHECK(out.data == expected);
  }

  SUBCASE("zero sigma gives the posterior mean") {
    SamplerOptions opt;
    opt.clamp_x0 = false;
    opt.sigma_override = 0.0;
    const ImageBatch out = reverse_step(x, y, 60, pred, s, rng, opt);
    const auto x0_hat = predict_x0(x.data, pred.predict(x, y, std::vector<int>{60, 60}).data, 60, s);
    CHECK(out.data == posterior_params(x.data, x0_hat, 60, s).mean);
  }

  SUBCASE("oracle predictor steps average to the closed-form posterior mean") {
    const double c = 0.4;
    const auto oracle = predictor::oracle_delta_predictor(c, s);
    for (int t : {2, 30, 90}) {
      const int runs = 10000;
      const ImageBatch xt(runs, 1, 1, 0.3);
      const ImageBatch yy(runs, 1, 1, 0.0);
      const ImageBatch out = reverse_step(xt, yy, t, *oracle, s, rng);
      const double mean = std::accumulate(out.data.begin(), out.data.end(), 0.0) / runs;
      const double mu = posterior_params(std::vector<double>{0.3}, std::vector<double>{c}, t, s).mean[0];
      CAPTURE(t);
      CHECK(std::abs(mean - mu) <= 3.0 * std::sqrt(s.sigma2[t] / runs));
    }
  }
}

TEST_CASE("ancestral sampling") {
  const DiffusionSchedule s = make_schedule(100);
  SUBCASE("delta-data oracle chains concentrate at the target") {
    for (double c : {-0.6, 0.0, 0.35}) {
      const auto oracle = predictor::oracle_delta_predictor(c, s);
      const ImageBatch y(64, 8, 8, 0.0);
      Rng rng(77);
      const ImageBatch out = sample(y, *oracle, s, rng);
      double total = 0.0;
      for (int i = 0; i < out.n; ++i) {
        const auto img = out.image(i);
        const double m = std::accumulate(img.begin(), img.end(), 0.0) / img.size();
        double v = 0.0;
        for (double p : img) v += (p - m) * (p - m);
        CHECK(std::sqrt(v / img.size()) <= 0.1);
        total += m;
      }
      CHECK(std::abs(total / out.n - c) <= 0.05);
    }
  }

  SUBCASE("fixed seed is bit-reproducible") {
    const auto oracle = predictor::oracle_delta_predictor(0.2, s);
    const ImageBatch y(2, 8, 8, 0.0);
    Rng a(5), b(5);
    CHECK(sample(y, *oracle, s, a).data == sample(y, *oracle, s, b).data);
  }

  SUBCASE("a one-step chain is the x0 estimate") {
    const DiffusionSchedule one = make_schedule(1);
    const FixedOutput pred(normal_batch(1, 4, 4, 3));
    const ImageBatch y(1, 4, 4, 0.0);
    Rng a(9), b(9);
    const ImageBatch out = sample(y, pred, one, a);
    ImageBatch x1(1, 4, 4);
    fill_normal(b, x1.data);
    CHECK(out.data == predict_x0(x1.data, pred.predict(x1, y, std::vector<int>{1}).data, 1, one, true));
  }
}
