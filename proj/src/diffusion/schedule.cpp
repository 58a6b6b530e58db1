#include "ncsr/diffusion/schedule.hpp"

#include <cmath>

#include "ncsr/common/error.hpp"

namespace ncsr::diffusion {

using nlohmann::json;

void DiffusionSchedule::validate() const {
  require(T >= 1, "schedule: T must be >= 1");
  const std::size_t n = static_cast<std::size_t>(T) + 1;
  require(beta.size() == n && alpha.size() == n && gamma.size() == n && beta_tilde.size() == n && sigma2.size() == n,
          "schedule: array lengths must be T + 1");
  require(gamma[0] == 1.0, "schedule: gamma_0 must be 1");
  for (int t = 1; t <= T; ++t) {
    require(beta[t] > 0.0 && beta[t] < 1.0, "schedule: beta_" + std::to_string(t) + " outside (0, 1)");
    require(gamma[t] < gamma[t - 1], "schedule: gamma must be strictly decreasing");
  }
  require(gamma[T] < 1e-3, "schedule: gamma_T must be below 1e-3");
}

void DiffusionSchedule::check_step(int t) const {
  require(t >= 1 && t <= T, "diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
}

DiffusionSchedule schedule_from_betas(const std::vector<double>& beta, const ScheduleParams& params, ScheduleKind kind) {
  require(beta.size() >= 2, "schedule: need at least one step");
  DiffusionSchedule s;
  s.T = static_cast<int>(beta.size()) - 1;
  s.kind = kind;
  s.params = params;
  const std::size_t n = beta.size();
  s.beta.assign(n, 0.0);
  s.alpha.assign(n, 1.0);
  s.gamma.assign(n, 1.0);
  s.beta_tilde.assign(n, 0.0);
  s.sigma2.assign(n, 0.0);
  for (std::size_t t = 1; t < n; ++t) {
    require(beta[t] > 0.0 && beta[t] < 1.0, "schedule: beta_" + std::to_string(t) + " outside (0, 1)");
    // Snap beta so that 1 - beta and 1 - alpha are both exact; this makes the
    // t = 1 posterior collapse (1 - gamma_1 == beta_1) hold without rounding.
    s.alpha[t] = 1.0 - beta[t];
    s.beta[t] = 1.0 - s.alpha[t];
    s.gamma[t] = s.alpha[t] * s.gamma[t - 1];
    s.beta_tilde[t] = ((1.0 - s.gamma[t - 1]) / (1.0 - s.gamma[t])) * s.beta[t];
    s.sigma2[t] = params.variance == ReverseVariance::beta_tilde ? s.beta_tilde[t] : s.beta[t];
  }
  s.validate();
  return s;
}

DiffusionSchedule make_schedule(int T, ScheduleKind kind, const ScheduleParams& params) {
  require(T >= 1, "schedule: T must be >= 1");
  require(kind == ScheduleKind::sigmoid, "make_schedule: only the sigmoid family is generated; load explicit betas instead");
  require(params.tau > 0.0, "schedule: tau must be positive");
  require(params.gamma_min > 0.0 && params.gamma_max < 1.0 && params.gamma_min < params.gamma_max,
          "schedule: need 0 < gamma_min < gamma_max < 1");
  auto logistic = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  const double g0 = logistic(params.tau), g1 = logistic(-params.tau);
  auto gbar = [&](double u) {
    const double raw = logistic(-params.tau * (2.0 * u - 1.0));
    return params.gamma_min + (raw - g1) / (g0 - g1) * (params.gamma_max - params.gamma_min);
  };
  std::vector<double> beta(static_cast<std::size_t>(T) + 1, 0.0);
  double prev = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double g = t == T ? params.gamma_min : gbar(static_cast<double>(t) / T);
    beta[t] = 1.0 - g / prev;
    prev = g;
  }
  return schedule_from_betas(beta, params, ScheduleKind::sigmoid);
}

void to_json(json& j, const ScheduleParams& p) {
  j = {{"tau", p.tau},
       {"gamma_max", p.gamma_max},
       {"gamma_min", p.gamma_min},
       {"variance", p.variance == ReverseVariance::beta_tilde ? "beta_tilde" : "beta"}};
}

void from_json(const json& j, ScheduleParams& p) {
  p.tau = j.value("tau", p.tau);
  p.gamma_max = j.value("gamma_max", p.gamma_max);
  p.gamma_min = j.value("gamma_min", p.gamma_min);
  const std::string v = j.value("variance", std::string("beta_tilde"));
  require(v == "beta_tilde" || v == "beta", "schedule variance must be 'beta_tilde' or 'beta'");
  p.variance = v == "beta" ? ReverseVariance::beta : ReverseVariance::beta_tilde;
}

void to_json(json& j, const DiffusionSchedule& s) {
  j = {{"T", s.T},
       {"kind", s.kind == ScheduleKind::sigmoid ? "sigmoid" : "explicit_betas"},
       {"params", s.params},
       {"beta", s.beta}};
}

void from_json(const json& j, DiffusionSchedule& s) {
  const ScheduleParams params = j.value("params", ScheduleParams{});
  const std::string kind = j.value("kind", std::string("sigmoid"));
  require(kind == "sigmoid" || kind == "explicit_betas", "unknown schedule kind '" + kind + "'");
  s = schedule_from_betas(j.at("beta").get<std::vector<double>>(), params,
                          kind == "sigmoid" ? ScheduleKind::sigmoid : ScheduleKind::explicit_betas);
  require(s.T == j.at("T").get<int>(), "schedule: T does not match the beta array");
}

}  // namespace ncsr::diffusion
