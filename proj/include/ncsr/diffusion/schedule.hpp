#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace ncsr::diffusion {

enum class ScheduleKind { sigmoid, explicit_betas };
enum class ReverseVariance { beta_tilde, beta };

struct ScheduleParams {
  double tau = 3.0;             // sigmoid sharpness over normalized time
  double gamma_max = 1.0 - 1e-5;  // gamma at u = 0 before rescaling endpoints
  double gamma_min = 1e-5;        // gamma_T
  ReverseVariance variance = ReverseVariance::beta_tilde;
};

/// Arrays are indexed by step t = 0..T; entry 0 is the noiseless state
/// (gamma[0] = 1, beta[0] = 0). Everything is derived from the stored beta
/// so that gamma[t] == alpha[t] * gamma[t-1] holds bit-for-bit.
struct DiffusionSchedule {
  int T = 0;
  ScheduleKind kind = ScheduleKind::sigmoid;
  ScheduleParams params;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> gamma;
  std::vector<double> beta_tilde;
  std::vector<double> sigma2;

  /// 0 < beta < 1, gamma strictly decreasing, gamma_T < 1e-3.
  void validate() const;
  void check_step(int t) const;
};

/// gbar(u) = logistic(-tau (2u - 1)), affinely mapped so gbar(0) = gamma_max and
/// gbar(1) = gamma_min; gamma_t = gbar(t / T) for t >= 1 and gamma_0 = 1.
DiffusionSchedule make_schedule(int T, ScheduleKind kind = ScheduleKind::sigmoid, const ScheduleParams& params = {});

/// Rebuilds every derived array from beta[1..T] (beta.size() == T + 1, beta[0] ignored).
DiffusionSchedule schedule_from_betas(const std::vector<double>& beta, const ScheduleParams& params,
                                      ScheduleKind kind = ScheduleKind::explicit_betas);

void to_json(nlohmann::json& j, const DiffusionSchedule& s);
void from_json(const nlohmann::json& j, DiffusionSchedule& s);
void to_json(nlohmann::json& j, const ScheduleParams& p);
void from_json(const nlohmann::json& j, ScheduleParams& p);

}  // namespace ncsr::diffusion
