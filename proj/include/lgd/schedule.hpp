#pragma once

#include <string>
#include <vector>

#include "lgd/rng.hpp"
#include "lgd/tensor.hpp"

namespace lgd {

enum class ScheduleKind { kLinear, kCosine };

ScheduleKind parse_schedule_kind(const std::string& s);
std::string to_string(ScheduleKind k);

/// Variance-preserving noising process z_t = alpha(t) * z0 + mu(t) * xi over
/// discrete steps t = 0..T, with t = 0 the clean sample.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  int steps() const { return steps_; }
  ScheduleKind kind() const { return kind_; }

  /// Cumulative product of (1 - beta) up to t; alpha_bar(0) = 1.
  float alpha_bar(int t) const;
  float alpha(int t) const;  // sqrt(alpha_bar)
  float mu(int t) const;     // sqrt(1 - alpha_bar)
  /// Per-step variance beta_t for t in [1, T].
  float beta(int t) const;

  /// Posterior q(z_{t-1} | z_t, z0) = N(c0 * z0 + ct * z_t, beta_tilde).
  float posterior_coef_z0(int t) const;
  float posterior_coef_zt(int t) const;

  const std::vector<float>& alpha_bar_table() const { return alpha_bar_; }
  const std::vector<float>& beta_table() const { return beta_; }

  friend NoiseSchedule build_schedule(int steps, ScheduleKind kind);

 private:
  void check_t(int t, int lo) const;

  int steps_ = 0;
  ScheduleKind kind_ = ScheduleKind::kCosine;
  std::vector<float> alpha_bar_;  // [T+1]
  std::vector<float> alpha_;      // [T+1]
  std::vector<float> mu_;         // [T+1]
  std::vector<float> beta_;       // [T], beta_[t-1] is beta_t
  std::vector<float> coef_z0_, coef_zt_;
};

/// Linear: beta interpolated from 1e-4 to 2e-2 over T steps.
/// Cosine: squared-cosine alpha_bar with offset 0.008, beta clipped to 0.999.
NoiseSchedule build_schedule(int steps, ScheduleKind kind);

/// alpha(t) * z0 + mu(t) * xi.
Tensor noise_image(const Tensor& z0, int t, const Tensor& xi, const NoiseSchedule& sched);

/// Uniform step index in [1, T].
int sample_time(Rng& rng, const NoiseSchedule& sched);

/// Normalized time t / T in [0, 1].
inline float t_normalized(int t, const NoiseSchedule& sched) {
  return static_cast<float>(t) / static_cast<float>(sched.steps());
}

/// Nearest step index for a normalized time, round(t_norm * T).
int step_for(float t_norm, const NoiseSchedule& sched);

}  // namespace lgd
