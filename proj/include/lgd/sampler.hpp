#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "lgd/lgp.hpp"
#include "lgd/schedule.hpp"
#include "lgd/unet.hpp"

namespace lgd {

/// Spatial map the sampler steers toward, with its loss and guidance window.
/// Guidance is active at step t iff stop_frac <= t / T <= start_frac.
struct GuidanceTarget {
  Tensor map;  // [M, H, W]
  LossKind loss = LossKind::kSqErr;
  float start_frac = 1.0f;
  float stop_frac = 0.5f;
  float beta = 1.6f;

  void validate() const;
  bool active(int t, int steps) const;
};

struct SampleRunConfig {
  int steps = 250;
  float cfg_scale = 8.0f;
  uint64_t seed = 0;
  int class_id = 0;
  bool stochastic = true;
  /// Clamp the predicted clean sample to [-1, 1] before the posterior mean.
  bool clip_x0 = true;

  void validate() const;
  nlohmann::json to_json() const;
  static SampleRunConfig from_json(const nlohmann::json& j);
};

/// One reverse step of a trajectory. Unguided steps log NaN loss and zero grad/alpha.
struct StepLog {
  int step = 0;  // 0 for t = T
  float t_norm = 0.0f;
  float guidance_loss = 0.0f;
  float step_norm = 0.0f;  // ||z_t - z_{t-1}|| before guidance
  float grad_norm = 0.0f;
  float alpha = 0.0f;
};

/// Posterior mean from the eps-prediction plus sqrt(beta_t) * noise.
/// `noise` may be undefined (deterministic step); it is ignored at t = 1.
Tensor ddpm_reverse_step(const Tensor& z_t, const Tensor& eps, int t, const NoiseSchedule& sched,
                         const Tensor& noise, bool clip_x0 = true);

struct GuidanceGradient {
  Tensor grad;  // d loss / d z_t
  float loss = 0.0f;
  Tensor eps_cond;  // conditional noise prediction of the same pass
};

/// Conditional U-Net pass with taps at z_t, predictor output, loss against
/// the target map, and its gradient w.r.t. z_t. Model weights receive none.
GuidanceGradient guidance_gradient(const Tensor& z_t, int t, int cond, const GuidanceTarget& target, const UNet& ddpm,
                                   const LatentGuidancePredictor& lgp, const NoiseSchedule& sched);

/// Loss of the predictor output at z_t against the target, without gradient.
float guidance_loss_at(const Tensor& z_t, int t, int cond, const GuidanceTarget& target, const UNet& ddpm,
                       const LatentGuidancePredictor& lgp, const NoiseSchedule& sched);

struct GuidanceStep {
  Tensor z;
  float alpha = 0.0f;
  float grad_norm = 0.0f;
  float step_norm = 0.0f;
};

/// z_next - alpha * grad with alpha = beta * ||z_t - z_next|| / ||grad|| (global
/// norms). Returns z_next unchanged when beta = 0 or ||grad|| < 1e-12.
GuidanceStep apply_guidance(const Tensor& z_t, const Tensor& z_next, const Tensor& grad, float beta);

struct SampleResult {
  Tensor z0;     // [1, C, H, W] final sample in diffusion space
  Tensor image;  // [C, H, W] in [0, 1]
  std::vector<StepLog> log;
};

/// Step-wise ancestral sampler with optional predictor guidance. The noise
/// stream is identical with and without guidance for a given seed.
class GuidedSampler {
 public:
  GuidedSampler(const UNet& ddpm, const LatentGuidancePredictor* lgp, const NoiseSchedule& sched,
                SampleRunConfig run);

  /// z_T ~ N(0, I), drawn from the run's noise stream.
  Tensor initial_noise();
  /// z_t -> z_{t-1}; guidance applies when `target` is non-null and active at t.
  Tensor step(const Tensor& z, int t, const GuidanceTarget* target, StepLog* log = nullptr);
  /// Steps t_start .. 1 from z.
  SampleResult run_from(Tensor z, int t_start, const GuidanceTarget* target);
  SampleResult run(const GuidanceTarget* target);

  Rng& rng() { return rng_; }
  const SampleRunConfig& config() const { return run_; }

 private:
  const UNet& ddpm_;
  const LatentGuidancePredictor* lgp_;
  const NoiseSchedule& sched_;
  SampleRunConfig run_;
  Rng rng_;
};

SampleResult sample(const UNet& ddpm, const LatentGuidancePredictor* lgp, const GuidanceTarget* target,
                    const SampleRunConfig& run, const NoiseSchedule& sched);

struct Overhead {
  double guided_ms = 0.0;
  double unguided_ms = 0.0;
  double ratio = 0.0;
};

/// Wall-clock of one guided and one unguided run with the same seed.
Overhead measure_overhead(const UNet& ddpm, const LatentGuidancePredictor& lgp, const GuidanceTarget& target,
                          const SampleRunConfig& run, const NoiseSchedule& sched);

inline constexpr const char* kTrajectoryHeader = "step,t_norm,guidance_loss,step_norm,grad_norm,alpha";
void write_trajectory_csv(const std::string& path, const std::vector<StepLog>& log);

}  // namespace lgd
