#include "lgd/sampler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include "lgd/errors.hpp"

namespace lgd {

namespace {

double l2_norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

double l2_dist(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

void require_frozen(const UNet& ddpm, const LatentGuidancePredictor* lgp) {
  if (ddpm.registry().any_requires_grad()) throw UsageError("sampler: denoiser parameters must be frozen");
  if (lgp && lgp->registry().any_requires_grad()) throw UsageError("sampler: predictor parameters must be frozen");
}

Tensor batched_target(const GuidanceTarget& target, const Tensor& z_t) {
  const Tensor& m = target.map;
  if (m.rank() != 3 || m.dim(1) != z_t.dim(2) || m.dim(2) != z_t.dim(3))
    throw ShapeError("guidance target " + shape_str(m.shape()) + " does not match latent " + shape_str(z_t.shape()));
  return reshape(m.detach(), {1, m.dim(0), m.dim(1), m.dim(2)});
}

Tensor predictor_output(const Tensor& z, int t, int cond, const UNet& ddpm, const LatentGuidancePredictor& lgp,
                        const NoiseSchedule& sched, Tensor* eps_cond) {
  const float tn = t_normalized(t, sched);
  const int ts[1] = {t};
  const int cs[1] = {cond};
  UNetOutput out = ddpm.forward(z, ts, cs, lgp.config().input_mode == InputMode::kFeatures);
  if (eps_cond) *eps_cond = out.eps.detach();
  if (lgp.config().input_mode == InputMode::kZtBaseline) return lgp.predict(z, tn);
  return lgp.predict(collect_features(out.taps, z.dim(2), z.dim(3), tn).data, tn);
}

}  // namespace

void GuidanceTarget::validate() const {
  if (!map.defined() || map.rank() != 3) throw ConfigError("guidance target map must be [M,H,W]");
  if (!(stop_frac >= 0.0f && stop_frac < start_frac && start_frac <= 1.0f))
    throw ConfigError("guidance window needs 0 <= stop_frac < start_frac <= 1");
  if (!(beta >= 0.0f) || !std::isfinite(beta)) throw ConfigError("guidance beta must be finite and >= 0");
}

bool GuidanceTarget::active(int t, int steps) const {
  // Fractions arrive as floats (0.8f > 0.8); the tolerance keeps boundary steps inclusive.
  constexpr double kTol = 1e-6;
  const double tn = static_cast<double>(t) / steps;
  return tn >= static_cast<double>(stop_frac) - kTol && tn <= static_cast<double>(start_frac) + kTol;
}

void SampleRunConfig::validate() const {
  if (steps < 2) throw ConfigError("sampling steps must be >= 2");
  if (!std::isfinite(cfg_scale)) throw ConfigError("cfg scale must be finite");
}

nlohmann::json SampleRunConfig::to_json() const {
  return {{"steps", steps}, {"cfg_scale", cfg_scale}, {"seed", seed},
          {"class_id", class_id}, {"stochastic", stochastic}, {"clip_x0", clip_x0}};
}

SampleRunConfig SampleRunConfig::from_json(const nlohmann::json& j) {
  SampleRunConfig c;
  c.steps = j.value("steps", c.steps);
  c.cfg_scale = j.value("cfg_scale", c.cfg_scale);
  c.seed = j.value("seed", c.seed);
  c.class_id = j.value("class_id", c.class_id);
  c.stochastic = j.value("stochastic", c.stochastic);
  c.clip_x0 = j.value("clip_x0", c.clip_x0);
  return c;
}

Tensor ddpm_reverse_step(const Tensor& z_t, const Tensor& eps, int t, const NoiseSchedule& sched, const Tensor& noise,
                         bool clip_x0) {
  if (z_t.shape() != eps.shape()) throw ShapeError("reverse step: eps " + shape_str(eps.shape()) + " vs z " + shape_str(z_t.shape()));
  const bool add_noise = t > 1 && noise.defined();
  if (add_noise && noise.shape() != z_t.shape()) throw ShapeError("reverse step: noise shape mismatch");
  const float a = sched.alpha(t), m = sched.mu(t);
  const float c0 = sched.posterior_coef_z0(t), ct = sched.posterior_coef_zt(t);
  const float sigma = add_noise ? std::sqrt(sched.beta(t)) : 0.0f;
  const auto z = z_t.data(), e = eps.data();
  std::vector<float> out(z.size());
  for (size_t i = 0; i < z.size(); ++i) {
    float x0 = (z[i] - m * e[i]) / a;
    if (clip_x0) x0 = std::clamp(x0, -1.0f, 1.0f);
    out[i] = c0 * x0 + ct * z[i];
  }
  if (add_noise) {
    const auto n = noise.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] += sigma * n[i];
  }
  return Tensor(z_t.shape(), std::move(out));
}

GuidanceGradient guidance_gradient(const Tensor& z_t, int t, int cond, const GuidanceTarget& target, const UNet& ddpm,
                                   const LatentGuidancePredictor& lgp, const NoiseSchedule& sched) {
  require_frozen(ddpm, &lgp);
  Tensor tgt = batched_target(target, z_t);
  Tensor z = z_t.detach();
  z.set_requires_grad(true);
  GuidanceGradient g;
  Tensor pred = predictor_output(z, t, cond, ddpm, lgp, sched, &g.eps_cond);
  Tensor loss = guidance_loss(pred, tgt, target.loss);
  g.loss = loss.item();
  backward(loss);
  g.grad = z.has_grad() ? z.grad_tensor() : Tensor::zeros(z.shape());
  return g;
}

float guidance_loss_at(const Tensor& z_t, int t, int cond, const GuidanceTarget& target, const UNet& ddpm,
                       const LatentGuidancePredictor& lgp, const NoiseSchedule& sched) {
  NoGradGuard no_grad;
  Tensor tgt = batched_target(target, z_t);
  return guidance_loss(predictor_output(z_t.detach(), t, cond, ddpm, lgp, sched, nullptr), tgt, target.loss).item();
}

GuidanceStep apply_guidance(const Tensor& z_t, const Tensor& z_next, const Tensor& grad, float beta) {
  if (z_t.shape() != z_next.shape() || grad.shape() != z_t.shape())
    throw ShapeError("apply_guidance: shapes " + shape_str(z_t.shape()) + ", " + shape_str(z_next.shape()) + ", " +
                     shape_str(grad.shape()));
  GuidanceStep s;
  s.step_norm = static_cast<float>(l2_dist(z_t.data(), z_next.data()));
  const double gn = l2_norm(grad.data());
  s.grad_norm = static_cast<float>(gn);
  if (beta == 0.0f || gn < 1e-12) {
    s.z = z_next;
    return s;
  }
  const double alpha = static_cast<double>(beta) * l2_dist(z_t.data(), z_next.data()) / gn;
  s.alpha = static_cast<float>(alpha);
  const auto zn = z_next.data(), g = grad.data();
  std::vector<float> out(zn.size());
  for (size_t i = 0; i < zn.size(); ++i) out[i] = static_cast<float>(zn[i] - alpha * g[i]);
  s.z = Tensor(z_next.shape(), std::move(out));
  return s;
}

GuidedSampler::GuidedSampler(const UNet& ddpm, const LatentGuidancePredictor* lgp, const NoiseSchedule& sched,
                             SampleRunConfig run)
    : ddpm_(ddpm), lgp_(lgp), sched_(sched), run_(run), rng_(run.seed) {
  run_.validate();
  if (run_.steps != sched_.steps())
    throw ConfigError("run steps " + std::to_string(run_.steps) + " differ from schedule steps " +
                      std::to_string(sched_.steps()));
  if (run_.class_id < 0 || run_.class_id >= ddpm_.config().num_classes)
    throw InputError("class id " + std::to_string(run_.class_id) + " outside [0, " +
                     std::to_string(ddpm_.config().num_classes) + ")");
  require_frozen(ddpm_, lgp_);
}

Tensor GuidedSampler::initial_noise() {
  const auto& c = ddpm_.config();
  return rng_.normal_tensor({1, c.in_channels, c.image_size, c.image_size});
}

Tensor GuidedSampler::step(const Tensor& z, int t, const GuidanceTarget* target, StepLog* log) {
  const bool guided = target && target->beta > 0.0f && target->active(t, sched_.steps());
  if (guided && !lgp_) throw UsageError("sampler: guidance requested without a predictor");

  GuidanceGradient g;
  Tensor eps_c;
  if (guided) {
    g = guidance_gradient(z, t, run_.class_id, *target, ddpm_, *lgp_, sched_);
    eps_c = g.eps_cond;
  }
  NoGradGuard no_grad;
  if (!guided) eps_c = ddpm_.forward(z, t, run_.class_id, false).eps;
  Tensor eps = eps_c;
  if (run_.cfg_scale != 1.0f) eps = cfg_combine(eps_c, ddpm_.forward(z, t, std::nullopt, false).eps, run_.cfg_scale);

  Tensor noise;
  if (run_.stochastic && t > 1) noise = rng_.normal_tensor(z.shape());
  Tensor z_next = ddpm_reverse_step(z, eps, t, sched_, noise, run_.clip_x0);

  StepLog entry;
  entry.step = sched_.steps() - t;
  entry.t_norm = t_normalized(t, sched_);
  entry.guidance_loss = std::numeric_limits<float>::quiet_NaN();
  if (guided) {
    GuidanceStep gs = apply_guidance(z, z_next, g.grad, target->beta);
    entry.guidance_loss = g.loss;
    entry.step_norm = gs.step_norm;
    entry.grad_norm = gs.grad_norm;
    entry.alpha = gs.alpha;
    z_next = gs.z;
  } else {
    entry.step_norm = static_cast<float>(l2_dist(z.data(), z_next.data()));
  }
  if (log) *log = entry;
  return z_next;
}

SampleResult GuidedSampler::run_from(Tensor z, int t_start, const GuidanceTarget* target) {
  if (target) target->validate();
  SampleResult r;
  r.log.reserve(static_cast<size_t>(t_start));
  for (int t = t_start; t >= 1; --t) {
    StepLog entry;
    z = step(z, t, target, &entry);
    r.log.push_back(entry);
  }
  r.z0 = z;
  const Shape& s = z.shape();
  r.image = reshape(denormalize_image(z), {s[1], s[2], s[3]});
  return r;
}

SampleResult GuidedSampler::run(const GuidanceTarget* target) {
  Tensor z = initial_noise();
  return run_from(std::move(z), sched_.steps(), target);
}

SampleResult sample(const UNet& ddpm, const LatentGuidancePredictor* lgp, const GuidanceTarget* target,
                    const SampleRunConfig& run, const NoiseSchedule& sched) {
  GuidedSampler s(ddpm, lgp, sched, run);
  return s.run(target);
}

Overhead measure_overhead(const UNet& ddpm, const LatentGuidancePredictor& lgp, const GuidanceTarget& target,
                          const SampleRunConfig& run, const NoiseSchedule& sched) {
  using clock = std::chrono::steady_clock;
  Overhead o;
  auto t0 = clock::now();
  sample(ddpm, &lgp, nullptr, run, sched);
  auto t1 = clock::now();
  sample(ddpm, &lgp, &target, run, sched);
  auto t2 = clock::now();
  o.unguided_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  o.guided_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
  o.ratio = o.guided_ms / o.unguided_ms;
  return o;
}

void write_trajectory_csv(const std::string& path, const std::vector<StepLog>& log) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot open '" + path + "' for writing");
  f << kTrajectoryHeader << '\n';
  f.precision(9);
  for (const auto& e : log)
    f << e.step << ',' << e.t_norm << ',' << e.guidance_loss << ',' << e.step_norm << ',' << e.grad_norm << ','
      << e.alpha << '\n';
  if (!f) throw InputError("write to '" + path + "' failed");
}

}  // namespace lgd
