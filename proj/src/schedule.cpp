#include "lgd/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lgd/errors.hpp"

namespace lgd {

ScheduleKind parse_schedule_kind(const std::string& s) {
  if (s == "linear") return ScheduleKind::kLinear;
  if (s == "cosine") return ScheduleKind::kCosine;
  throw ConfigError("unknown schedule kind '" + s + "' (expected linear|cosine)");
}

std::string to_string(ScheduleKind k) { return k == ScheduleKind::kLinear ? "linear" : "cosine"; }

NoiseSchedule build_schedule(int steps, ScheduleKind kind) {
  if (steps < 2) throw ConfigError("noise schedule needs T >= 2, got " + std::to_string(steps));
  const auto T = static_cast<size_t>(steps);
  std::vector<double> beta(T), abar(T + 1);
  abar[0] = 1.0;
  if (kind == ScheduleKind::kLinear) {
    for (size_t i = 0; i < T; ++i) {
      beta[i] = 1e-4 + (2e-2 - 1e-4) * static_cast<double>(i) / static_cast<double>(T - 1);
      abar[i + 1] = abar[i] * (1.0 - beta[i]);
    }
  } else {
    constexpr double s = 0.008;
    auto f = [&](double t) {
      const double c = std::cos((t / static_cast<double>(T) + s) / (1.0 + s) * std::numbers::pi / 2.0);
      return c * c;
    };
    const double f0 = f(0.0);
    for (size_t i = 0; i < T; ++i) {
      const double b = 1.0 - (f(static_cast<double>(i + 1)) / f0) / (f(static_cast<double>(i)) / f0);
      beta[i] = std::clamp(b, 1e-8, 0.999);
      abar[i + 1] = abar[i] * (1.0 - beta[i]);
    }
  }

  NoiseSchedule out;
  out.steps_ = steps;
  out.kind_ = kind;
  out.alpha_bar_.resize(T + 1);
  out.alpha_.resize(T + 1);
  out.mu_.resize(T + 1);
  out.beta_.resize(T);
  out.coef_z0_.resize(T + 1);
  out.coef_zt_.resize(T + 1);
  for (size_t t = 0; t <= T; ++t) {
    out.alpha_bar_[t] = static_cast<float>(abar[t]);
    out.alpha_[t] = static_cast<float>(std::sqrt(abar[t]));
    out.mu_[t] = static_cast<float>(std::sqrt(1.0 - abar[t]));
  }
  for (size_t t = 1; t <= T; ++t) {
    const double b = beta[t - 1];
    out.beta_[t - 1] = static_cast<float>(b);
    out.coef_z0_[t] = static_cast<float>(b * std::sqrt(abar[t - 1]) / (1.0 - abar[t]));
    out.coef_zt_[t] = static_cast<float>((1.0 - abar[t - 1]) * std::sqrt(1.0 - b) / (1.0 - abar[t]));
  }
  return out;
}

void NoiseSchedule::check_t(int t, int lo) const {
  if (t < lo || t > steps_)
    throw RangeError("time step " + std::to_string(t) + " outside [" + std::to_string(lo) + "," +
                     std::to_string(steps_) + "]");
}

float NoiseSchedule::alpha_bar(int t) const {
  check_t(t, 0);
  return alpha_bar_[static_cast<size_t>(t)];
}
float NoiseSchedule::alpha(int t) const {
  check_t(t, 0);
  return alpha_[static_cast<size_t>(t)];
}
float NoiseSchedule::mu(int t) const {
  check_t(t, 0);
  return mu_[static_cast<size_t>(t)];
}
float NoiseSchedule::beta(int t) const {
  check_t(t, 1);
  return beta_[static_cast<size_t>(t - 1)];
}
float NoiseSchedule::posterior_coef_z0(int t) const {
  check_t(t, 1);
  return coef_z0_[static_cast<size_t>(t)];
}
float NoiseSchedule::posterior_coef_zt(int t) const {
  check_t(t, 1);
  return coef_zt_[static_cast<size_t>(t)];
}

Tensor noise_image(const Tensor& z0, int t, const Tensor& xi, const NoiseSchedule& sched) {
  if (z0.shape() != xi.shape())
    throw ShapeError("noise_image: z0 " + shape_str(z0.shape()) + " vs noise " + shape_str(xi.shape()));
  const float a = sched.alpha(t), m = sched.mu(t);
  const auto zs = z0.data(), xs = xi.data();
  std::vector<float> out(zs.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a * zs[i] + m * xs[i];
  return Tensor(z0.shape(), std::move(out));
}

int sample_time(Rng& rng, const NoiseSchedule& sched) {
  return static_cast<int>(rng.uniform_int(1, sched.steps()));
}

int step_for(float t_norm, const NoiseSchedule& sched) {
  if (!(t_norm >= 0.0f && t_norm <= 1.0f)) throw RangeError("normalized time outside [0,1]");
  return static_cast<int>(std::lround(static_cast<double>(t_norm) * sched.steps()));
}

}  // namespace lgd
