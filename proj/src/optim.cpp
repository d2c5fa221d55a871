#include "lgd/optim.hpp"

#include <cmath>

#include "lgd/errors.hpp"

namespace lgd {

AdamState AdamState::init(const std::vector<Tensor>& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(static_cast<size_t>(p.numel()), 0.0f);
    s.v.emplace_back(static_cast<size_t>(p.numel()), 0.0f);
  }
  return s;
}

void adam_step(std::vector<Tensor>& params, AdamState& state, const AdamConfig& cfg) {
  if (state.m.size() != params.size()) throw ShapeError("adam_step: state does not match parameter list");
  ++state.step;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), static_cast<double>(state.step));
  for (size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (static_cast<int64_t>(m.size()) != p.numel()) throw ShapeError("adam_step: state shape mismatch");
    const bool has = p.has_grad();
    auto data = p.mutable_data();
    const float* g = has ? p.grad().data() : nullptr;
    for (size_t i = 0; i < m.size(); ++i) {
      const float gi = g ? g[i] : 0.0f;
      m[i] = cfg.beta1 * m[i] + (1.0f - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0f - cfg.beta2) * gi * gi;
      const double mhat = m[i] / bc1, vhat = v[i] / bc2;
      data[i] -= static_cast<float>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg), state_(AdamState::init(params_)) {}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step() { adam_step(params_, state_, cfg_); }

}  // namespace lgd
