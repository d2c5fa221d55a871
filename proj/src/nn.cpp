#include "lgd/nn.hpp"

#include <cmath>

#include "lgd/errors.hpp"

namespace lgd {

Tensor Rng::normal_tensor(Shape shape) {
  Tensor t(std::move(shape));
  for (float& v : t.mutable_data()) v = normal();
  return t;
}

Tensor Rng::uniform_tensor(Shape shape, float lo, float hi) {
  Tensor t(std::move(shape));
  for (float& v : t.mutable_data()) v = uniform(lo, hi);
  return t;
}

Tensor ParamRegistry::add_parameter(const std::string& name, Tensor t) {
  params_.emplace_back(name, t);
  return t;
}

Tensor ParamRegistry::add_buffer(const std::string& name, Tensor t) {
  buffers_.emplace_back(name, t);
  return t;
}

std::vector<Tensor> ParamRegistry::parameter_list() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& [_, t] : params_) out.push_back(t);
  return out;
}

void ParamRegistry::set_requires_grad(bool flag) {
  for (auto& [_, t] : params_) t.set_requires_grad(flag);
}

bool ParamRegistry::any_requires_grad() const {
  for (const auto& [_, t] : params_)
    if (t.requires_grad()) return true;
  return false;
}

void ParamRegistry::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

TensorMap ParamRegistry::state() const {
  TensorMap out;
  for (const auto& [n, t] : params_) out.emplace(n, t);
  for (const auto& [n, t] : buffers_) out.emplace(n, t);
  return out;
}

void ParamRegistry::load_state(const TensorMap& state, const std::string& prefix) {
  auto load_one = [&](const std::string& name, Tensor& dst) {
    auto it = state.find(prefix + name);
    if (it == state.end()) throw LoadError("missing tensor '" + prefix + name + "'");
    if (it->second.shape() != dst.shape())
      throw LoadError("tensor '" + prefix + name + "' has shape " + shape_str(it->second.shape()) + ", expected " +
                      shape_str(dst.shape()));
    auto src = it->second.data();
    std::copy(src.begin(), src.end(), dst.mutable_data().begin());
  };
  for (auto& [n, t] : params_) load_one(n, t);
  for (auto& [n, t] : buffers_) load_one(n, t);
}

int64_t ParamRegistry::parameter_count() const {
  int64_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

Conv2d Conv2d::make(ParamRegistry& reg, const std::string& name, int in_ch, int out_ch, int kernel, Rng& rng,
                    bool zero_init) {
  Conv2d c;
  c.padding = kernel / 2;
  const float bound = zero_init ? 0.0f : std::sqrt(3.0f / static_cast<float>(in_ch * kernel * kernel));
  Tensor w = zero_init ? Tensor::zeros({out_ch, in_ch, kernel, kernel})
                       : rng.uniform_tensor({out_ch, in_ch, kernel, kernel}, -bound, bound);
  c.weight = reg.add_parameter(name + ".weight", w);
  c.bias = reg.add_parameter(name + ".bias", Tensor::zeros({out_ch}));
  return c;
}

Linear Linear::make(ParamRegistry& reg, const std::string& name, int in_dim, int out_dim, Rng& rng) {
  Linear l;
  const float bound = std::sqrt(3.0f / static_cast<float>(in_dim));
  l.weight = reg.add_parameter(name + ".weight", rng.uniform_tensor({out_dim, in_dim}, -bound, bound));
  l.bias = reg.add_parameter(name + ".bias", Tensor::zeros({out_dim}));
  return l;
}

GroupNorm GroupNorm::make(ParamRegistry& reg, const std::string& name, int channels, int groups) {
  GroupNorm g;
  g.groups = std::min(groups, channels);
  while (channels % g.groups != 0) --g.groups;
  g.gamma = reg.add_parameter(name + ".gamma", Tensor::ones({channels}));
  g.beta = reg.add_parameter(name + ".beta", Tensor::zeros({channels}));
  return g;
}

BatchNorm1d BatchNorm1d::make(ParamRegistry& reg, const std::string& name, int features) {
  BatchNorm1d b;
  b.gamma = reg.add_parameter(name + ".gamma", Tensor::ones({features}));
  b.beta = reg.add_parameter(name + ".beta", Tensor::zeros({features}));
  b.stats = RunningStats::init(features);
  reg.add_buffer(name + ".running_mean", b.stats.mean);
  reg.add_buffer(name + ".running_var", b.stats.var);
  return b;
}

Tensor BatchNorm1d::eval(const Tensor& x) const {
  // Eval mode never writes the stats; the copy shares storage.
  RunningStats s = stats;
  return batch_norm(x, gamma, beta, s, NormMode::kEval, momentum, eps);
}

}  // namespace lgd
