#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lgd/ops.hpp"
#include "lgd/rng.hpp"
#include "lgd/tensor.hpp"

namespace lgd {

using TensorMap = std::map<std::string, Tensor>;

/// Registry of named parameters and buffers shared (by handle) with the layer
/// structs that use them. Checkpoints read and write through this registry.
/// Parameters start frozen (requires_grad = false); trainers unfreeze them for
/// the duration of training.
class ParamRegistry {
 public:
  Tensor add_parameter(const std::string& name, Tensor t);
  Tensor add_buffer(const std::string& name, Tensor t);

  const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& buffers() const { return buffers_; }
  std::vector<Tensor> parameter_list() const;

  void set_requires_grad(bool flag);
  bool any_requires_grad() const;
  void zero_grad();

  /// Parameters and buffers, keyed by name.
  TensorMap state() const;
  /// Copies values into the registered tensors; names and shapes must match exactly.
  void load_state(const TensorMap& state, const std::string& prefix = "");

  int64_t parameter_count() const;

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::pair<std::string, Tensor>> buffers_;
};

struct Conv2d {
  Tensor weight, bias;
  int stride = 1, padding = 0;

  static Conv2d make(ParamRegistry& reg, const std::string& name, int in_ch, int out_ch, int kernel, Rng& rng,
                     bool zero_init = false);
  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }
};

struct Linear {
  Tensor weight, bias;

  static Linear make(ParamRegistry& reg, const std::string& name, int in_dim, int out_dim, Rng& rng);
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};

struct GroupNorm {
  Tensor gamma, beta;
  int groups = 8;

  static GroupNorm make(ParamRegistry& reg, const std::string& name, int channels, int groups);
  Tensor operator()(const Tensor& x) const { return group_norm(x, gamma, beta, groups); }
};

struct BatchNorm1d {
  Tensor gamma, beta;
  RunningStats stats;
  float momentum = 0.1f, eps = 1e-5f;

  static BatchNorm1d make(ParamRegistry& reg, const std::string& name, int features);
  /// Train mode updates running stats in place.
  Tensor train(const Tensor& x) { return batch_norm(x, gamma, beta, stats, NormMode::kTrain, momentum, eps); }
  Tensor eval(const Tensor& x) const;
};

}  // namespace lgd
