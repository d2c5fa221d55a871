#pragma once

#include <vector>

#include "lgd/tensor.hpp"

namespace lgd {

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

struct AdamState {
  std::vector<std::vector<float>> m, v;
  int64_t step = 0;

  static AdamState init(const std::vector<Tensor>& params);
};

/// One bias-corrected Adam update. A parameter without a grad is treated as
/// having a zero gradient (its moments still decay).
void adam_step(std::vector<Tensor>& params, AdamState& state, const AdamConfig& cfg);

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg);
  void zero_grad();
  void step();
  const AdamState& state() const { return state_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  AdamState state_;
};

}  // namespace lgd
