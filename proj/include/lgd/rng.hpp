#pragma once

#include <cstdint>
#include <random>

#include "lgd/tensor.hpp"

namespace lgd {

/// Seeded generator used everywhere randomness enters (init, data, noise).
/// Copyable, so a trajectory's stream can be snapshotted and resumed.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  float uniform() { return std::uniform_real_distribution<float>(0.0f, 1.0f)(engine_); }
  float uniform(float lo, float hi) { return std::uniform_real_distribution<float>(lo, hi)(engine_); }
  float normal() { return normal_(engine_); }
  /// Uniform integer in [lo, hi].
  int64_t uniform_int(int64_t lo, int64_t hi) { return std::uniform_int_distribution<int64_t>(lo, hi)(engine_); }
  uint64_t next_u64() { return engine_(); }

  Tensor normal_tensor(Shape shape);
  Tensor uniform_tensor(Shape shape, float lo, float hi);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<float> normal_{0.0f, 1.0f};
};

}  // namespace lgd
