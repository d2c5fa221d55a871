#pragma once

#include <span>
#include <string>
#include <vector>

#include "lgd/tensor.hpp"

namespace lgd {

/// Mean squared difference between extract_edges(sample) and the target edges.
double eval_edge_fidelity(const Tensor& sample_image, const Tensor& target_edges, float threshold = 0.5f);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1)
  size_t n = 0;
};
MeanStd mean_std(std::span<const double> v);

/// One-sided paired sign test of H1 "a tends to be smaller than b"; ties are dropped.
struct SignTest {
  int wins = 0;    // a < b
  int losses = 0;  // a > b
  int ties = 0;
  double p_value = 1.0;  // P(X >= wins), X ~ Binomial(wins + losses, 1/2)
};
SignTest sign_test(std::span<const double> a, std::span<const double> b);

/// Upper tail P(X >= k) for X ~ Binomial(n, 1/2).
double binomial_upper_tail(int n, int k);

struct MetricsRow {
  std::string experiment;
  uint64_t seed = 0;
  double beta = 0.0;
  double stop_frac = 0.0;
  double edge_fidelity_mse = 0.0;
  double lgp_loss = 0.0;  // mean guidance loss over guided steps; NaN when unguided
  double wall_ms = 0.0;
};

inline constexpr const char* kMetricsHeader = "experiment,seed,beta,stop_frac,edge_fidelity_mse,lgp_loss,wall_ms";
std::string to_csv_line(const MetricsRow& row);
void write_metrics_csv(const std::string& path, std::span<const MetricsRow> rows);

}  // namespace lgd
