#include "lgd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "lgd/errors.hpp"
#include "lgd/spatial_maps.hpp"

namespace lgd {

double eval_edge_fidelity(const Tensor& sample_image, const Tensor& target_edges, float threshold) {
  if (sample_image.shape() != target_edges.shape())
    throw ShapeError("edge fidelity: sample " + shape_str(sample_image.shape()) + " vs target " +
                     shape_str(target_edges.shape()));
  const Tensor e = extract_edges(sample_image, threshold).data;
  const auto a = e.data(), b = target_edges.data();
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

MeanStd mean_std(std::span<const double> v) {
  MeanStd r;
  r.n = v.size();
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return r;
}

double binomial_upper_tail(int n, int k) {
  if (k <= 0) return 1.0;
  if (k > n) return 0.0;
  double p = 0.0;
  for (int i = k; i <= n; ++i)
    p += std::exp(std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) - n * std::log(2.0));
  return std::min(1.0, p);
}

SignTest sign_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("sign test: unpaired samples");
  SignTest s;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i] < b[i]) ++s.wins;
    else if (a[i] > b[i]) ++s.losses;
    else ++s.ties;
  }
  s.p_value = binomial_upper_tail(s.wins + s.losses, s.wins);
  return s;
}

std::string to_csv_line(const MetricsRow& row) {
  if (row.experiment.find_first_of(",\n\"") != std::string::npos)
    throw InputError("metrics experiment id must not contain commas, quotes or newlines");
  std::ostringstream os;
  os.precision(9);
  os << row.experiment << ',' << row.seed << ',' << row.beta << ',' << row.stop_frac << ',' << row.edge_fidelity_mse
     << ',' << row.lgp_loss << ',' << row.wall_ms;
  return os.str();
}

void write_metrics_csv(const std::string& path, std::span<const MetricsRow> rows) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot open '" + path + "' for writing");
  f << kMetricsHeader << '\n';
  for (const auto& r : rows) f << to_csv_line(r) << '\n';
  if (!f) throw InputError("write to '" + path + "' failed");
}

}  // namespace lgd
