#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lgd/dataset.hpp"
#include "lgd/metrics.hpp"
#include "lgd/sampler.hpp"

namespace lgd {

/// LGD_THREADS if set and positive, otherwise hardware concurrency (at least 1).
int worker_count();

/// Runs fn(0..n-1) across `threads` workers; each index runs exactly once.
void parallel_for(size_t n, const std::function<void(size_t)>& fn, int threads = worker_count());

/// One paired evaluation trajectory: a seed, the class to generate, the edges
/// the result is scored against and the encoded map that guides it.
struct EvalCase {
  uint64_t seed = 0;
  int class_id = 0;
  Tensor target_edges;  // [1, H, W]
  Tensor guide_map;     // [M, H, W]
};

/// Case i takes seed i and the i-th eligible held-out item (cycling). The
/// guide map is the item's sketch encoded by `enc`; `classes` restricts the
/// eligible items when non-empty.
std::vector<EvalCase> make_cases(const ShapesCorpus& heldout, const Encoder& enc, std::span<const uint64_t> seeds,
                                 std::span<const int> classes = {});

std::vector<uint64_t> seed_range(uint64_t first, size_t count);

struct GuidanceSettings {
  float beta = 1.6f;
  float start_frac = 1.0f;
  float stop_frac = 0.5f;
  LossKind loss = LossKind::kSqErr;
};

struct RunResult {
  uint64_t seed = 0;
  double fidelity = 0.0;
  double lgp_loss = 0.0;
  double wall_ms = 0.0;
  Tensor image;
};

struct Models {
  const UNet& ddpm;
  const LatentGuidancePredictor* lgp;
  const NoiseSchedule& sched;
};

/// Samples every case (guided when `guidance` is set) and scores edge fidelity.
std::vector<RunResult> run_cases(const Models& m, std::span<const EvalCase> cases,
                                 const std::optional<GuidanceSettings>& guidance, const SampleRunConfig& base);

struct PairedEval {
  std::vector<RunResult> guided, unguided;
  MeanStd guided_stats, unguided_stats;
  SignTest sign;
};

PairedEval paired_eval(const Models& m, std::span<const EvalCase> cases, const GuidanceSettings& guidance,
                       const SampleRunConfig& base);

struct SweepRow {
  double value = 0.0;
  MeanStd fidelity;
  std::vector<RunResult> runs;
};

std::vector<SweepRow> sweep_beta(const Models& m, std::span<const EvalCase> cases, std::span<const double> values,
                                 const GuidanceSettings& fixed, const SampleRunConfig& base);
std::vector<SweepRow> sweep_stop_frac(const Models& m, std::span<const EvalCase> cases, std::span<const double> values,
                                      const GuidanceSettings& fixed, const SampleRunConfig& base);

inline constexpr const char* kStopFracConvention =
    "# stop_frac = S/T: guidance active while stop_frac <= t/T <= start_frac; smaller stop_frac guides more steps";
/// Optional '#' comment line, then "<param>,n,mean_edge_fidelity_mse,std_edge_fidelity_mse".
void write_sweep_csv(const std::string& path, const std::string& param, std::span<const SweepRow> rows,
                     const std::string& comment = "");
/// "t_norm,mse" rows.
void write_curve_csv(const std::string& path, std::span<const std::pair<float, float>> curve);

std::vector<MetricsRow> metrics_rows(const std::string& experiment, std::span<const RunResult> runs, double beta,
                                     double stop_frac);

}  // namespace lgd
