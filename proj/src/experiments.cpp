#include "lgd/experiments.hpp"

#include <atomic>
#include <chrono>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

#include "lgd/errors.hpp"

namespace lgd {

int worker_count() {
  if (const char* env = std::getenv("LGD_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<int>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(size_t n, const std::function<void(size_t)>& fn, int threads) {
  const size_t workers = std::min<size_t>(n, static_cast<size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<uint64_t> seed_range(uint64_t first, size_t count) {
  std::vector<uint64_t> s(count);
  for (size_t i = 0; i < count; ++i) s[i] = first + i;
  return s;
}

std::vector<EvalCase> make_cases(const ShapesCorpus& heldout, const Encoder& enc, std::span<const uint64_t> seeds,
                                 std::span<const int> classes) {
  std::vector<const ShapeItem*> eligible;
  for (const auto& it : heldout.items)
    if (classes.empty() || std::find(classes.begin(), classes.end(), it.class_id) != classes.end())
      eligible.push_back(&it);
  if (eligible.empty()) throw ConfigError("make_cases: no held-out items for the requested classes");
  std::vector<EvalCase> cases;
  cases.reserve(seeds.size());
  for (size_t i = 0; i < seeds.size(); ++i) {
    const ShapeItem& it = *eligible[i % eligible.size()];
    cases.push_back({seeds[i], it.class_id, it.edges, encode_map(SpatialMap{it.sketch, MapKind::kEdges}, enc)});
  }
  return cases;
}

std::vector<RunResult> run_cases(const Models& m, std::span<const EvalCase> cases,
                                 const std::optional<GuidanceSettings>& guidance, const SampleRunConfig& base) {
  std::vector<RunResult> out(cases.size());
  parallel_for(cases.size(), [&](size_t i) {
    const EvalCase& c = cases[i];
    SampleRunConfig run = base;
    run.seed = c.seed;
    run.class_id = c.class_id;
    std::optional<GuidanceTarget> target;
    if (guidance) target = GuidanceTarget{c.guide_map, guidance->loss, guidance->start_frac, guidance->stop_frac,
                                          guidance->beta};
    const auto t0 = std::chrono::steady_clock::now();
    SampleResult r = sample(m.ddpm, m.lgp, target ? &*target : nullptr, run, m.sched);
    RunResult rr;
    rr.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    rr.seed = c.seed;
    rr.image = r.image;
    rr.fidelity = eval_edge_fidelity(r.image, c.target_edges);
    double loss = 0.0;
    int guided = 0;
    for (const auto& s : r.log)
      if (!std::isnan(s.guidance_loss)) {
        loss += s.guidance_loss;
        ++guided;
      }
    rr.lgp_loss = guided ? loss / guided : std::numeric_limits<double>::quiet_NaN();
    out[i] = std::move(rr);
  });
  return out;
}

namespace {

std::vector<double> fidelities(std::span<const RunResult> runs) {
  std::vector<double> f;
  f.reserve(runs.size());
  for (const auto& r : runs) f.push_back(r.fidelity);
  return f;
}

}  // namespace

PairedEval paired_eval(const Models& m, std::span<const EvalCase> cases, const GuidanceSettings& guidance,
                       const SampleRunConfig& base) {
  PairedEval p;
  p.unguided = run_cases(m, cases, std::nullopt, base);
  p.guided = run_cases(m, cases, guidance, base);
  const auto g = fidelities(p.guided), u = fidelities(p.unguided);
  p.guided_stats = mean_std(g);
  p.unguided_stats = mean_std(u);
  p.sign = sign_test(g, u);
  return p;
}

std::vector<SweepRow> sweep_beta(const Models& m, std::span<const EvalCase> cases, std::span<const double> values,
                                 const GuidanceSettings& fixed, const SampleRunConfig& base) {
  std::vector<SweepRow> rows;
  for (double v : values) {
    if (!(v >= 0.0)) throw ConfigError("sweep_beta: values must be >= 0");
    GuidanceSettings g = fixed;
    g.beta = static_cast<float>(v);
    SweepRow row;
    row.value = v;
    row.runs = run_cases(m, cases, g, base);
    row.fidelity = mean_std(fidelities(row.runs));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<SweepRow> sweep_stop_frac(const Models& m, std::span<const EvalCase> cases, std::span<const double> values,
                                      const GuidanceSettings& fixed, const SampleRunConfig& base) {
  std::vector<SweepRow> rows;
  for (double v : values) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("sweep_stop_frac: values must lie in [0,1]");
    GuidanceSettings g = fixed;
    g.stop_frac = static_cast<float>(v);
    SweepRow row;
    row.value = v;
    // stop_frac at or above start_frac leaves an empty window: the unguided run.
    row.runs = run_cases(m, cases, g.stop_frac < g.start_frac ? std::optional(g) : std::nullopt, base);
    row.fidelity = mean_std(fidelities(row.runs));
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_sweep_csv(const std::string& path, const std::string& param, std::span<const SweepRow> rows,
                     const std::string& comment) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot open '" + path + "' for writing");
  f.precision(9);
  if (!comment.empty()) f << comment << '\n';
  f << param << ",n,mean_edge_fidelity_mse,std_edge_fidelity_mse\n";
  for (const auto& r : rows) f << r.value << ',' << r.fidelity.n << ',' << r.fidelity.mean << ',' << r.fidelity.std << '\n';
  if (!f) throw InputError("write to '" + path + "' failed");
}

void write_curve_csv(const std::string& path, std::span<const std::pair<float, float>> curve) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot open '" + path + "' for writing");
  f.precision(9);
  f << "t_norm,mse\n";
  for (const auto& [t, e] : curve) f << t << ',' << e << '\n';
  if (!f) throw InputError("write to '" + path + "' failed");
}

std::vector<MetricsRow> metrics_rows(const std::string& experiment, std::span<const RunResult> runs, double beta,
                                     double stop_frac) {
  std::vector<MetricsRow> rows;
  for (const auto& r : runs) rows.push_back({experiment, r.seed, beta, stop_frac, r.fidelity, r.lgp_loss, r.wall_ms});
  return rows;
}

}  // namespace lgd
