// lgd: command-line front end for data generation, training, guided sampling
// and the evaluation sweeps. Exit codes: 0 success, 2 usage error, 1 runtime error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lgd/checkpoint.hpp"
#include "lgd/errors.hpp"
#include "lgd/experiments.hpp"

namespace {

using namespace lgd;
using nlohmann::json;

void write_json(const std::string& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot open '" + path + "' for writing");
  f << j.dump(2) << '\n';
  if (!f) throw InputError("write to '" + path + "' failed");
}

void write_loss_csv(const std::string& path, const TrainLog& log) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot open '" + path + "' for writing");
  f.precision(9);
  f << "step,loss\n";
  for (size_t i = 0; i < log.losses.size(); ++i) f << i << ',' << log.losses[i] << '\n';
}

json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot open config '" + path + "'");
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
}

std::vector<std::string> class_names_of(const json& ddpm_cfg, int num_classes) {
  if (ddpm_cfg.contains("classes")) return ddpm_cfg["classes"].get<std::vector<std::string>>();
  if (num_classes == static_cast<int>(kDefaultClasses.size()))
    return kDefaultClasses;
  std::vector<std::string> names;
  for (int i = 0; i < num_classes; ++i) names.push_back(std::to_string(i));
  return names;
}

int class_id_of(const std::vector<std::string>& names, const std::string& name) {
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  throw InputError("unknown class '" + name + "'");
}

double mean_of(const std::vector<float>& v, size_t from) {
  if (from >= v.size()) return 0.0;
  double s = 0.0;
  for (size_t i = from; i < v.size(); ++i) s += v[i];
  return s / static_cast<double>(v.size() - from);
}

// Options shared by the evaluation subcommands.
struct EvalOptions {
  std::string ddpm, lgp, data;
  int seeds = 32;
  uint64_t seed_base = 0;
  float beta = 1.6f, stop_frac = 0.5f, start_frac = 1.0f, cfg_scale = 8.0f;
  std::vector<std::string> classes;

  void add(CLI::App* app, int default_seeds) {
    seeds = default_seeds;
    app->add_option("--ddpm", ddpm, "Denoiser checkpoint")->required();
    app->add_option("--lgp", lgp, "Predictor checkpoint")->required();
    app->add_option("--data", data, "Held-out corpus providing target sketches")->required();
    app->add_option("--seeds", seeds, "Number of paired seeds")->capture_default_str();
    app->add_option("--seed-base", seed_base, "First seed")->capture_default_str();
    app->add_option("--beta", beta, "Guidance scale")->capture_default_str();
    app->add_option("--stop-frac", stop_frac, "Guidance stops below t/T = stop_frac")->capture_default_str();
    app->add_option("--start-frac", start_frac, "Guidance starts at t/T = start_frac")->capture_default_str();
    app->add_option("--cfg-scale", cfg_scale, "Classifier-free guidance scale")->capture_default_str();
    app->add_option("--classes", classes, "Restrict targets to these classes")->delimiter(',');
  }
};

struct EvalContext {
  LoadedUNet ddpm;
  LatentGuidancePredictor lgp;
  ShapesCorpus heldout;
  std::vector<EvalCase> cases;
  SampleRunConfig run;
  GuidanceSettings guidance;

  Models models() const { return {ddpm.net, &lgp, ddpm.sched}; }
};

EvalContext load_eval(const EvalOptions& o) {
  EvalContext c{load_unet(o.ddpm), load_lgp(o.lgp), load_corpus(o.data), {}, {}, {}};
  std::vector<int> ids;
  for (const auto& name : o.classes) ids.push_back(c.heldout.class_index(name));
  const auto seeds = seed_range(o.seed_base, static_cast<size_t>(o.seeds));
  c.cases = make_cases(c.heldout, Encoder::identity(), seeds, ids);
  c.run.steps = c.ddpm.sched.steps();
  c.run.cfg_scale = o.cfg_scale;
  c.guidance = {o.beta, o.start_frac, o.stop_frac, c.lgp.config().loss};
  return c;
}

int cmd_gen_data(const GenConfig& cfg, const std::string& out, const std::string& pgm_dir) {
  ShapesCorpus corpus = gen_dataset(cfg);
  save_corpus(out, corpus);
  std::vector<int> hist(cfg.classes.size(), 0);
  for (const auto& it : corpus.items) ++hist[static_cast<size_t>(it.class_id)];
  if (!pgm_dir.empty()) {
    std::filesystem::create_directories(pgm_dir);
    const size_t n = std::min<size_t>(corpus.items.size(), 16);
    for (size_t i = 0; i < n; ++i) {
      write_pgm(pgm_dir + "/image_" + std::to_string(i) + ".pgm", corpus.items[i].image);
      write_pgm(pgm_dir + "/sketch_" + std::to_string(i) + ".pgm", corpus.items[i].sketch);
    }
  }
  std::cout << "wrote " << corpus.items.size() << " items (" << cfg.size << "x" << cfg.size << ") to " << out << "\n";
  for (size_t i = 0; i < hist.size(); ++i) std::cout << "  " << cfg.classes[i] << ": " << hist[i] << "\n";
  return 0;
}

int cmd_train_ddpm(const std::string& data, const std::string& config, const std::string& out,
                   std::optional<int> steps, std::optional<uint64_t> seed) {
  json cfg = config.empty() ? json::object() : read_json_file(config);
  ShapesCorpus corpus = load_corpus(data);
  UNetConfig ucfg = UNetConfig::from_json(cfg.value("unet", json::object()));
  ucfg.num_classes = static_cast<int>(corpus.class_names().size());
  ucfg.image_size = corpus.config.size;
  DdpmTrainConfig tcfg = DdpmTrainConfig::from_json(cfg.value("train", json::object()));
  if (steps) tcfg.steps = *steps;
  const json sj = cfg.value("schedule", json::object());
  NoiseSchedule sched = build_schedule(sj.value("steps", 250), parse_schedule_kind(sj.value("kind", std::string("cosine"))));
  const uint64_t s = seed.value_or(cfg.value("seed", uint64_t{0}));

  UNet net(ucfg, s);
  Rng rng(s + 1);
  const auto items = labeled_images(corpus);
  TrainLog log = train_ddpm(net, items, sched, tcfg, rng);
  save_unet(out, net, sched, {{"classes", corpus.class_names()}, {"train", tcfg.to_json()}, {"seed", s}});
  write_loss_csv(out + ".loss.csv", log);
  const size_t tail = log.losses.size() > 100 ? log.losses.size() - 100 : 0;
  std::cout << "trained denoiser: " << tcfg.steps << " steps, " << net.registry().parameter_count()
            << " parameters, first loss " << (log.losses.empty() ? 0.0 : log.losses.front()) << ", final loss (mean of last "
            << log.losses.size() - tail << ") " << mean_of(log.losses, tail) << ", " << log.wall_seconds << " s\n";
  return 0;
}

int cmd_train_lgp(const std::string& data, const std::string& ddpm_path, const std::string& loss,
                  const std::string& input_mode, const std::string& target, const std::string& out,
                  const LgpTrainConfig& tcfg, uint64_t seed, const std::vector<std::string>& classes) {
  LoadedUNet ddpm = load_unet(ddpm_path);
  ShapesCorpus corpus = load_corpus(data);
  if (!classes.empty()) {
    ShapesCorpus kept;
    kept.config = corpus.config;
    for (const auto& name : classes) {
      ShapesCorpus one = filter_class(corpus, corpus.class_index(name));
      kept.items.insert(kept.items.end(), one.items.begin(), one.items.end());
    }
    corpus = std::move(kept);
  }
  LGPConfig lcfg;
  lcfg.loss = parse_loss_kind(loss);
  lcfg.input_mode = parse_input_mode(input_mode);
  lcfg.feature_channels =
      lcfg.input_mode == InputMode::kFeatures ? static_cast<int>(ddpm.net.feature_channels()) : ddpm.net.config().in_channels;
  lcfg.out_dim = lcfg.loss == LossKind::kCe ? 2 : 1;
  LatentGuidancePredictor lgp(lcfg, seed);
  Rng rng(seed + 1);
  const auto samples = lgp_samples(corpus, parse_map_kind(target), Encoder::identity());
  TrainLog log = lgp_train(lgp, samples, ddpm.net, ddpm.sched, tcfg, rng);
  save_lgp(out, lgp, {{"train", tcfg.to_json()}, {"target", target}, {"seed", seed}, {"classes", classes}});
  write_loss_csv(out + ".loss.csv", log);
  const size_t tail = log.losses.size() > 100 ? log.losses.size() - 100 : 0;
  std::cout << "trained predictor (" << loss << ", " << input_mode << ", target " << target << "): " << tcfg.steps
            << " steps on " << samples.size() << " items, final loss " << mean_of(log.losses, tail) << ", "
            << log.wall_seconds << " s\n";
  return 0;
}

struct SampleOptions {
  std::string ddpm, lgp, sketch, cls, out, trajectory;
  float beta = 1.6f, stop_frac = 0.5f, start_frac = 1.0f, cfg_scale = 8.0f;
  std::optional<int> steps;
  uint64_t seed = 0;
  bool deterministic = false;
};

int cmd_sample(const SampleOptions& o) {
  LoadedUNet ddpm = load_unet(o.ddpm);
  const auto names = class_names_of(ddpm.config, ddpm.net.config().num_classes);
  SampleRunConfig run;
  run.steps = o.steps.value_or(ddpm.sched.steps());
  run.cfg_scale = o.cfg_scale;
  run.seed = o.seed;
  run.stochastic = !o.deterministic;
  run.class_id = o.cls.empty() ? 0 : class_id_of(names, o.cls);

  std::optional<LatentGuidancePredictor> lgp;
  std::optional<GuidanceTarget> target;
  if (!o.sketch.empty()) {
    if (o.lgp.empty()) throw UsageError("--sketch needs --lgp");
    lgp.emplace(load_lgp(o.lgp));
    const Tensor sketch = read_pgm(o.sketch);
    target = GuidanceTarget{encode_map(make_spatial_map(sketch, MapKind::kSaliency), Encoder::identity()),
                            lgp->config().loss, o.start_frac, o.stop_frac, o.beta};
  }
  SampleResult r = sample(ddpm.net, lgp ? &*lgp : nullptr, target ? &*target : nullptr, run, ddpm.sched);
  write_pgm(o.out, r.image);
  if (!o.trajectory.empty()) write_trajectory_csv(o.trajectory, r.log);
  std::cout << (target ? "guided" : "unguided") << " sample of class '" << names[static_cast<size_t>(run.class_id)]
            << "' (seed " << o.seed << ", " << run.steps << " steps) written to " << o.out << "\n";
  if (target) {
    const Tensor target_edges = read_pgm(o.sketch);
    std::cout << "edge fidelity mse vs sketch: " << eval_edge_fidelity(r.image, target_edges) << "\n";
  }
  return 0;
}

int cmd_eval(const EvalOptions& o, const std::string& out) {
  EvalContext c = load_eval(o);
  PairedEval p = paired_eval(c.models(), c.cases, c.guidance, c.run);
  auto rows = metrics_rows("unguided", p.unguided, 0.0, 1.0);
  auto g = metrics_rows("guided", p.guided, o.beta, o.stop_frac);
  rows.insert(rows.end(), g.begin(), g.end());
  write_metrics_csv(out, rows);
  json summary = {{"n", c.cases.size()},
                  {"guided_mean", p.guided_stats.mean},
                  {"guided_std", p.guided_stats.std},
                  {"unguided_mean", p.unguided_stats.mean},
                  {"unguided_std", p.unguided_stats.std},
                  {"sign_wins", p.sign.wins},
                  {"sign_losses", p.sign.losses},
                  {"sign_ties", p.sign.ties},
                  {"sign_p", p.sign.p_value}};
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_sweep(const std::string& kind, const EvalOptions& o, std::vector<double> values, const std::string& out,
              const std::string& metrics_out) {
  EvalContext c = load_eval(o);
  std::vector<SweepRow> rows;
  if (kind == "beta") {
    if (values.empty()) values = {0.0, 0.2, 0.8, 1.6, 2.0};
    rows = sweep_beta(c.models(), c.cases, values, c.guidance, c.run);
    write_sweep_csv(out, "beta", rows);
  } else {
    if (values.empty()) values = {0.0, 0.25, 0.5, 0.75, 0.9};
    rows = sweep_stop_frac(c.models(), c.cases, values, c.guidance, c.run);
    write_sweep_csv(out, "stop_frac", rows, kStopFracConvention);
  }
  if (!metrics_out.empty()) {
    std::vector<MetricsRow> all;
    for (const auto& r : rows) {
      const double beta = kind == "beta" ? r.value : o.beta, stop = kind == "beta" ? o.stop_frac : r.value;
      auto m = metrics_rows("sweep_" + kind, r.runs, beta, stop);
      all.insert(all.end(), m.begin(), m.end());
    }
    write_metrics_csv(metrics_out, all);
  }
  for (const auto& r : rows)
    std::cout << (kind == "beta" ? "beta " : "stop_frac ") << r.value << ": edge fidelity mse " << r.fidelity.mean
              << " +- " << r.fidelity.std << " (n=" << r.fidelity.n << ")\n";
  return 0;
}

int cmd_lgp_curve(const std::string& ddpm_path, const std::string& lgp_path, const std::string& data,
                  std::vector<double> grid, int samples, uint64_t seed, const std::string& out) {
  LoadedUNet ddpm = load_unet(ddpm_path);
  LatentGuidancePredictor lgp = load_lgp(lgp_path);
  ShapesCorpus heldout = load_corpus(data);
  if (grid.empty()) grid = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::vector<float> g(grid.begin(), grid.end());
  const auto target = lgp.config().loss == LossKind::kBce ? MapKind::kSaliency : MapKind::kEdges;
  const auto items = lgp_samples(heldout, target, Encoder::identity());
  Rng rng(seed);
  const auto curve = lgp_error_curve(lgp, ddpm.net, items, ddpm.sched, g, samples, rng);
  write_curve_csv(out, curve);
  for (const auto& [t, e] : curve) std::cout << "t_norm " << t << ": mse " << e << "\n";
  return 0;
}

int cmd_overhead(const EvalOptions& o, const std::string& out) {
  EvalContext c = load_eval(o);
  const EvalCase& ec = c.cases.front();
  SampleRunConfig run = c.run;
  run.seed = ec.seed;
  run.class_id = ec.class_id;
  GuidanceTarget target{ec.guide_map, c.guidance.loss, c.guidance.start_frac, c.guidance.stop_frac, c.guidance.beta};
  Overhead ov = measure_overhead(c.ddpm.net, c.lgp, target, run, c.ddpm.sched);
  json j = {{"guided_ms", ov.guided_ms},
            {"unguided_ms", ov.unguided_ms},
            {"ratio", ov.ratio},
            {"overhead_percent", (ov.ratio - 1.0) * 100.0},
            {"reference_full_scale_overhead_percent", 80.0},
            {"window", {o.start_frac, o.stop_frac}}};
  write_json(out, j);
  std::cout << "guided " << ov.guided_ms << " ms, unguided " << ov.unguided_ms << " ms, ratio " << ov.ratio
            << " (overhead " << (ov.ratio - 1.0) * 100.0 << "%; reference full-scale figure ~80%)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent guidance predictor diffusion toolkit"};
  app.require_subcommand(1);

  GenConfig gen;
  std::string gen_out, gen_pgm;
  auto* g = app.add_subcommand("gen-data", "Generate the synthetic shapes corpus");
  g->add_option("--n", gen.n, "Number of items")->capture_default_str();
  g->add_option("--size", gen.size, "Image side in pixels")->capture_default_str();
  g->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  g->add_option("--classes", gen.classes, "Class names")->delimiter(',');
  g->add_flag("--hand-drawn", gen.hand_drawn, "Jitter sketches to emulate free-hand strokes");
  g->add_option("--pgm-dir", gen_pgm, "Also dump the first items as PGM files here");
  g->add_option("--out", gen_out, "Corpus file")->required();

  std::string td_data, td_config, td_out;
  std::optional<int> td_steps;
  std::optional<uint64_t> td_seed;
  auto* td = app.add_subcommand("train-ddpm", "Train the class-conditional denoiser");
  td->add_option("--data", td_data, "Corpus file")->required();
  td->add_option("--config", td_config, "JSON config with optional unet/train/schedule/seed sections");
  td->add_option("--steps", td_steps, "Override training steps");
  td->add_option("--seed", td_seed, "Override seed");
  td->add_option("--out", td_out, "Checkpoint file")->required();

  std::string tl_data, tl_ddpm, tl_loss = "sq_err", tl_mode = "features", tl_target = "edges", tl_out;
  std::vector<std::string> tl_classes;
  LgpTrainConfig tl_cfg;
  uint64_t tl_seed = 0;
  auto* tl = app.add_subcommand("train-lgp", "Train the latent guidance predictor");
  tl->add_option("--data", tl_data, "Corpus file")->required();
  tl->add_option("--ddpm", tl_ddpm, "Denoiser checkpoint")->required();
  tl->add_option("--loss", tl_loss, "Loss kind")->check(CLI::IsMember({"sq_err", "bce", "ce"}))->capture_default_str();
  tl->add_option("--input-mode", tl_mode, "Predictor input")->check(CLI::IsMember({"features", "zt"}))->capture_default_str();
  tl->add_option("--target", tl_target, "Map to predict")
      ->check(CLI::IsMember({"edges", "saliency", "labels"}))
      ->capture_default_str();
  tl->add_option("--steps", tl_cfg.steps, "Training steps")->capture_default_str();
  tl->add_option("--batch", tl_cfg.batch, "Images per step")->capture_default_str();
  tl->add_option("--lr", tl_cfg.lr, "Adam learning rate")->capture_default_str();
  tl->add_option("--pixels", tl_cfg.pixels_per_image, "Pixels sampled per image per step (0 = all)")->capture_default_str();
  tl->add_option("--seed", tl_seed, "Seed")->capture_default_str();
  tl->add_option("--classes", tl_classes, "Train only on these classes")->delimiter(',');
  tl->add_option("--out", tl_out, "Checkpoint file")->required();

  SampleOptions so;
  auto* sa = app.add_subcommand("sample", "Generate one image, guided when --sketch is given");
  sa->add_option("--ddpm", so.ddpm, "Denoiser checkpoint")->required();
  sa->add_option("--lgp", so.lgp, "Predictor checkpoint");
  sa->add_option("--sketch", so.sketch, "Target map (PGM)");
  sa->add_option("--class", so.cls, "Class name");
  sa->add_option("--beta", so.beta, "Guidance scale")->capture_default_str();
  sa->add_option("--stop-frac", so.stop_frac, "Guidance stops below t/T = stop_frac")->capture_default_str();
  sa->add_option("--start-frac", so.start_frac, "Guidance starts at t/T = start_frac")->capture_default_str();
  sa->add_option("--cfg-scale", so.cfg_scale, "Classifier-free guidance scale")->capture_default_str();
  sa->add_option("--steps", so.steps, "Reverse steps (must match the trained schedule)");
  sa->add_option("--seed", so.seed, "Seed")->capture_default_str();
  sa->add_flag("--deterministic", so.deterministic, "Posterior mean only, no injected noise");
  sa->add_option("--trajectory", so.trajectory, "Per-step CSV log");
  sa->add_option("--out", so.out, "Output PGM")->required();

  EvalOptions eo;
  std::string ev_out;
  auto* ev = app.add_subcommand("eval", "Paired guided vs unguided edge fidelity with a sign test");
  eo.add(ev, 32);
  ev->add_option("--out", ev_out, "Metrics CSV")->required();

  auto* sw = app.add_subcommand("sweep", "Parameter sweeps");
  sw->require_subcommand(1);
  EvalOptions sb, ss;
  std::vector<double> sb_values, ss_values;
  std::string sb_out, ss_out, sb_metrics, ss_metrics;
  auto* swb = sw->add_subcommand("beta", "Edge fidelity versus guidance scale");
  sb.add(swb, 16);
  swb->add_option("--values", sb_values, "Beta values")->delimiter(',');
  swb->add_option("--metrics", sb_metrics, "Per-run metrics CSV");
  swb->add_option("--out", sb_out, "Sweep CSV")->required();
  auto* sws = sw->add_subcommand("stop", "Edge fidelity versus guidance stop fraction");
  ss.add(sws, 16);
  sws->add_option("--values", ss_values, "stop_frac values")->delimiter(',');
  sws->add_option("--metrics", ss_metrics, "Per-run metrics CSV");
  sws->add_option("--out", ss_out, "Sweep CSV")->required();
  std::string lc_ddpm, lc_lgp, lc_data, lc_out;
  std::vector<double> lc_grid;
  int lc_samples = 100;
  uint64_t lc_seed = 0;
  auto* swl = sw->add_subcommand("lgp-curve", "Predictor reconstruction error versus t/T");
  swl->add_option("--ddpm", lc_ddpm, "Denoiser checkpoint")->required();
  swl->add_option("--lgp", lc_lgp, "Predictor checkpoint")->required();
  swl->add_option("--data", lc_data, "Held-out corpus")->required();
  swl->add_option("--grid", lc_grid, "t/T grid")->delimiter(',');
  swl->add_option("--samples", lc_samples, "Samples per grid point")->capture_default_str();
  swl->add_option("--seed", lc_seed, "Noise seed")->capture_default_str();
  swl->add_option("--out", lc_out, "Curve CSV")->required();

  EvalOptions oo;
  std::string ov_out;
  auto* ov = app.add_subcommand("overhead", "Guided versus unguided sampling wall-clock");
  oo.add(ov, 1);
  ov->add_option("--out", ov_out, "JSON report")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (g->parsed()) return cmd_gen_data(gen, gen_out, gen_pgm);
    if (td->parsed()) return cmd_train_ddpm(td_data, td_config, td_out, td_steps, td_seed);
    if (tl->parsed())
      return cmd_train_lgp(tl_data, tl_ddpm, tl_loss, tl_mode, tl_target, tl_out, tl_cfg, tl_seed, tl_classes);
    if (sa->parsed()) return cmd_sample(so);
    if (ev->parsed()) return cmd_eval(eo, ev_out);
    if (swb->parsed()) return cmd_sweep("beta", sb, sb_values, sb_out, sb_metrics);
    if (sws->parsed()) return cmd_sweep("stop", ss, ss_values, ss_out, ss_metrics);
    if (swl->parsed()) return cmd_lgp_curve(lc_ddpm, lc_lgp, lc_data, lc_grid, lc_samples, lc_seed, lc_out);
    if (ov->parsed()) return cmd_overhead(oo, ov_out);
  } catch (const lgd::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
