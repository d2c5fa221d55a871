#include "lgd/lgp.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

#include "lgd/errors.hpp"
#include "lgd/optim.hpp"

namespace lgd {

LossKind parse_loss_kind(const std::string& s) {
  if (s == "sq_err") return LossKind::kSqErr;
  if (s == "bce") return LossKind::kBce;
  if (s == "ce") return LossKind::kCe;
  throw ConfigError("unknown loss kind '" + s + "' (expected sq_err|bce|ce)");
}

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::kSqErr: return "sq_err";
    case LossKind::kBce: return "bce";
    case LossKind::kCe: return "ce";
  }
  return "?";
}

InputMode parse_input_mode(const std::string& s) {
  if (s == "features") return InputMode::kFeatures;
  if (s == "zt" || s == "zt_baseline") return InputMode::kZtBaseline;
  throw ConfigError("unknown input mode '" + s + "' (expected features|zt)");
}

std::string to_string(InputMode m) { return m == InputMode::kFeatures ? "features" : "zt"; }

std::array<float, kTimeDims> TimeEncoding::flat() const {
  std::array<float, kTimeDims> out{};
  out[0] = raw;
  std::copy(pe.begin(), pe.end(), out.begin() + 1);
  return out;
}

TimeEncoding time_encoding(float t_norm) {
  if (!(t_norm >= 0.0f && t_norm <= 1.0f))
    throw RangeError("time_encoding: t_norm " + std::to_string(t_norm) + " outside [0,1]");
  TimeEncoding e;
  e.raw = t_norm;
  for (int l = 0; l < kTimeFrequencies; ++l) {
    const double arg = 2.0 * std::numbers::pi * t_norm * std::ldexp(1.0, -l);
    e.pe[2 * l] = static_cast<float>(std::sin(arg));
    e.pe[2 * l + 1] = static_cast<float>(std::cos(arg));
  }
  return e;
}

nlohmann::json LGPConfig::to_json() const {
  return {{"feature_channels", feature_channels}, {"hidden", hidden},
          {"out_dim", out_dim},                   {"loss", to_string(loss)},
          {"input_mode", to_string(input_mode)}};
}

LGPConfig LGPConfig::from_json(const nlohmann::json& j) {
  LGPConfig c;
  c.feature_channels = j.value("feature_channels", c.feature_channels);
  c.hidden = j.value("hidden", c.hidden);
  c.out_dim = j.value("out_dim", c.out_dim);
  c.loss = parse_loss_kind(j.value("loss", std::string("sq_err")));
  c.input_mode = parse_input_mode(j.value("input_mode", std::string("features")));
  return c;
}

LatentGuidancePredictor::LatentGuidancePredictor(LGPConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  if (cfg_.hidden.empty()) throw ConfigError("lgp: hidden_dims must be non-empty");
  if (cfg_.out_dim < 1) throw ConfigError("lgp: out_dim must be >= 1");
  if (cfg_.feature_channels < 1) throw ConfigError("lgp: feature_channels must be >= 1");
  if (cfg_.loss == LossKind::kCe && cfg_.out_dim < 2) throw ConfigError("lgp: cross-entropy needs out_dim >= 2");
  Rng rng(seed);
  int in = cfg_.in_dim();
  for (size_t i = 0; i < cfg_.hidden.size(); ++i) {
    const std::string name = "mlp" + std::to_string(i);
    layers_.push_back(Linear::make(reg_, name + ".fc", in, cfg_.hidden[i], rng));
    norms_.push_back(BatchNorm1d::make(reg_, name + ".bn", cfg_.hidden[i]));
    in = cfg_.hidden[i];
  }
  head_ = Linear::make(reg_, "head", in, cfg_.out_dim, rng);
}

Tensor LatentGuidancePredictor::forward_rows(const Tensor& rows, NormMode mode) {
  if (rows.rank() != 2 || rows.dim(1) != cfg_.in_dim())
    throw ShapeError("lgp: expected rows [R," + std::to_string(cfg_.in_dim()) + "], got " + shape_str(rows.shape()));
  Tensor h = rows;
  for (size_t i = 0; i < layers_.size(); ++i) {
    h = relu(layers_[i](h));
    h = mode == NormMode::kTrain ? norms_[i].train(h) : norms_[i].eval(h);
  }
  return head_(h);
}

Tensor LatentGuidancePredictor::forward_rows_eval(const Tensor& rows) const {
  if (rows.rank() != 2 || rows.dim(1) != cfg_.in_dim())
    throw ShapeError("lgp: expected rows [R," + std::to_string(cfg_.in_dim()) + "], got " + shape_str(rows.shape()));
  Tensor h = rows;
  for (size_t i = 0; i < layers_.size(); ++i) h = norms_[i].eval(relu(layers_[i](h)));
  return head_(h);
}

Tensor pixel_rows_with_time(const Tensor& x, float t_norm) {
  const auto enc = time_encoding(t_norm).flat();
  const int64_t rows = x.dim(0) * x.dim(2) * x.dim(3);
  std::vector<float> tcols(static_cast<size_t>(rows * kTimeDims));
  for (int64_t r = 0; r < rows; ++r) std::copy(enc.begin(), enc.end(), tcols.begin() + r * kTimeDims);
  return concat_cols({nchw_to_rows(x), Tensor(Shape{rows, kTimeDims}, std::move(tcols))});
}

Tensor LatentGuidancePredictor::predict(const Tensor& x, float t_norm) const {
  if (x.rank() != 4 || x.dim(1) != cfg_.feature_channels)
    throw ShapeError("lgp: input has " + (x.rank() == 4 ? std::to_string(x.dim(1)) : shape_str(x.shape())) +
                     " channels, predictor expects " + std::to_string(cfg_.feature_channels));
  Tensor out = forward_rows_eval(pixel_rows_with_time(x, t_norm));
  return rows_to_nchw(out, x.dim(0), x.dim(2), x.dim(3));
}

Tensor lgp_predict(const FeatureStack& features, float t_norm, const LatentGuidancePredictor& lgp) {
  return lgp.predict(features.data, t_norm);
}

namespace {

// Two-class distribution rows (1 - p, p) from a 1-channel map.
Tensor two_class_rows(const Tensor& p_map) {
  const auto ps = p_map.data();
  const int64_t n = p_map.dim(0), hw = p_map.dim(2) * p_map.dim(3);
  std::vector<float> out(static_cast<size_t>(n * hw * 2));
  for (int64_t b = 0; b < n; ++b)
    for (int64_t i = 0; i < hw; ++i) {
      const float p = ps[b * hw + i];
      out[(b * hw + i) * 2] = 1.0f - p;
      out[(b * hw + i) * 2 + 1] = p;
    }
  return Tensor(Shape{n * hw, 2}, std::move(out));
}

}  // namespace

Tensor guidance_loss(const Tensor& prediction, const Tensor& target, LossKind kind) {
  if (prediction.rank() != 4 || target.rank() != 4 || prediction.dim(0) != target.dim(0) ||
      prediction.dim(2) != target.dim(2) || prediction.dim(3) != target.dim(3))
    throw ShapeError("guidance loss: prediction " + shape_str(prediction.shape()) + " vs target " +
                     shape_str(target.shape()));
  switch (kind) {
    case LossKind::kSqErr: return reduce_sq_err(prediction, target);
    case LossKind::kBce: return reduce_bce(prediction, target);
    case LossKind::kCe: {
      Tensor logits = nchw_to_rows(prediction);
      Tensor probs = target.dim(1) == 1 ? two_class_rows(target) : nchw_to_rows(target).detach();
      return reduce_ce(logits, probs);
    }
  }
  throw ConfigError("unknown loss kind");
}

Tensor prediction_to_map(const Tensor& prediction, LossKind kind) {
  switch (kind) {
    case LossKind::kSqErr: return prediction;
    case LossKind::kBce: return sigmoid(prediction);
    case LossKind::kCe: {
      if (prediction.rank() != 4 || prediction.dim(1) != 2)
        throw ShapeError("prediction_to_map: cross-entropy maps need 2 logit channels, got " +
                         shape_str(prediction.shape()));
      // softmax(l0, l1)[1] = sigmoid(l1 - l0).
      const int64_t n = prediction.dim(0), hw = prediction.dim(2) * prediction.dim(3);
      const auto l = prediction.data();
      std::vector<float> diff(static_cast<size_t>(n * hw));
      for (int64_t b = 0; b < n; ++b)
        for (int64_t i = 0; i < hw; ++i) diff[b * hw + i] = l[(b * 2 + 1) * hw + i] - l[b * 2 * hw + i];
      return sigmoid(Tensor(Shape{n, 1, prediction.dim(2), prediction.dim(3)}, std::move(diff)));
    }
  }
  throw ConfigError("unknown loss kind");
}

double pixel_sum_sq_err(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape()) throw ShapeError("pixel_sum_sq_err: shape mismatch");
  const int64_t n = prediction.dim(0), c = prediction.dim(1), hw = prediction.dim(2) * prediction.dim(3);
  const auto p = prediction.data(), e = target.data();
  double total = 0.0;
  for (int64_t b = 0; b < n; ++b)
    for (int64_t i = 0; i < hw; ++i) {
      double norm2 = 0.0;
      for (int64_t ch = 0; ch < c; ++ch) {
        const double d = static_cast<double>(p[(b * c + ch) * hw + i]) - e[(b * c + ch) * hw + i];
        norm2 += d * d;
      }
      total += norm2;
    }
  return total;
}

nlohmann::json LgpTrainConfig::to_json() const {
  return {{"steps", steps}, {"batch", batch}, {"lr", lr}, {"pixels_per_image", pixels_per_image},
          {"log_every", log_every}};
}

LgpTrainConfig LgpTrainConfig::from_json(const nlohmann::json& j) {
  LgpTrainConfig c;
  c.steps = j.value("steps", c.steps);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.pixels_per_image = j.value("pixels_per_image", c.pixels_per_image);
  c.log_every = j.value("log_every", c.log_every);
  return c;
}

Tensor predictor_input(const LatentGuidancePredictor& lgp, const UNet& ddpm, const Tensor& z_t,
                       std::span<const int> t, std::span<const int> cond) {
  if (lgp.config().input_mode == InputMode::kZtBaseline) return z_t;
  auto out = ddpm.forward(z_t, t, cond, true);
  return collect_features(out.taps, z_t.dim(2), z_t.dim(3), 0.0f).data;
}

namespace {

// Noisy latents for a batch of samples at per-sample steps.
Tensor noisy_batch(std::span<const LgpSample* const> items, std::span<const int> ts, const NoiseSchedule& sched,
                   Rng& rng) {
  const Shape& s = items.front()->image.shape();
  const int64_t numel = numel_of(s);
  Shape bshape{static_cast<int64_t>(items.size()), s[0], s[1], s[2]};
  Tensor xi = rng.normal_tensor(bshape);
  std::vector<float> z(static_cast<size_t>(numel) * items.size());
  const auto xs = xi.data();
  for (size_t b = 0; b < items.size(); ++b) {
    if (items[b]->image.shape() != s) throw ShapeError("lgp: dataset images differ in shape");
    const auto img = items[b]->image.data();
    const float a = sched.alpha(ts[b]), m = sched.mu(ts[b]);
    for (int64_t i = 0; i < numel; ++i)
      z[b * numel + i] = a * (2.0f * img[i] - 1.0f) + m * xs[b * numel + i];
  }
  return Tensor(bshape, std::move(z));
}

// Channel values of selected pixels of taps (nearest-resized to h x w) -> [R, sum C].
Tensor gather_pixel_features(const std::vector<Tensor>& taps, const std::vector<int64_t>& batch_idx,
                             const std::vector<int64_t>& pix, int64_t h, int64_t w) {
  int64_t ctot = 0;
  for (const auto& t : taps) ctot += t.dim(1);
  const auto rows = static_cast<int64_t>(pix.size());
  std::vector<float> out(static_cast<size_t>(rows * ctot));
  int64_t off = 0;
  for (const auto& t : taps) {
    const int64_t c = t.dim(1), th = t.dim(2), tw = t.dim(3);
    const auto d = t.data();
    for (int64_t r = 0; r < rows; ++r) {
      const int64_t y = pix[r] / w, x = pix[r] % w;
      const int64_t sy = y * th / h, sx = x * tw / w;
      const float* base = d.data() + batch_idx[r] * c * th * tw + sy * tw + sx;
      float* dst = out.data() + r * ctot + off;
      for (int64_t ch = 0; ch < c; ++ch) dst[ch] = base[ch * th * tw];
    }
    off += c;
  }
  return Tensor(Shape{rows, ctot}, std::move(out));
}

}  // namespace

TrainLog lgp_train(LatentGuidancePredictor& lgp, std::span<const LgpSample> dataset, const UNet& ddpm,
                   const NoiseSchedule& sched, const LgpTrainConfig& cfg, Rng& rng) {
  if (dataset.empty()) throw ConfigError("lgp_train: empty dataset");
  if (cfg.steps < 0 || cfg.batch < 1 || cfg.pixels_per_image < 0)
    throw ConfigError("lgp_train: need steps >= 0, batch >= 1, pixels_per_image >= 0");
  const auto& lc = lgp.config();
  const Shape& img_shape = dataset.front().image.shape();
  const int64_t h = img_shape[1], w = img_shape[2], hw = h * w;
  const int64_t expect_c = lc.input_mode == InputMode::kZtBaseline ? img_shape[0] : ddpm.feature_channels();
  if (expect_c != lc.feature_channels)
    throw ShapeError("lgp_train: predictor expects " + std::to_string(lc.feature_channels) + " input channels, source has " +
                     std::to_string(expect_c));
  const int64_t target_c = dataset.front().target.dim(0);
  if (dataset.front().target.dim(1) != h || dataset.front().target.dim(2) != w)
    throw ShapeError("lgp_train: target map dims differ from image dims");

  const auto t0 = std::chrono::steady_clock::now();
  lgp.registry().set_requires_grad(true);
  Adam opt(lgp.registry().parameter_list(), AdamConfig{cfg.lr});
  TrainLog log;
  const int64_t per_image = cfg.pixels_per_image == 0 ? hw : cfg.pixels_per_image;

  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<const LgpSample*> items(static_cast<size_t>(cfg.batch));
    std::vector<int> ts(items.size()), cs(items.size());
    for (size_t b = 0; b < items.size(); ++b) {
      items[b] = &dataset[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(dataset.size()) - 1))];
      ts[b] = sample_time(rng, sched);
      cs[b] = items[b]->class_id;
    }
    Tensor z_t = noisy_batch(items, ts, sched, rng);

    std::vector<int64_t> bidx, pix;
    bidx.reserve(static_cast<size_t>(cfg.batch * per_image));
    pix.reserve(bidx.capacity());
    for (int64_t b = 0; b < cfg.batch; ++b)
      for (int64_t k = 0; k < per_image; ++k) {
        bidx.push_back(b);
        pix.push_back(cfg.pixels_per_image == 0 ? k : rng.uniform_int(0, hw - 1));
      }

    Tensor inputs;
    {
      NoGradGuard no_grad;
      if (lc.input_mode == InputMode::kZtBaseline) {
        inputs = gather_pixel_features({z_t}, bidx, pix, h, w);
      } else {
        auto out = ddpm.forward(z_t, ts, cs, true);
        inputs = gather_pixel_features(out.taps, bidx, pix, h, w);
      }
    }
    const auto rows = static_cast<int64_t>(pix.size());
    std::vector<float> tcols(static_cast<size_t>(rows * kTimeDims));
    std::vector<float> tgt(static_cast<size_t>(rows * target_c));
    for (int64_t r = 0; r < rows; ++r) {
      const auto enc = time_encoding(t_normalized(ts[bidx[r]], sched)).flat();
      std::copy(enc.begin(), enc.end(), tcols.begin() + r * kTimeDims);
      const auto td = items[bidx[r]]->target.data();
      for (int64_t c = 0; c < target_c; ++c) tgt[r * target_c + c] = td[c * hw + pix[r]];
    }
    Tensor x = concat_cols({inputs, Tensor(Shape{rows, kTimeDims}, std::move(tcols))});
    Tensor target(Shape{rows, target_c}, std::move(tgt));

    opt.zero_grad();
    Tensor pred = lgp.forward_rows(x, NormMode::kTrain);
    Tensor loss = guidance_loss(rows_to_nchw(pred, rows, 1, 1), rows_to_nchw(target, rows, 1, 1), lc.loss);
    const float lv = loss.item();
    backward(loss);
    opt.step();
    if (cfg.log_every > 0 && step % cfg.log_every == 0) log.losses.push_back(lv);
  }
  lgp.registry().zero_grad();
  lgp.registry().set_requires_grad(false);
  log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return log;
}

std::vector<std::pair<float, float>> lgp_error_curve(const LatentGuidancePredictor& lgp, const UNet& ddpm,
                                                     std::span<const LgpSample> heldout, const NoiseSchedule& sched,
                                                     std::span<const float> t_grid, int samples_per_point, Rng& rng) {
  if (heldout.empty()) throw ConfigError("lgp_error_curve: empty held-out set");
  if (samples_per_point < 1) throw ConfigError("lgp_error_curve: samples_per_point must be >= 1");
  NoGradGuard no_grad;
  constexpr int kChunk = 16;
  std::vector<std::pair<float, float>> curve;
  size_t cursor = 0;
  for (float tn : t_grid) {
    const int t = std::max(1, step_for(tn, sched));
    double acc = 0.0;
    for (int done = 0; done < samples_per_point; done += kChunk) {
      const int n = std::min(kChunk, samples_per_point - done);
      std::vector<const LgpSample*> items(static_cast<size_t>(n));
      std::vector<int> ts(items.size(), t), cs(items.size());
      for (auto& it : items) {
        it = &heldout[cursor++ % heldout.size()];
      }
      for (size_t b = 0; b < items.size(); ++b) cs[b] = items[b]->class_id;
      Tensor z_t = noisy_batch(items, ts, sched, rng);
      Tensor pred = prediction_to_map(lgp.predict(predictor_input(lgp, ddpm, z_t, ts, cs), t_normalized(t, sched)),
                                      lgp.config().loss);
      const Shape& ts_shape = items.front()->target.shape();
      std::vector<float> tgt;
      tgt.reserve(static_cast<size_t>(n * numel_of(ts_shape)));
      for (auto* it : items) tgt.insert(tgt.end(), it->target.data().begin(), it->target.data().end());
      Tensor target(Shape{n, ts_shape[0], ts_shape[1], ts_shape[2]}, std::move(tgt));
      if (pred.shape() == target.shape()) {
        acc += static_cast<double>(reduce_sq_err(pred, target).item()) * n;
      } else {
        throw ShapeError("lgp_error_curve: prediction " + shape_str(pred.shape()) + " vs target " +
                         shape_str(target.shape()));
      }
    }
    curve.emplace_back(tn, static_cast<float>(acc / samples_per_point));
  }
  return curve;
}

}  // namespace lgd
