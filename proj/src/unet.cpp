#include "lgd/unet.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

#include "lgd/errors.hpp"
#include "lgd/optim.hpp"

namespace lgd {

nlohmann::json UNetConfig::to_json() const {
  return {{"in_channels", in_channels}, {"image_size", image_size}, {"base_width", base_width},
          {"depth", depth},             {"num_classes", num_classes}, {"emb_dim", emb_dim},
          {"groups", groups},           {"taps", taps}};
}

UNetConfig UNetConfig::from_json(const nlohmann::json& j) {
  UNetConfig c;
  c.in_channels = j.value("in_channels", c.in_channels);
  c.image_size = j.value("image_size", c.image_size);
  c.base_width = j.value("base_width", c.base_width);
  c.depth = j.value("depth", c.depth);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.emb_dim = j.value("emb_dim", c.emb_dim);
  c.groups = j.value("groups", c.groups);
  c.taps = j.value("taps", c.taps);
  return c;
}

std::vector<std::string> default_tap_spec(int depth) {
  std::vector<std::string> taps;
  for (int l = 0; l <= depth; ++l) taps.push_back("down" + std::to_string(l));
  taps.insert(taps.end(), {"mid0", "mid1", "mid2"});
  for (int l = depth - 1; l >= 0; --l) taps.push_back("up" + std::to_string(l));
  taps.push_back("out");
  return taps;
}

int UNet::width(int level) const { return cfg_.base_width * (level == 0 ? 1 : 2); }

UNet::ResBlock UNet::make_block(const std::string& name, int in_ch, int out_ch, Rng& rng) {
  ResBlock b;
  b.gn1 = GroupNorm::make(reg_, name + ".gn1", in_ch, cfg_.groups);
  b.conv1 = Conv2d::make(reg_, name + ".conv1", in_ch, out_ch, 3, rng);
  b.emb_proj = Linear::make(reg_, name + ".emb_proj", cfg_.emb_dim, out_ch, rng);
  b.gn2 = GroupNorm::make(reg_, name + ".gn2", out_ch, cfg_.groups);
  b.conv2 = Conv2d::make(reg_, name + ".conv2", out_ch, out_ch, 3, rng, /*zero_init=*/true);
  b.has_skip = in_ch != out_ch;
  if (b.has_skip) b.skip = Conv2d::make(reg_, name + ".skip", in_ch, out_ch, 1, rng);
  return b;
}

Tensor UNet::ResBlock::operator()(const Tensor& x, const Tensor& emb_act, Tensor* inner) const {
  Tensor h = conv1(silu(gn1(x)));
  h = add_channel_bias(h, emb_proj(emb_act));
  if (inner) *inner = h;
  h = conv2(silu(gn2(h)));
  return add(h, has_skip ? skip(x) : x);
}

UNet::UNet(UNetConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  if (cfg_.taps.empty()) cfg_.taps = default_tap_spec(cfg_.depth);
  if (cfg_.depth < 1) throw ConfigError("unet depth must be >= 1");
  if (cfg_.in_channels < 1 || cfg_.base_width < 1 || cfg_.num_classes < 1 || cfg_.emb_dim < 1)
    throw ConfigError("unet channel counts must be positive");
  if (cfg_.image_size % (1 << cfg_.depth) != 0)
    throw ConfigError("image size " + std::to_string(cfg_.image_size) + " not divisible by 2^depth");
  const auto known = default_tap_spec(cfg_.depth);
  for (const auto& t : cfg_.taps)
    if (std::find(known.begin(), known.end(), t) == known.end())
      throw ConfigError("tap '" + t + "' does not name a layer of this network");

  Rng rng(seed);
  time1_ = Linear::make(reg_, "time.fc1", cfg_.base_width, cfg_.emb_dim, rng);
  time2_ = Linear::make(reg_, "time.fc2", cfg_.emb_dim, cfg_.emb_dim, rng);
  class_table_ = reg_.add_parameter("class_embedding", rng.normal_tensor({cfg_.num_classes + 1, cfg_.emb_dim}));
  conv_in_ = Conv2d::make(reg_, "conv_in", cfg_.in_channels, width(0), 3, rng);
  for (int l = 0; l < cfg_.depth; ++l) {
    down_blocks_.push_back(make_block("down" + std::to_string(l), width(l), width(l), rng));
    down_convs_.push_back(Conv2d::make(reg_, "downsample" + std::to_string(l), width(l), width(l + 1), 3, rng));
  }
  mid0_ = make_block("mid0", width(cfg_.depth), width(cfg_.depth), rng);
  mid1_ = make_block("mid1", width(cfg_.depth), width(cfg_.depth), rng);
  up_blocks_.resize(static_cast<size_t>(cfg_.depth));
  up_projs_.resize(static_cast<size_t>(cfg_.depth));
  for (int l = cfg_.depth - 1; l >= 0; --l) {
    up_projs_[l] = Conv2d::make(reg_, "upsample" + std::to_string(l), width(l + 1), width(l), 1, rng);
    up_blocks_[l] = make_block("up" + std::to_string(l), width(l), width(l), rng);
  }
  norm_out_ = GroupNorm::make(reg_, "norm_out", width(0), cfg_.groups);
  conv_out_ = Conv2d::make(reg_, "conv_out", width(0), cfg_.in_channels, 3, rng, /*zero_init=*/true);
}

std::vector<int64_t> UNet::tap_channels() const {
  std::vector<int64_t> out;
  for (const auto& t : cfg_.taps) {
    if (t.rfind("down", 0) == 0) {
      out.push_back(width(std::stoi(t.substr(4))));
    } else if (t.rfind("mid", 0) == 0) {
      out.push_back(width(cfg_.depth));
    } else if (t.rfind("up", 0) == 0) {
      out.push_back(width(std::stoi(t.substr(2))));
    } else {
      out.push_back(width(0));
    }
  }
  return out;
}

int64_t UNet::feature_channels() const {
  int64_t s = 0;
  for (auto c : tap_channels()) s += c;
  return s;
}

Tensor step_embedding(std::span<const int> t, int dim) {
  const int half = dim / 2;
  std::vector<float> out(t.size() * static_cast<size_t>(dim), 0.0f);
  for (size_t n = 0; n < t.size(); ++n)
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / std::max(1, half));
      out[n * dim + i] = static_cast<float>(std::sin(t[n] * freq));
      out[n * dim + half + i] = static_cast<float>(std::cos(t[n] * freq));
    }
  return Tensor(Shape{static_cast<int64_t>(t.size()), dim}, std::move(out));
}

UNetOutput UNet::forward(const Tensor& z, std::span<const int> t, std::span<const int> cond,
                         bool collect_taps) const {
  if (z.rank() != 4 || z.dim(1) != cfg_.in_channels)
    throw ShapeError("unet: expected [N," + std::to_string(cfg_.in_channels) + ",H,W], got " + shape_str(z.shape()));
  const int64_t n = z.dim(0);
  if (static_cast<int64_t>(t.size()) != n || static_cast<int64_t>(cond.size()) != n)
    throw ShapeError("unet: need one step and one class id per sample");
  if (z.dim(2) % (1 << cfg_.depth) != 0 || z.dim(3) % (1 << cfg_.depth) != 0)
    throw ShapeError("unet: spatial dims must be divisible by 2^depth");
  std::vector<int> ids(cond.size());
  for (size_t i = 0; i < cond.size(); ++i) {
    if (t[i] < 1) throw RangeError("unet: step must be >= 1");
    if (cond[i] == kNullClass) {
      ids[i] = cfg_.num_classes;
    } else if (cond[i] < 0 || cond[i] >= cfg_.num_classes) {
      throw InputError("unet: unknown class id " + std::to_string(cond[i]));
    } else {
      ids[i] = cond[i];
    }
  }

  Tensor emb = time2_(silu(time1_(step_embedding(t, cfg_.base_width))));
  emb = add(emb, embedding(class_table_, ids));
  const Tensor emb_act = silu(emb);

  std::map<std::string, Tensor> tapped;
  auto tap = [&](const std::string& name, const Tensor& v) {
    if (collect_taps) tapped[name] = v;
  };

  Tensor h = conv_in_(z);
  std::vector<Tensor> skips;
  for (int l = 0; l < cfg_.depth; ++l) {
    h = down_blocks_[l](h, emb_act, nullptr);
    skips.push_back(h);
    tap("down" + std::to_string(l), h);
    h = down_convs_[l](avg_pool2d(h, 2));
  }
  tap("down" + std::to_string(cfg_.depth), h);
  h = mid0_(h, emb_act, nullptr);
  tap("mid0", h);
  Tensor inner;
  h = mid1_(h, emb_act, &inner);
  tap("mid1", inner);
  tap("mid2", h);
  for (int l = cfg_.depth - 1; l >= 0; --l) {
    h = up_projs_[l](h);
    h = resize_nearest(h, h.dim(2) * 2, h.dim(3) * 2);
    h = add(h, skips[l]);
    h = up_blocks_[l](h, emb_act, nullptr);
    tap("up" + std::to_string(l), h);
  }
  h = silu(norm_out_(h));
  tap("out", h);

  UNetOutput out;
  out.eps = conv_out_(h);
  if (collect_taps)
    for (const auto& name : cfg_.taps) out.taps.push_back(tapped.at(name));
  return out;
}

UNetOutput UNet::forward(const Tensor& z, int t, std::optional<int> cond, bool collect_taps) const {
  const int64_t n = z.rank() > 0 ? z.dim(0) : 0;
  std::vector<int> ts(static_cast<size_t>(n), t), cs(static_cast<size_t>(n), cond.value_or(kNullClass));
  return forward(z, ts, cs, collect_taps);
}

FeatureStack collect_features(const std::vector<Tensor>& taps, int64_t target_h, int64_t target_w, float t_norm) {
  if (taps.empty()) throw ShapeError("collect_features: no taps");
  std::vector<Tensor> resized;
  resized.reserve(taps.size());
  for (const auto& tp : taps) {
    if (tp.dim(2) == target_h && tp.dim(3) == target_w) {
      resized.push_back(tp);
    } else {
      resized.push_back(resize_nearest(tp, target_h, target_w));
    }
  }
  FeatureStack fs;
  fs.data = resized.size() == 1 ? resized.front() : concat_channels(resized);
  fs.t_norm = t_norm;
  return fs;
}

Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, float scale) {
  if (eps_cond.shape() != eps_uncond.shape())
    throw ShapeError("cfg_combine: " + shape_str(eps_cond.shape()) + " vs " + shape_str(eps_uncond.shape()));
  if (scale == 1.0f) return eps_cond.detach();
  const auto c = eps_cond.data(), u = eps_uncond.data();
  std::vector<float> out(c.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = u[i] + scale * (c[i] - u[i]);
  return Tensor(eps_cond.shape(), std::move(out));
}

Tensor normalize_image(const Tensor& image) {
  std::vector<float> out(image.data().begin(), image.data().end());
  for (float& v : out) v = 2.0f * v - 1.0f;
  return Tensor(image.shape(), std::move(out));
}

Tensor denormalize_image(const Tensor& z) {
  std::vector<float> out(z.data().begin(), z.data().end());
  for (float& v : out) v = std::clamp(0.5f * (v + 1.0f), 0.0f, 1.0f);
  return Tensor(z.shape(), std::move(out));
}

nlohmann::json DdpmTrainConfig::to_json() const {
  return {{"steps", steps}, {"batch", batch}, {"lr", lr}, {"cond_dropout", cond_dropout}, {"log_every", log_every}};
}

DdpmTrainConfig DdpmTrainConfig::from_json(const nlohmann::json& j) {
  DdpmTrainConfig c;
  c.steps = j.value("steps", c.steps);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.cond_dropout = j.value("cond_dropout", c.cond_dropout);
  c.log_every = j.value("log_every", c.log_every);
  return c;
}

TrainLog train_ddpm(UNet& net, std::span<const LabeledImage> corpus, const NoiseSchedule& sched,
                    const DdpmTrainConfig& cfg, Rng& rng) {
  if (corpus.empty()) throw ConfigError("train_ddpm: empty corpus");
  if (cfg.steps < 0 || cfg.batch < 1) throw ConfigError("train_ddpm: need steps >= 0 and batch >= 1");
  const auto t0 = std::chrono::steady_clock::now();
  const Shape item_shape = corpus.front().image.shape();
  const int64_t item_numel = numel_of(item_shape);
  net.registry().set_requires_grad(true);
  Adam opt(net.registry().parameter_list(), AdamConfig{cfg.lr});
  TrainLog log;

  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<float> z0(static_cast<size_t>(cfg.batch * item_numel));
    std::vector<int> ts(static_cast<size_t>(cfg.batch)), cs(static_cast<size_t>(cfg.batch));
    for (int b = 0; b < cfg.batch; ++b) {
      const auto& item = corpus[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(corpus.size()) - 1))];
      if (item.image.shape() != item_shape) throw ShapeError("train_ddpm: corpus images differ in shape");
      const auto src = item.image.data();
      for (int64_t i = 0; i < item_numel; ++i) z0[b * item_numel + i] = 2.0f * src[i] - 1.0f;
      ts[b] = sample_time(rng, sched);
      cs[b] = rng.uniform() < cfg.cond_dropout ? kNullClass : item.class_id;
    }
    Shape bshape{cfg.batch};
    bshape.insert(bshape.end(), item_shape.begin(), item_shape.end());
    Tensor xi = rng.normal_tensor(bshape);
    std::vector<float> zt(z0.size());
    const auto xs = xi.data();
    for (int b = 0; b < cfg.batch; ++b) {
      const float a = sched.alpha(ts[b]), m = sched.mu(ts[b]);
      for (int64_t i = 0; i < item_numel; ++i) zt[b * item_numel + i] = a * z0[b * item_numel + i] + m * xs[b * item_numel + i];
    }
    opt.zero_grad();
    auto out = net.forward(Tensor(bshape, std::move(zt)), ts, cs, false);
    Tensor loss = reduce_sq_err(out.eps, xi);
    const float lv = loss.item();
    backward(loss);
    opt.step();
    if (cfg.log_every > 0 && step % cfg.log_every == 0) log.losses.push_back(lv);
  }
  net.registry().zero_grad();
  net.registry().set_requires_grad(false);
  log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return log;
}

}  // namespace lgd
