#include "lgd/spatial_maps.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "lgd/errors.hpp"
#include "lgd/optim.hpp"

namespace lgd {

MapKind parse_map_kind(const std::string& s) {
  if (s == "edges") return MapKind::kEdges;
  if (s == "saliency") return MapKind::kSaliency;
  if (s == "labels") return MapKind::kLabels;
  throw ConfigError("unknown map kind '" + s + "' (expected edges|saliency|labels)");
}

std::string to_string(MapKind k) {
  switch (k) {
    case MapKind::kEdges: return "edges";
    case MapKind::kSaliency: return "saliency";
    case MapKind::kLabels: return "labels";
  }
  return "?";
}

SpatialMap make_spatial_map(Tensor data, MapKind kind) {
  if (data.rank() != 3 || data.dim(0) != 1) throw ShapeError("spatial map must be [1,H,W], got " + shape_str(data.shape()));
  for (float v : data.data())
    if (!(v >= 0.0f && v <= 1.0f)) throw DomainError("spatial map value " + std::to_string(v) + " outside [0,1]");
  if (kind == MapKind::kEdges)
    for (float v : data.data())
      if (v != 0.0f && v != 1.0f) throw DomainError("edge map must be binary");
  return SpatialMap{std::move(data), kind};
}

Tensor sobel_magnitude(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 1) throw ShapeError("sobel: image must be [1,H,W], got " + shape_str(image.shape()));
  const int64_t h = image.dim(1), w = image.dim(2);
  const auto px = image.data();
  auto at = [&](int64_t y, int64_t x) {
    y = std::clamp<int64_t>(y, 0, h - 1);
    x = std::clamp<int64_t>(x, 0, w - 1);
    return px[y * w + x];
  };
  std::vector<float> out(static_cast<size_t>(h * w));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const float gx = (at(y - 1, x + 1) + 2.0f * at(y, x + 1) + at(y + 1, x + 1)) -
                       (at(y - 1, x - 1) + 2.0f * at(y, x - 1) + at(y + 1, x - 1));
      const float gy = (at(y + 1, x - 1) + 2.0f * at(y + 1, x) + at(y + 1, x + 1)) -
                       (at(y - 1, x - 1) + 2.0f * at(y - 1, x) + at(y - 1, x + 1));
      out[y * w + x] = std::sqrt(gx * gx + gy * gy);
    }
  return Tensor(Shape{1, h, w}, std::move(out));
}

SpatialMap extract_edges(const Tensor& image, float threshold) {
  Tensor mag = sobel_magnitude(image);
  auto m = mag.mutable_data();
  const float peak = *std::max_element(m.begin(), m.end());
  for (float& v : m) v = (peak > 0.0f && v / peak >= threshold) ? 1.0f : 0.0f;
  return make_spatial_map(std::move(mag), MapKind::kEdges);
}

SpatialMap make_saliency(int64_t h, int64_t w, float cx, float cy, float sigma) {
  if (!(sigma > 0.0f)) throw ConfigError("saliency sigma must be > 0");
  std::vector<float> out(static_cast<size_t>(h * w));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const float dx = static_cast<float>(x) - cx, dy = static_cast<float>(y) - cy;
      out[y * w + x] = std::exp(-(dx * dx + dy * dy) / (2.0f * sigma * sigma));
    }
  return make_spatial_map(Tensor(Shape{1, h, w}, std::move(out)), MapKind::kSaliency);
}

namespace {

// Separable box filter with replicate padding along one axis.
std::vector<float> box_blur_axis(const std::vector<float>& in, int64_t h, int64_t w, int r, bool horizontal) {
  std::vector<float> out(in.size());
  const float inv = 1.0f / static_cast<float>(2 * r + 1);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      float s = 0.0f;
      for (int k = -r; k <= r; ++k) {
        const int64_t yy = horizontal ? y : std::clamp<int64_t>(y + k, 0, h - 1);
        const int64_t xx = horizontal ? std::clamp<int64_t>(x + k, 0, w - 1) : x;
        s += in[yy * w + xx];
      }
      out[y * w + x] = s * inv;
    }
  return out;
}

}  // namespace

SpatialMap make_label_map(int64_t h, int64_t w, std::span<const LabelRegion> regions, int blend) {
  if (h < 1 || w < 1) throw ConfigError("label map dims must be positive");
  if (blend < 0) throw ConfigError("label map blend radius must be >= 0");
  std::vector<float> m(static_cast<size_t>(h * w), 0.0f);
  for (const auto& r : regions) {
    if (!(r.prob >= 0.0f && r.prob <= 1.0f)) throw DomainError("label probability outside [0,1]");
    for (int64_t y = std::max(0, r.rect.y0); y < std::min<int64_t>(h, r.rect.y1); ++y)
      for (int64_t x = std::max(0, r.rect.x0); x < std::min<int64_t>(w, r.rect.x1); ++x) m[y * w + x] = r.prob;
  }
  if (blend > 0) m = box_blur_axis(box_blur_axis(m, h, w, blend, true), h, w, blend, false);
  for (float& v : m) v = std::clamp(v, 0.0f, 1.0f);
  return make_spatial_map(Tensor(Shape{1, h, w}, std::move(m)), MapKind::kLabels);
}

Encoder Encoder::identity() { return Encoder(EncoderMode::kIdentity); }

Encoder Encoder::tiny_ae(uint64_t seed) {
  Encoder e(EncoderMode::kTinyAe);
  Rng rng(seed);
  constexpr int kW = 32;
  e.e1_ = Conv2d::make(e.reg_, "enc.conv1", kAeInputChannels, kW, 3, rng);
  e.e2_ = Conv2d::make(e.reg_, "enc.conv2", kW, kW, 3, rng);
  e.e3_ = Conv2d::make(e.reg_, "enc.conv3", kW, 4, 3, rng);
  e.d1_ = Conv2d::make(e.reg_, "dec.conv1", 4, kW, 3, rng);
  e.d2_ = Conv2d::make(e.reg_, "dec.conv2", kW, kW, 3, rng);
  e.d3_ = Conv2d::make(e.reg_, "dec.conv3", kW, kAeInputChannels, 3, rng);
  return e;
}

Tensor Encoder::replicate_channels(const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != 1) throw ShapeError("replicate_channels: expected [N,1,H,W], got " + shape_str(x.shape()));
  return concat_channels({x, x, x});
}

Tensor Encoder::encode(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != 1) throw ShapeError("encoder: expected [N,1,H,W], got " + shape_str(x.shape()));
  if (mode_ == EncoderMode::kIdentity) return x;
  if (x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0) throw ShapeError("tiny_ae: spatial dims must be divisible by 4");
  Tensor h = avg_pool2d(silu(e1_(replicate_channels(x))), 2);
  h = avg_pool2d(silu(e2_(h)), 2);
  return e3_(h);
}

Tensor Encoder::decode_rgb(const Tensor& z) const {
  if (mode_ != EncoderMode::kTinyAe) throw UsageError("decode_rgb is only defined for tiny_ae");
  if (z.rank() != 4 || z.dim(1) != 4) throw ShapeError("tiny_ae decode: expected [N,4,h,w], got " + shape_str(z.shape()));
  Tensor h = silu(d1_(z));
  h = resize_nearest(h, h.dim(2) * 2, h.dim(3) * 2);
  h = silu(d2_(h));
  h = resize_nearest(h, h.dim(2) * 2, h.dim(3) * 2);
  return d3_(h);
}

Tensor Encoder::decode(const Tensor& z) const {
  if (mode_ == EncoderMode::kIdentity) return z;
  Tensor rgb = decode_rgb(z);
  const int64_t n = rgb.dim(0), hw = rgb.dim(2) * rgb.dim(3);
  const auto d = rgb.data();
  std::vector<float> out(static_cast<size_t>(n * hw));
  for (int64_t b = 0; b < n; ++b)
    for (int64_t i = 0; i < hw; ++i)
      out[b * hw + i] = (d[(b * 3) * hw + i] + d[(b * 3 + 1) * hw + i] + d[(b * 3 + 2) * hw + i]) / 3.0f;
  return Tensor(Shape{n, 1, rgb.dim(2), rgb.dim(3)}, std::move(out));
}

Tensor encode_map(const SpatialMap& m, const Encoder& enc) {
  const Shape& s = m.data.shape();
  NoGradGuard no_grad;
  Tensor z = enc.encode(reshape(m.data, {1, s[0], s[1], s[2]}));
  return reshape(z, {z.dim(1), z.dim(2), z.dim(3)});
}

TrainLog train_tiny_ae(Encoder& enc, std::span<const Tensor> images, const AeTrainConfig& cfg, Rng& rng) {
  if (enc.mode() != EncoderMode::kTinyAe) throw UsageError("train_tiny_ae needs a tiny_ae encoder");
  if (images.empty()) throw ConfigError("train_tiny_ae: empty corpus");
  const Shape& s = images.front().shape();
  const auto t0 = std::chrono::steady_clock::now();
  enc.registry().set_requires_grad(true);
  Adam opt(enc.registry().parameter_list(), AdamConfig{cfg.lr});
  TrainLog log;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<float> batch;
    batch.reserve(static_cast<size_t>(cfg.batch * numel_of(s)));
    for (int b = 0; b < cfg.batch; ++b) {
      const Tensor& img = images[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(images.size()) - 1))];
      batch.insert(batch.end(), img.data().begin(), img.data().end());
    }
    Tensor x(Shape{cfg.batch, s[0], s[1], s[2]}, std::move(batch));
    opt.zero_grad();
    Tensor loss = reduce_sq_err(enc.decode_rgb(enc.encode(x)), Encoder::replicate_channels(x));
    log.losses.push_back(loss.item());
    backward(loss);
    opt.step();
  }
  enc.registry().zero_grad();
  enc.registry().set_requires_grad(false);
  log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return log;
}

void write_pgm(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 1) throw ShapeError("write_pgm: expected [1,H,W], got " + shape_str(image.shape()));
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open '" + path + "' for writing");
  f << "P5\n" << image.dim(2) << ' ' << image.dim(1) << "\n255\n";
  std::vector<unsigned char> bytes;
  bytes.reserve(static_cast<size_t>(image.numel()));
  for (float v : image.data()) bytes.push_back(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw InputError("write to '" + path + "' failed");
}

Tensor read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open '" + path + "'");
  auto token = [&]() {
    std::string tok;
    while (f) {
      const int c = f.peek();
      if (c == '#') {
        std::string line;
        std::getline(f, line);
      } else if (std::isspace(c)) {
        f.get();
      } else {
        break;
      }
    }
    f >> tok;
    return tok;
  };
  if (token() != "P5") throw InputError("'" + path + "' is not a binary PGM (P5)");
  int64_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoll(token());
    h = std::stoll(token());
    maxval = std::stoll(token());
  } catch (const std::exception&) {
    throw InputError("'" + path + "': malformed PGM header");
  }
  if (w < 1 || h < 1 || maxval < 1 || maxval > 255) throw InputError("'" + path + "': unsupported PGM dims or maxval");
  f.get();
  std::vector<unsigned char> bytes(static_cast<size_t>(w * h));
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (f.gcount() != static_cast<std::streamsize>(bytes.size())) throw InputError("'" + path + "': truncated PGM payload");
  std::vector<float> out(bytes.size());
  for (size_t i = 0; i < bytes.size(); ++i) out[i] = static_cast<float>(bytes[i]) / static_cast<float>(maxval);
  return Tensor(Shape{1, h, w}, std::move(out));
}

}  // namespace lgd
