#include "lgd/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lgd/errors.hpp"

namespace lgd {

nlohmann::json GenConfig::to_json() const {
  return {{"n", n}, {"size", size}, {"seed", seed}, {"classes", classes}, {"hand_drawn", hand_drawn}};
}

GenConfig GenConfig::from_json(const nlohmann::json& j) {
  GenConfig c;
  c.n = j.value("n", c.n);
  c.size = j.value("size", c.size);
  c.seed = j.value("seed", c.seed);
  c.classes = j.value("classes", c.classes);
  c.hand_drawn = j.value("hand_drawn", c.hand_drawn);
  return c;
}

int ShapesCorpus::class_index(const std::string& name) const {
  const auto& cls = class_names();
  auto it = std::find(cls.begin(), cls.end(), name);
  if (it == cls.end()) throw InputError("unknown class '" + name + "'");
  return static_cast<int>(it - cls.begin());
}

namespace {

struct Vec2 {
  float x, y;
};

float cross2(Vec2 a, Vec2 b, Vec2 p) { return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x); }

bool inside(const std::string& cls, float u, float v, float r) {
  // (u, v): pixel centre in the shape's rotated frame.
  if (cls == "circle") return u * u + v * v <= r * r;
  if (cls == "square") {
    const float half = 0.8f * r;
    return std::abs(u) <= half && std::abs(v) <= half;
  }
  if (cls == "triangle") {
    Vec2 a{0.0f, -r}, b{0.866f * r, 0.5f * r}, c{-0.866f * r, 0.5f * r};
    Vec2 p{u, v};
    const float d1 = cross2(a, b, p), d2 = cross2(b, c, p), d3 = cross2(c, a, p);
    return (d1 >= 0 && d2 >= 0 && d3 >= 0) || (d1 <= 0 && d2 <= 0 && d3 <= 0);
  }
  if (cls == "cross") {
    const float arm = 0.3f * r;
    return (std::abs(u) <= arm && std::abs(v) <= r) || (std::abs(v) <= arm && std::abs(u) <= r);
  }
  throw ConfigError("no renderer for class '" + cls + "'");
}

}  // namespace

Tensor render_shape(const std::string& cls, int size, float cx, float cy, float r, float theta) {
  std::vector<float> px(static_cast<size_t>(size * size), 0.0f);
  const float c = std::cos(theta), s = std::sin(theta);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const float dx = static_cast<float>(x) + 0.5f - cx, dy = static_cast<float>(y) + 0.5f - cy;
      const float u = c * dx + s * dy, v = -s * dx + c * dy;
      if (inside(cls, u, v, r)) px[static_cast<size_t>(y * size + x)] = 1.0f;
    }
  return Tensor(Shape{1, size, size}, std::move(px));
}

Tensor jitter_strokes(const Tensor& edges, Rng& rng, float amplitude) {
  const int64_t h = edges.dim(1), w = edges.dim(2);
  const float two_pi = 2.0f * std::numbers::pi_v<float>;
  const float wl_x = rng.uniform(6.0f, 12.0f), wl_y = rng.uniform(6.0f, 12.0f);
  const float ph_x = rng.uniform(0.0f, two_pi), ph_y = rng.uniform(0.0f, two_pi);
  const auto src = edges.data();
  std::vector<float> out(static_cast<size_t>(h * w));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const float dx = amplitude * std::sin(two_pi * static_cast<float>(y) / wl_x + ph_x);
      const float dy = amplitude * std::sin(two_pi * static_cast<float>(x) / wl_y + ph_y);
      const int64_t sx = std::clamp<int64_t>(std::lround(static_cast<float>(x) + dx), 0, w - 1);
      const int64_t sy = std::clamp<int64_t>(std::lround(static_cast<float>(y) + dy), 0, h - 1);
      out[y * w + x] = src[sy * w + sx];
    }
  return Tensor(Shape{1, h, w}, std::move(out));
}

ShapesCorpus gen_dataset(const GenConfig& cfg) {
  if (cfg.n < 1) throw ConfigError("gen_dataset: n must be >= 1");
  if (cfg.size < 16) throw ConfigError("gen_dataset: size must be >= 16, got " + std::to_string(cfg.size));
  if (cfg.classes.empty()) throw ConfigError("gen_dataset: class list is empty");
  for (const auto& c : cfg.classes) (void)inside(c, 0.0f, 0.0f, 1.0f);

  ShapesCorpus corpus;
  corpus.config = cfg;
  corpus.items.reserve(static_cast<size_t>(cfg.n));
  Rng rng(cfg.seed);
  const float size = static_cast<float>(cfg.size);
  for (int i = 0; i < cfg.n; ++i) {
    ShapeItem it;
    it.class_id = i % static_cast<int>(cfg.classes.size());
    const float r = rng.uniform(0.2f, 0.34f) * size;
    const float margin = r + 1.0f;
    const float cx = rng.uniform(margin, size - margin), cy = rng.uniform(margin, size - margin);
    const float theta = rng.uniform(0.0f, 2.0f * std::numbers::pi_v<float>);
    it.image = render_shape(cfg.classes[static_cast<size_t>(it.class_id)], cfg.size, cx, cy, r, theta);
    it.edges = extract_edges(it.image).data;
    it.sketch = cfg.hand_drawn ? jitter_strokes(it.edges, rng) : it.edges;
    it.saliency = make_saliency(cfg.size, cfg.size, cx - 0.5f, cy - 0.5f, 0.6f * r).data;
    corpus.items.push_back(std::move(it));
  }
  return corpus;
}

std::vector<LabeledImage> labeled_images(const ShapesCorpus& corpus) {
  std::vector<LabeledImage> out;
  out.reserve(corpus.items.size());
  for (const auto& it : corpus.items) out.push_back({it.image, it.class_id});
  return out;
}

std::vector<LgpSample> lgp_samples(const ShapesCorpus& corpus, MapKind target, const Encoder& enc) {
  std::vector<LgpSample> out;
  out.reserve(corpus.items.size());
  for (const auto& it : corpus.items) {
    // Label targets use the object mask as the foreground probability.
    const Tensor& m = target == MapKind::kSaliency ? it.saliency : target == MapKind::kLabels ? it.image : it.edges;
    out.push_back({it.image, encode_map(SpatialMap{m, target}, enc), it.class_id});
  }
  return out;
}

ShapesCorpus filter_class(const ShapesCorpus& corpus, int class_id) {
  ShapesCorpus out;
  out.config = corpus.config;
  for (const auto& it : corpus.items)
    if (it.class_id == class_id) out.items.push_back(it);
  return out;
}

}  // namespace lgd
