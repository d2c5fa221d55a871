#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "lgd/lgp.hpp"
#include "lgd/spatial_maps.hpp"
#include "lgd/unet.hpp"

namespace lgd {

inline const std::vector<std::string> kDefaultClasses = {"circle", "square", "triangle", "cross"};

struct ShapeItem {
  Tensor image;     // [1, H, W] in [0,1]
  int class_id = 0;
  Tensor edges;     // extract_edges(image)
  Tensor sketch;    // edges, or a jittered free-hand rendition in the hand-drawn variant
  Tensor saliency;  // Gaussian blob over the object
};

struct GenConfig {
  int n = 2000;
  int size = 32;
  uint64_t seed = 0;
  std::vector<std::string> classes = kDefaultClasses;
  bool hand_drawn = false;

  nlohmann::json to_json() const;
  static GenConfig from_json(const nlohmann::json& j);
};

struct ShapesCorpus {
  GenConfig config;
  std::vector<ShapeItem> items;

  const std::vector<std::string>& class_names() const { return config.classes; }
  int class_index(const std::string& name) const;
};

/// Filled white shapes on black with random position, scale and rotation.
/// Class ids are assigned round-robin; generation is deterministic in the seed.
ShapesCorpus gen_dataset(const GenConfig& cfg);

/// Renders one shape of the named class; (cx, cy) centre, r radius in px, theta rotation.
Tensor render_shape(const std::string& cls, int size, float cx, float cy, float r, float theta);

/// Sinusoidal stroke displacement of a binary map emulating a free-hand sketch.
Tensor jitter_strokes(const Tensor& edges, Rng& rng, float amplitude = 1.0f);

std::vector<LabeledImage> labeled_images(const ShapesCorpus& corpus);

/// Predictor training triplets with the selected map as target, encoded by `enc`.
std::vector<LgpSample> lgp_samples(const ShapesCorpus& corpus, MapKind target, const Encoder& enc);

/// Items of one class only.
ShapesCorpus filter_class(const ShapesCorpus& corpus, int class_id);

}  // namespace lgd
