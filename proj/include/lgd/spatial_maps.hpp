#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lgd/nn.hpp"
#include "lgd/unet.hpp"

namespace lgd {

enum class MapKind { kEdges, kSaliency, kLabels };

MapKind parse_map_kind(const std::string& s);
std::string to_string(MapKind k);

/// Single-channel map with values in [0, 1].
struct SpatialMap {
  Tensor data;  // [1, H, W]
  MapKind kind = MapKind::kEdges;
};

/// Validates shape and range; every constructor below goes through here.
SpatialMap make_spatial_map(Tensor data, MapKind kind);

/// Sobel gradient magnitude with replicate padding -> [1, H, W], unnormalized.
Tensor sobel_magnitude(const Tensor& image);

/// Sobel magnitude normalized by its per-image maximum, binarized at `threshold`
/// (value >= threshold becomes 1). A constant image has no edges.
SpatialMap extract_edges(const Tensor& image, float threshold = 0.5f);

/// Gaussian blob exp(-d^2 / (2 sigma^2)) centred at (cx, cy), peak 1.
SpatialMap make_saliency(int64_t h, int64_t w, float cx, float cy, float sigma);

/// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct Rect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

struct LabelRegion {
  Rect rect;
  float prob = 1.0f;
};

/// Regions painted in order (later regions overwrite earlier ones) over a
/// zero background, then box-blurred with radius `blend` so neighbouring
/// probabilities interpolate linearly across a 2*blend+1 px band.
SpatialMap make_label_map(int64_t h, int64_t w, std::span<const LabelRegion> regions, int blend = 0);

enum class EncoderMode { kIdentity, kTinyAe };

/// Image-to-latent mapping E. Identity is exact; tiny_ae is a small conv
/// autoencoder with 4 latent channels at 1/4 resolution whose input is the
/// intensity channel replicated three times.
class Encoder {
 public:
  static Encoder identity();
  static Encoder tiny_ae(uint64_t seed);

  Encoder(const Encoder&) = delete;
  Encoder& operator=(const Encoder&) = delete;
  Encoder(Encoder&&) = default;
  Encoder& operator=(Encoder&&) = default;

  EncoderMode mode() const { return mode_; }
  int latent_channels() const { return mode_ == EncoderMode::kIdentity ? 1 : 4; }
  int downsample() const { return mode_ == EncoderMode::kIdentity ? 1 : 4; }
  static constexpr int kAeInputChannels = 3;

  /// x[N, 1, H, W] in [0,1] -> latent [N, latent_channels, H/d, W/d].
  Tensor encode(const Tensor& x) const;
  /// Latent -> [N, 1, H, W]; tiny_ae averages its three output channels.
  Tensor decode(const Tensor& z) const;
  /// Three identical intensity channels, the tiny_ae input.
  static Tensor replicate_channels(const Tensor& x);
  /// tiny_ae decoder output before channel averaging -> [N, 3, H, W].
  Tensor decode_rgb(const Tensor& z) const;

  ParamRegistry& registry() { return reg_; }
  const ParamRegistry& registry() const { return reg_; }

 private:
  explicit Encoder(EncoderMode mode) : mode_(mode) {}

  EncoderMode mode_;
  ParamRegistry reg_;
  Conv2d e1_, e2_, e3_, d1_, d2_, d3_;
};

/// Encoded map E(m) -> [latent_channels, H/d, W/d].
Tensor encode_map(const SpatialMap& m, const Encoder& enc);

struct AeTrainConfig {
  int steps = 1500;
  int batch = 16;
  float lr = 2e-3f;
};

/// Reconstruction squared-error training of a tiny_ae encoder on [1, H, W] images.
TrainLog train_tiny_ae(Encoder& enc, std::span<const Tensor> images, const AeTrainConfig& cfg, Rng& rng);

/// 8-bit binary PGM (P5); values scaled by 255 and rounded.
void write_pgm(const std::string& path, const Tensor& image);
/// Returns [1, H, W] in [0, 1].
Tensor read_pgm(const std::string& path);

}  // namespace lgd
