#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lgd/nn.hpp"
#include "lgd/schedule.hpp"

namespace lgd {

/// Class id used for the unconditional (class-dropout) pass.
inline constexpr int kNullClass = -1;

struct UNetConfig {
  int in_channels = 1;
  int image_size = 32;
  int base_width = 32;
  int depth = 2;
  int num_classes = 4;
  int emb_dim = 128;
  int groups = 8;
  std::vector<std::string> taps;  // empty means default_tap_spec(depth)

  nlohmann::json to_json() const;
  static UNetConfig from_json(const nlohmann::json& j);
};

/// One activation per resolution on the down path ("down0".."down{depth}"),
/// the three middle-block activations ("mid0".."mid2"), and one per stage on
/// the up path ("up{depth-1}".."up0", "out").
std::vector<std::string> default_tap_spec(int depth);

struct UNetOutput {
  Tensor eps;
  std::vector<Tensor> taps;  // in tap-spec order; empty unless collected
};

/// Concatenated tap activations resized to the input resolution.
struct FeatureStack {
  Tensor data;  // [N, C_F, H, W]
  float t_norm = 0.0f;

  int64_t channels() const { return data.dim(1); }
};

/// Class-conditional toy U-Net predicting the noise eps(z_t, t, c).
class UNet {
 public:
  UNet(UNetConfig cfg, uint64_t seed);
  UNet(const UNet&) = delete;
  UNet& operator=(const UNet&) = delete;
  UNet(UNet&&) = default;
  UNet& operator=(UNet&&) = default;

  const UNetConfig& config() const { return cfg_; }
  ParamRegistry& registry() { return reg_; }
  const ParamRegistry& registry() const { return reg_; }

  /// Per-sample steps t in [1, T] and class ids (kNullClass for unconditional).
  UNetOutput forward(const Tensor& z, std::span<const int> t, std::span<const int> cond, bool collect_taps) const;
  UNetOutput forward(const Tensor& z, int t, std::optional<int> cond, bool collect_taps) const;

  const std::vector<std::string>& tap_spec() const { return cfg_.taps; }
  std::vector<int64_t> tap_channels() const;
  int64_t feature_channels() const;

 private:
  struct ResBlock {
    GroupNorm gn1, gn2;
    Conv2d conv1, conv2, skip;
    Linear emb_proj;
    bool has_skip = false;
    Tensor operator()(const Tensor& x, const Tensor& emb_act, Tensor* inner) const;
  };
  ResBlock make_block(const std::string& name, int in_ch, int out_ch, Rng& rng);
  int width(int level) const;

  UNetConfig cfg_;
  ParamRegistry reg_;
  Linear time1_, time2_;
  Tensor class_table_;
  Conv2d conv_in_, conv_out_;
  GroupNorm norm_out_;
  std::vector<ResBlock> down_blocks_, up_blocks_;
  std::vector<Conv2d> down_convs_, up_projs_;
  ResBlock mid0_, mid1_;
};

/// Sinusoidal embedding of integer steps -> [N, dim].
Tensor step_embedding(std::span<const int> t, int dim);

FeatureStack collect_features(const std::vector<Tensor>& taps, int64_t target_h, int64_t target_w, float t_norm);

/// eps_uncond + scale * (eps_cond - eps_uncond); scale 1 returns eps_cond exactly.
Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, float scale);

/// Image in [0,1] <-> diffusion space [-1,1].
Tensor normalize_image(const Tensor& image);
Tensor denormalize_image(const Tensor& z);

struct LabeledImage {
  Tensor image;  // [C,H,W] in [0,1]
  int class_id = 0;
};

struct DdpmTrainConfig {
  int steps = 3000;
  int batch = 16;
  float lr = 1e-3f;
  float cond_dropout = 0.1f;
  int log_every = 1;

  nlohmann::json to_json() const;
  static DdpmTrainConfig from_json(const nlohmann::json& j);
};

struct TrainLog {
  std::vector<float> losses;  // one per logged step
  double wall_seconds = 0.0;
};

/// Epsilon-prediction training with class dropout for classifier-free guidance.
TrainLog train_ddpm(UNet& net, std::span<const LabeledImage> corpus, const NoiseSchedule& sched,
                    const DdpmTrainConfig& cfg, Rng& rng);

}  // namespace lgd
