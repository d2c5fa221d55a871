#pragma once

#include <array>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lgd/nn.hpp"
#include "lgd/schedule.hpp"
#include "lgd/unet.hpp"

namespace lgd {

enum class LossKind { kSqErr, kBce, kCe };
enum class InputMode { kFeatures, kZtBaseline };

LossKind parse_loss_kind(const std::string& s);
std::string to_string(LossKind k);
InputMode parse_input_mode(const std::string& s);
std::string to_string(InputMode m);

inline constexpr int kTimeFrequencies = 10;
inline constexpr int kTimeDims = 1 + 2 * kTimeFrequencies;  // raw t plus sin/cos pairs

/// Time input of the predictor: raw normalized t plus
/// [sin(2 pi t 2^-l), cos(2 pi t 2^-l)] for l = 0..9.
struct TimeEncoding {
  float raw = 0.0f;
  std::array<float, 2 * kTimeFrequencies> pe{};

  /// raw followed by pe, the layout appended to every pixel row.
  std::array<float, kTimeDims> flat() const;
};

TimeEncoding time_encoding(float t_norm);

struct LGPConfig {
  int feature_channels = 0;  // C_F, or latent channels in zt-baseline mode
  std::vector<int> hidden = {512, 256, 128, 64};
  int out_dim = 1;
  LossKind loss = LossKind::kSqErr;
  InputMode input_mode = InputMode::kFeatures;

  int in_dim() const { return feature_channels + kTimeDims; }
  nlohmann::json to_json() const;
  static LGPConfig from_json(const nlohmann::json& j);
};

/// Per-pixel MLP mapping (feature pixel, time encoding) to a target-map pixel.
/// Layers: Linear -> ReLU -> BatchNorm for each hidden width, then a linear head.
class LatentGuidancePredictor {
 public:
  LatentGuidancePredictor(LGPConfig cfg, uint64_t seed);
  LatentGuidancePredictor(const LatentGuidancePredictor&) = delete;
  LatentGuidancePredictor& operator=(const LatentGuidancePredictor&) = delete;
  LatentGuidancePredictor(LatentGuidancePredictor&&) = default;
  LatentGuidancePredictor& operator=(LatentGuidancePredictor&&) = default;

  const LGPConfig& config() const { return cfg_; }
  ParamRegistry& registry() { return reg_; }
  const ParamRegistry& registry() const { return reg_; }

  /// rows[R, in_dim] -> [R, out_dim]. Train mode uses and updates batch statistics.
  Tensor forward_rows(const Tensor& rows, NormMode mode);
  Tensor forward_rows_eval(const Tensor& rows) const;

  /// Applies the MLP independently at every pixel of x[N, C, H, W] (features or
  /// z_t pixels) with running batch-norm statistics -> [N, out_dim, H, W].
  Tensor predict(const Tensor& x, float t_norm) const;

 private:
  LGPConfig cfg_;
  ParamRegistry reg_;
  std::vector<Linear> layers_;
  std::vector<BatchNorm1d> norms_;
  Linear head_;
};

/// Rows [N*H*W, C + kTimeDims]: pixel channels followed by the time encoding.
Tensor pixel_rows_with_time(const Tensor& x, float t_norm);

/// Spec-level predict on a feature stack -> [N, out_dim, H, W].
Tensor lgp_predict(const FeatureStack& features, float t_norm, const LatentGuidancePredictor& lgp);

/// Loss of the configured kind between predictor outputs[N,out,H,W] and a
/// target map[N,1 or out,H,W]; for cross-entropy a 1-channel target p is read
/// as the two-class distribution (1 - p, p).
Tensor guidance_loss(const Tensor& prediction, const Tensor& target, LossKind kind);

/// Predictor output in target-map space: identity for squared error,
/// sigmoid for BCE, probability of the second class for cross-entropy.
Tensor prediction_to_map(const Tensor& prediction, LossKind kind);

/// sum over pixels of ||P_ij - E_ij||^2 (the unnormalized training objective, per sample summed over the batch).
double pixel_sum_sq_err(const Tensor& prediction, const Tensor& target);

/// One training example: an image, its encoded target map, and its class.
struct LgpSample {
  Tensor image;   // [C, H, W] in [0,1]
  Tensor target;  // [M, H, W]
  int class_id = 0;
};

struct LgpTrainConfig {
  int steps = 3000;
  int batch = 16;
  float lr = 1e-3f;
  /// Pixels drawn per image per step; 0 uses every pixel.
  int pixels_per_image = 64;
  int log_every = 1;

  nlohmann::json to_json() const;
  static LgpTrainConfig from_json(const nlohmann::json& j);
};

/// Fits the predictor on noisy features of the frozen denoiser:
/// per step sample images, t and noise, build z_t, tap the conditional U-Net
/// pass without gradient, and regress the target map per pixel.
TrainLog lgp_train(LatentGuidancePredictor& lgp, std::span<const LgpSample> dataset, const UNet& ddpm,
                   const NoiseSchedule& sched, const LgpTrainConfig& cfg, Rng& rng);

/// Mean squared reconstruction error of the predictor (mapped by
/// prediction_to_map) per normalized time,
/// fresh noise for each of `samples_per_point` draws.
std::vector<std::pair<float, float>> lgp_error_curve(const LatentGuidancePredictor& lgp, const UNet& ddpm,
                                                     std::span<const LgpSample> heldout, const NoiseSchedule& sched,
                                                     std::span<const float> t_grid, int samples_per_point, Rng& rng);

/// Predictor input for a batch of noisy latents: tapped features or, in
/// zt-baseline mode, z_t itself. Graph-connected to z_t when it requires grad.
Tensor predictor_input(const LatentGuidancePredictor& lgp, const UNet& ddpm, const Tensor& z_t,
                       std::span<const int> t, std::span<const int> cond);

}  // namespace lgd
