#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"
#include "lgd/dataset.hpp"
#include "lgd/lgp.hpp"
#include "lgd/nn.hpp"
#include "lgd/schedule.hpp"
#include "lgd/unet.hpp"

namespace lgd {

// Layout (little-endian):
//   "LGDF" | version u32 | count u32
//   count x { name_len u32 | name bytes | rank u32 | dims u32[rank] | f32[prod(dims)] }
//   json_len u32 | json bytes
inline constexpr char kCheckpointMagic[4] = {'L', 'G', 'D', 'F'};
inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TensorMap tensors;
  nlohmann::json config = nlohmann::json::object();
};

void save_checkpoint(const std::string& path, const TensorMap& tensors, const nlohmann::json& config);
/// Throws LoadError naming the byte offset and entry on bad magic, version or truncation.
Checkpoint load_checkpoint(const std::string& path);

/// Denoiser weights plus its architecture and noise schedule.
void save_unet(const std::string& path, const UNet& net, const NoiseSchedule& sched,
               const nlohmann::json& extra = nlohmann::json::object());
struct LoadedUNet {
  UNet net;
  NoiseSchedule sched;
  nlohmann::json config;
};
LoadedUNet load_unet(const std::string& path);

void save_lgp(const std::string& path, const LatentGuidancePredictor& lgp,
              const nlohmann::json& extra = nlohmann::json::object());
LatentGuidancePredictor load_lgp(const std::string& path);

void save_corpus(const std::string& path, const ShapesCorpus& corpus);
ShapesCorpus load_corpus(const std::string& path);

}  // namespace lgd
