#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "samm2d/rng.hpp"
#include "samm2d/tensor.hpp"

namespace samm2d {

struct EncoderConfig {
  enum class InputMode { single_channel, replicate3 };
  InputMode input_mode = InputMode::single_channel;
  std::vector<int> stage_channels = {8, 16, 32, 64};
  int blocks_per_stage = 1;
  bool use_residual = true;

  void validate() const;  // >= 2 stages, strictly increasing channels
  int input_channels() const { return input_mode == InputMode::replicate3 ? 3 : 1; }
};

struct ModelConfig {
  EncoderConfig encoder;
  std::vector<int> pyramid_grids = {1, 2, 4};
  // Encoder stages feeding the pyramid (0-based); empty means all stages.
  std::vector<int> pyramid_stages = {};
  // Full MLP head [in, hidden..., 1]. Empty derives [2*D, 64, 1] from the
  // descriptor size D. When given, the first entry must equal 2*D and the
  // last must be 1.
  std::vector<int> head_dims = {};
  float dropout = 0.5f;
  bool share_encoders = false;

  std::vector<int> effective_pyramid_stages() const;
  // D = sum over selected stages of C_s * sum over grids of g^2.
  int descriptor_dim() const;
  std::vector<int> effective_head_dims() const;
  void validate() const;
};

struct ConvLayer {
  Tensor weight;  // [O,I,K,K]
  Tensor bias;    // [O]
  int stride = 1;
  int padding = 1;
};

struct ResBlock {
  ConvLayer conv1, conv2;
};

struct EncoderStage {
  ConvLayer entry;  // stride-2, halves spatial dims
  std::vector<ResBlock> blocks;
};

struct Encoder {
  std::vector<EncoderStage> stages;
};

struct LinearLayer {
  Tensor weight;  // [D,M]
  Tensor bias;    // [M]
};

struct NamedParam {
  std::string name;
  Tensor tensor;
};

struct ForwardResult {
  Tensor prob;   // [N,1], strictly in (0,1)
  Tensor logit;  // [N,1], pre-sigmoid
  std::vector<Tensor> stage_maps1, stage_maps2;
  Tensor desc1, desc2;
};

class SAMM2DModel {
 public:
  ModelConfig config;
  Encoder encoder1, encoder2;  // encoder2 aliases encoder1's tensors when shared
  std::vector<LinearLayer> head;

  // Both encoders see the same image unless a second batch is supplied
  // (hook for true CT+MR pairs). Dropout draws from `rng` in train mode only.
  ForwardResult forward(const Tensor& batch, bool train, Rng& rng,
                        const Tensor* second_batch = nullptr) const;

  std::vector<NamedParam> named_params() const;
  std::vector<Tensor> params() const;
  size_t param_count() const;
};

// He-uniform conv/linear weights, zero biases; deterministic in the rng seed.
SAMM2DModel build_model(const ModelConfig& config, Rng& rng);

// One stage map per stage, spatial dims halving each stage.
std::vector<Tensor> encode(const Encoder& encoder, const EncoderConfig& config, const Tensor& image);

// Pool each selected stage at each grid size, flatten, concatenate.
Tensor pyramid_descriptor(const std::vector<Tensor>& stage_maps, const std::vector<int>& grids,
                          const std::vector<int>& stages);

struct LayerCount {
  std::string name;
  std::vector<int> shape;
  size_t count = 0;
};
struct ParamTable {
  std::vector<LayerCount> layers;
  size_t total = 0;
};
ParamTable count_params(const SAMM2DModel& model);

// SMM2 checkpoint: magic, u16 version, length-prefixed canonical config JSON,
// per-layer named f32 blobs, trailing CRC32. Round-trip is bit-exact.
void save_checkpoint(const SAMM2DModel& model, const std::filesystem::path& path);
SAMM2DModel load_checkpoint(const std::filesystem::path& path);

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& json_text);

inline constexpr uint16_t kCheckpointVersion = 1;

}  // namespace samm2d
