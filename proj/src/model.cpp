#include "samm2d/model.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "samm2d/volume.hpp"

namespace samm2d {

namespace {

using json = nlohmann::json;

Tensor he_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / (double)fan_in);
  size_t n = 1;
  for (int d : shape) n *= (size_t)d;
  std::vector<float> data(n);
  for (auto& v : data) v = (float)rng.uniform(-bound, bound);
  return Tensor::from_data(std::move(shape), std::move(data), /*requires_grad=*/true);
}

ConvLayer make_conv(int in_ch, int out_ch, int stride, Rng& rng) {
  ConvLayer layer;
  layer.weight = he_uniform({out_ch, in_ch, 3, 3}, in_ch * 9, rng);
  layer.bias = Tensor::zeros({out_ch}, /*requires_grad=*/true);
  layer.stride = stride;
  layer.padding = 1;
  return layer;
}

Encoder make_encoder(const EncoderConfig& cfg, Rng& rng) {
  Encoder enc;
  int in_ch = cfg.input_channels();
  for (int ch : cfg.stage_channels) {
    EncoderStage stage;
    stage.entry = make_conv(in_ch, ch, /*stride=*/2, rng);
    for (int b = 0; b < cfg.blocks_per_stage; ++b) {
      ResBlock block;
      block.conv1 = make_conv(ch, ch, 1, rng);
      block.conv2 = make_conv(ch, ch, 1, rng);
      stage.blocks.push_back(std::move(block));
    }
    enc.stages.push_back(std::move(stage));
    in_ch = ch;
  }
  return enc;
}

void collect_encoder_params(const char* prefix, const Encoder& enc, std::vector<NamedParam>& out) {
  for (size_t s = 0; s < enc.stages.size(); ++s) {
    const std::string base = std::string(prefix) + ".stage" + std::to_string(s);
    out.push_back({base + ".entry.weight", enc.stages[s].entry.weight});
    out.push_back({base + ".entry.bias", enc.stages[s].entry.bias});
    for (size_t b = 0; b < enc.stages[s].blocks.size(); ++b) {
      const std::string bb = base + ".block" + std::to_string(b);
      out.push_back({bb + ".conv1.weight", enc.stages[s].blocks[b].conv1.weight});
      out.push_back({bb + ".conv1.bias", enc.stages[s].blocks[b].conv1.bias});
      out.push_back({bb + ".conv2.weight", enc.stages[s].blocks[b].conv2.weight});
      out.push_back({bb + ".conv2.bias", enc.stages[s].blocks[b].conv2.bias});
    }
  }
}

}  // namespace

void EncoderConfig::validate() const {
  if (stage_channels.size() < 2) throw ConfigError("encoder: need >= 2 stages");
  for (size_t i = 1; i < stage_channels.size(); ++i)
    if (stage_channels[i] <= stage_channels[i - 1])
      throw ConfigError("encoder: stage channels must be strictly increasing");
  if (stage_channels[0] <= 0) throw ConfigError("encoder: channels must be positive");
  if (blocks_per_stage < 0) throw ConfigError("encoder: blocks_per_stage must be >= 0");
}

std::vector<int> ModelConfig::effective_pyramid_stages() const {
  if (!pyramid_stages.empty()) return pyramid_stages;
  std::vector<int> all((size_t)encoder.stage_channels.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = (int)i;
  return all;
}

int ModelConfig::descriptor_dim() const {
  int cells = 0;
  for (int g : pyramid_grids) cells += g * g;
  int dim = 0;
  for (int s : effective_pyramid_stages()) dim += encoder.stage_channels[(size_t)s] * cells;
  return dim;
}

std::vector<int> ModelConfig::effective_head_dims() const {
  if (!head_dims.empty()) return head_dims;
  return {2 * descriptor_dim(), 64, 1};
}

void ModelConfig::validate() const {
  encoder.validate();
  if (pyramid_grids.empty()) throw ConfigError("model: pyramid_grids must not be empty");
  for (int g : pyramid_grids)
    if (g < 1) throw ConfigError("model: pyramid grids must be >= 1");
  for (int s : effective_pyramid_stages())
    if (s < 0 || s >= (int)encoder.stage_channels.size())
      throw ConfigError("model: pyramid stage index " + std::to_string(s) + " out of range");
  const auto dims = effective_head_dims();
  if (dims.size() < 2) throw ConfigError("model: head needs at least [in, 1]");
  if (dims.front() != 2 * descriptor_dim())
    throw ConfigError("model: head input dim " + std::to_string(dims.front()) +
                      " != 2 x descriptor dim " + std::to_string(2 * descriptor_dim()));
  if (dims.back() != 1) throw ConfigError("model: head must end in a single logit");
  if (dropout < 0.0f || dropout >= 1.0f) throw ConfigError("model: dropout must be in [0,1)");
}

SAMM2DModel build_model(const ModelConfig& config, Rng& rng) {
  config.validate();
  SAMM2DModel model;
  model.config = config;
  model.encoder1 = make_encoder(config.encoder, rng);
  model.encoder2 = config.share_encoders ? model.encoder1 : make_encoder(config.encoder, rng);
  const auto dims = config.effective_head_dims();
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    LinearLayer layer;
    layer.weight = he_uniform({dims[i], dims[i + 1]}, dims[i], rng);
    layer.bias = Tensor::zeros({dims[i + 1]}, /*requires_grad=*/true);
    model.head.push_back(std::move(layer));
  }
  return model;
}

std::vector<Tensor> encode(const Encoder& encoder, const EncoderConfig& config, const Tensor& image) {
  if (image.ndim() != 4) throw ShapeError("encode: batch must be NCHW");
  if (image.dim(1) != config.input_channels())
    throw ShapeError("encode: expected " + std::to_string(config.input_channels()) +
                     " channels, got " + std::to_string(image.dim(1)));
  const int min_dim = std::min(image.dim(2), image.dim(3));
  if (min_dim < (1 << encoder.stages.size()))
    throw ShapeError("encode: image " + std::to_string(min_dim) + " too small for " +
                     std::to_string(encoder.stages.size()) + " halving stages");

  std::vector<Tensor> maps;
  Tensor x = image;
  for (const EncoderStage& stage : encoder.stages) {
    x = relu(conv2d(x, stage.entry.weight, stage.entry.bias, stage.entry.stride,
                    stage.entry.padding));
    for (const ResBlock& block : stage.blocks) {
      Tensor y = relu(conv2d(x, block.conv1.weight, block.conv1.bias, 1, block.conv1.padding));
      y = conv2d(y, block.conv2.weight, block.conv2.bias, 1, block.conv2.padding);
      if (config.use_residual) y = add(y, x);
      x = relu(y);
    }
    maps.push_back(x);
  }
  return maps;
}

Tensor pyramid_descriptor(const std::vector<Tensor>& stage_maps, const std::vector<int>& grids,
                          const std::vector<int>& stages) {
  Tensor out;
  for (int s : stages) {
    if (s < 0 || s >= (int)stage_maps.size())
      throw ShapeError("pyramid_descriptor: stage index out of range");
    const Tensor& map = stage_maps[(size_t)s];
    const int N = map.dim(0), C = map.dim(1);
    for (int g : grids) {
      Tensor pooled = adaptive_avg_pool_grid(map, g);
      Tensor flat = reshape(pooled, {N, C * g * g});
      out = out.defined() ? concat(out, flat) : flat;
    }
  }
  return out;
}

ForwardResult SAMM2DModel::forward(const Tensor& batch, bool train, Rng& rng,
                                   const Tensor* second_batch) const {
  Tensor in1 = batch;
  Tensor in2 = second_batch ? *second_batch : batch;
  if (config.encoder.input_mode == EncoderConfig::InputMode::replicate3) {
    in1 = replicate_channels(in1, 3);
    in2 = second_batch ? replicate_channels(in2, 3) : in1;
  }

  ForwardResult result;
  result.stage_maps1 = encode(encoder1, config.encoder, in1);
  result.stage_maps2 = encode(encoder2, config.encoder, in2);
  const auto stages = config.effective_pyramid_stages();
  result.desc1 = pyramid_descriptor(result.stage_maps1, config.pyramid_grids, stages);
  result.desc2 = pyramid_descriptor(result.stage_maps2, config.pyramid_grids, stages);

  Tensor x = concat(result.desc1, result.desc2);
  for (size_t i = 0; i < head.size(); ++i) {
    x = linear(x, head[i].weight, head[i].bias);
    if (i + 1 < head.size()) {
      x = relu(x);
      x = dropout(x, config.dropout, train, rng);
    }
  }
  result.logit = x;
  result.prob = sigmoid(x);
  return result;
}

std::vector<NamedParam> SAMM2DModel::named_params() const {
  std::vector<NamedParam> out;
  collect_encoder_params("encoder1", encoder1, out);
  if (!config.share_encoders) collect_encoder_params("encoder2", encoder2, out);
  for (size_t i = 0; i < head.size(); ++i) {
    out.push_back({"head.fc" + std::to_string(i) + ".weight", head[i].weight});
    out.push_back({"head.fc" + std::to_string(i) + ".bias", head[i].bias});
  }
  return out;
}

std::vector<Tensor> SAMM2DModel::params() const {
  std::vector<Tensor> out;
  for (auto& np : named_params()) out.push_back(np.tensor);
  return out;
}

size_t SAMM2DModel::param_count() const {
  size_t n = 0;
  for (auto& np : named_params()) n += np.tensor.size();
  return n;
}

ParamTable count_params(const SAMM2DModel& model) {
  ParamTable table;
  for (const auto& np : model.named_params()) {
    table.layers.push_back({np.name, np.tensor.shape(), np.tensor.size()});
    table.total += np.tensor.size();
  }
  return table;
}

// ---- config (de)serialization ----------------------------------------------

std::string model_config_to_json(const ModelConfig& c) {
  json j;
  j["encoder"]["input_mode"] =
      c.encoder.input_mode == EncoderConfig::InputMode::replicate3 ? "replicate3" : "single_channel";
  j["encoder"]["stage_channels"] = c.encoder.stage_channels;
  j["encoder"]["blocks_per_stage"] = c.encoder.blocks_per_stage;
  j["encoder"]["use_residual"] = c.encoder.use_residual;
  j["pyramid_grids"] = c.pyramid_grids;
  j["pyramid_stages"] = c.pyramid_stages;
  j["head_dims"] = c.head_dims;
  j["dropout"] = c.dropout;
  j["share_encoders"] = c.share_encoders;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("model config: invalid JSON: ") + e.what());
  }
  ModelConfig c;
  try {
    const std::string mode = j.at("encoder").at("input_mode").get<std::string>();
    if (mode == "replicate3")
      c.encoder.input_mode = EncoderConfig::InputMode::replicate3;
    else if (mode == "single_channel")
      c.encoder.input_mode = EncoderConfig::InputMode::single_channel;
    else
      throw DataError("model config: unknown input_mode '" + mode + "'");
    c.encoder.stage_channels = j.at("encoder").at("stage_channels").get<std::vector<int>>();
    c.encoder.blocks_per_stage = j.at("encoder").at("blocks_per_stage").get<int>();
    c.encoder.use_residual = j.at("encoder").at("use_residual").get<bool>();
    c.pyramid_grids = j.at("pyramid_grids").get<std::vector<int>>();
    c.pyramid_stages = j.at("pyramid_stages").get<std::vector<int>>();
    c.head_dims = j.at("head_dims").get<std::vector<int>>();
    c.dropout = j.at("dropout").get<float>();
    c.share_encoders = j.at("share_encoders").get<bool>();
  } catch (const json::exception& e) {
    throw DataError(std::string("model config: missing or bad field: ") + e.what());
  }
  return c;
}

// ---- checkpoint I/O ---------------------------------------------------------

namespace {

void put_bytes(std::string& buf, const void* p, size_t n) {
  buf.append(reinterpret_cast<const char*>(p), n);
}

template <typename T>
void put(std::string& buf, T v) {
  put_bytes(buf, &v, sizeof(T));
}

}  // namespace

void save_checkpoint(const SAMM2DModel& model, const std::filesystem::path& path) {
  std::string buf;
  put_bytes(buf, "SMM2", 4);
  put<uint16_t>(buf, kCheckpointVersion);
  const std::string cfg = model_config_to_json(model.config);
  put<uint32_t>(buf, (uint32_t)cfg.size());
  put_bytes(buf, cfg.data(), cfg.size());

  const auto params = model.named_params();
  put<uint32_t>(buf, (uint32_t)params.size());
  for (const auto& np : params) {
    put<uint16_t>(buf, (uint16_t)np.name.size());
    put_bytes(buf, np.name.data(), np.name.size());
    put<uint64_t>(buf, (uint64_t)np.tensor.size());
    put_bytes(buf, np.tensor.values().data(), np.tensor.size() * 4);
  }
  const uint32_t crc =
      (uint32_t)crc32(0L, reinterpret_cast<const Bytef*>(buf.data() + 4), (uInt)(buf.size() - 4));
  put<uint32_t>(buf, crc);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("save_checkpoint: cannot write " + path.string());
  out.write(buf.data(), (std::streamsize)buf.size());
  if (!out) throw DataError("save_checkpoint: write failed: " + path.string());
}

SAMM2DModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_checkpoint: cannot open " + path.string());
  std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  size_t pos = 0;
  auto need = [&](size_t n, const char* field) {
    if (pos + n > data.size())
      throw FormatError(FormatError::Kind::truncated,
                        "load_checkpoint: truncated in " + std::string(field));
  };
  need(4, "magic");
  if (std::memcmp(data.data(), "SMM2", 4) != 0)
    throw FormatError(FormatError::Kind::bad_magic,
                      "load_checkpoint: bad magic in " + path.string());
  pos = 4;

  if (data.size() < 8)
    throw FormatError(FormatError::Kind::truncated, "load_checkpoint: no room for CRC");
  uint32_t stored_crc;
  std::memcpy(&stored_crc, data.data() + data.size() - 4, 4);
  const uint32_t crc = (uint32_t)crc32(0L, reinterpret_cast<const Bytef*>(data.data() + 4),
                                       (uInt)(data.size() - 8));
  if (crc != stored_crc)
    throw FormatError(FormatError::Kind::crc_mismatch,
                      "load_checkpoint: CRC mismatch in " + path.string());
  const size_t end = data.size() - 4;

  auto get = [&]<typename T>(T*, const char* field) {
    need(sizeof(T), field);
    T v;
    std::memcpy(&v, data.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  };
  const uint16_t version = get((uint16_t*)nullptr, "version");
  if (version != kCheckpointVersion)
    throw FormatError(FormatError::Kind::bad_field, "load_checkpoint: unsupported version");
  const uint32_t cfg_len = get((uint32_t*)nullptr, "config length");
  need(cfg_len, "config");
  const std::string cfg_text(data.data() + pos, cfg_len);
  pos += cfg_len;

  Rng dummy(0);
  SAMM2DModel model = build_model(model_config_from_json(cfg_text), dummy);

  const uint32_t blob_count = get((uint32_t*)nullptr, "blob count");
  auto params = model.named_params();
  if (blob_count != params.size())
    throw FormatError(FormatError::Kind::bad_field,
                      "load_checkpoint: expected " + std::to_string(params.size()) +
                          " blobs, file has " + std::to_string(blob_count));
  for (auto& np : params) {
    const uint16_t name_len = get((uint16_t*)nullptr, "name length");
    need(name_len, "name");
    const std::string name(data.data() + pos, name_len);
    pos += name_len;
    if (name != np.name)
      throw FormatError(FormatError::Kind::bad_field,
                        "load_checkpoint: expected blob '" + np.name + "', found '" + name + "'");
    const uint64_t count = get((uint64_t*)nullptr, "blob length");
    if (count != np.tensor.size())
      throw FormatError(FormatError::Kind::bad_field,
                        "load_checkpoint: size mismatch for '" + name + "'");
    need(count * 4, "blob data");
    std::memcpy(np.tensor.values_mut().data(), data.data() + pos, count * 4);
    pos += count * 4;
  }
  if (pos != end)
    throw FormatError(FormatError::Kind::bad_field, "load_checkpoint: trailing bytes");
  return model;
}

}  // namespace samm2d
