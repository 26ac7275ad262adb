#pragma once

// f64 reference evaluation of the full model objective, composed from the
// serial naive kernels. Independent of the autodiff graph and the OpenMP
// kernels on purpose: this is the oracle side of gradient checks, keeping
// f32 rounding out of the finite-difference quotients.

#include <cmath>
#include <vector>

#include "samm2d/kernels_ref.hpp"
#include "samm2d/model.hpp"
#include "samm2d/optim.hpp"

namespace samm2d::testref {

inline std::vector<double> widen(const std::vector<float>& xs) {
  return std::vector<double>(xs.begin(), xs.end());
}

struct Feature {
  std::vector<double> data;  // [N,C,H,W]
  int n = 0, c = 0, h = 0, w = 0;
};

inline Feature conv_relu(const Feature& in, const Tensor& weight, const Tensor& bias, int stride,
                         int pad, bool apply_relu) {
  const int cout = weight.dim(0), k = weight.dim(2);
  Feature out;
  out.n = in.n;
  out.c = cout;
  out.h = ref::conv_out_dim(in.h, k, stride, pad);
  out.w = ref::conv_out_dim(in.w, k, stride, pad);
  out.data.resize((size_t)out.n * out.c * out.h * out.w);
  const auto wd = widen(weight.values());
  const auto bd = widen(bias.values());
  ref::conv2d_forward<double>(in.data.data(), wd.data(), bd.data(), out.data.data(), in.n, in.c,
                              in.h, in.w, cout, k, stride, pad);
  if (apply_relu)
    for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
  return out;
}

inline std::vector<Feature> encode_ref(const Encoder& enc, const EncoderConfig& cfg, Feature x) {
  std::vector<Feature> maps;
  for (const auto& stage : enc.stages) {
    x = conv_relu(x, stage.entry.weight, stage.entry.bias, stage.entry.stride,
                  stage.entry.padding, true);
    for (const auto& block : stage.blocks) {
      Feature y = conv_relu(x, block.conv1.weight, block.conv1.bias, 1, 1, true);
      y = conv_relu(y, block.conv2.weight, block.conv2.bias, 1, 1, false);
      if (cfg.use_residual)
        for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += x.data[i];
      for (auto& v : y.data) v = v > 0.0 ? v : 0.0;
      x = std::move(y);
    }
    maps.push_back(x);
  }
  return maps;
}

inline std::vector<double> pyramid_ref(const std::vector<Feature>& maps,
                                       const std::vector<int>& grids,
                                       const std::vector<int>& stages, int n) {
  std::vector<double> desc;
  for (int row = 0; row < n; ++row) {
    for (int s : stages) {
      const Feature& f = maps[(size_t)s];
      for (int g : grids) {
        std::vector<double> pooled((size_t)f.c * g * g);
        // Pool just this batch row.
        ref::avgpool_grid_forward<double>(
            f.data.data() + (size_t)row * f.c * f.h * f.w, pooled.data(), 1, f.c, f.h, f.w, g);
        desc.insert(desc.end(), pooled.begin(), pooled.end());
      }
    }
  }
  return desc;  // laid out row-major [n, D]
}

inline double focal_ref(const std::vector<double>& probs, const std::vector<float>& labels,
                        const FocalParams& fp) {
  double total = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], 1e-7, 1.0 - 1e-7);
    const double yt = (double)labels[i] * (1.0 - fp.epsilon) + fp.epsilon / 2.0;
    total += -(fp.alpha * yt * std::pow(1.0 - p, (double)fp.gamma) * std::log(p) +
               (1.0 - fp.alpha) * (1.0 - yt) * std::pow(p, (double)fp.gamma) * std::log(1.0 - p));
  }
  return total / (double)probs.size();
}

// Dropout in eval mode (identity), as required for a deterministic objective.
inline double model_loss_ref(const SAMM2DModel& model, const std::vector<float>& batch_pixels,
                             int n, int h, int w, const std::vector<float>& labels,
                             const FocalParams& fp) {
  Feature input;
  input.n = n;
  input.c = 1;
  input.h = h;
  input.w = w;
  input.data = widen(batch_pixels);
  if (model.config.encoder.input_mode == EncoderConfig::InputMode::replicate3) {
    Feature rep;
    rep.n = n;
    rep.c = 3;
    rep.h = h;
    rep.w = w;
    rep.data.resize((size_t)n * 3 * h * w);
    const size_t plane = (size_t)h * w;
    for (int row = 0; row < n; ++row)
      for (int t = 0; t < 3; ++t)
        std::copy_n(input.data.begin() + (size_t)row * plane, plane,
                    rep.data.begin() + ((size_t)row * 3 + t) * plane);
    input = std::move(rep);
  }

  const auto stages = model.config.effective_pyramid_stages();
  const auto maps1 = encode_ref(model.encoder1, model.config.encoder, input);
  const auto maps2 = encode_ref(model.encoder2, model.config.encoder, input);
  const auto d1 = pyramid_ref(maps1, model.config.pyramid_grids, stages, n);
  const auto d2 = pyramid_ref(maps2, model.config.pyramid_grids, stages, n);
  const int dim = (int)(d1.size() / (size_t)n);

  std::vector<double> x((size_t)n * 2 * dim);
  for (int row = 0; row < n; ++row) {
    std::copy_n(d1.begin() + (size_t)row * dim, dim, x.begin() + (size_t)row * 2 * dim);
    std::copy_n(d2.begin() + (size_t)row * dim, dim, x.begin() + (size_t)row * 2 * dim + dim);
  }

  int in_dim = 2 * dim;
  for (size_t li = 0; li < model.head.size(); ++li) {
    const auto& layer = model.head[li];
    const int out_dim = layer.weight.dim(1);
    std::vector<double> y((size_t)n * out_dim);
    const auto wd = widen(layer.weight.values());
    const auto bd = widen(layer.bias.values());
    ref::linear_forward<double>(x.data(), wd.data(), bd.data(), y.data(), n, in_dim, out_dim);
    if (li + 1 < model.head.size())
      for (auto& v : y) v = v > 0.0 ? v : 0.0;
    x = std::move(y);
    in_dim = out_dim;
  }

  std::vector<double> probs(x.size());
  for (size_t i = 0; i < x.size(); ++i)
    probs[i] = x[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-x[i])) : std::exp(x[i]) / (1.0 + std::exp(x[i]));
  return focal_ref(probs, labels, fp);
}

}  // namespace samm2d::testref
