#include "samm2d/saliency.hpp"

#include <algorithm>
#include <cmath>

namespace samm2d {

Image2D upsample_bilinear(const Image2D& image, int out_h, int out_w) {
  Image2D out = Image2D::zeros(out_h, out_w);
  const double sr = (double)image.height / out_h;
  const double sc = (double)image.width / out_w;
  for (int r = 0; r < out_h; ++r)
    for (int c = 0; c < out_w; ++c) {
      // align_corners=false style mapping, clamped at the edges
      const double src_r = std::clamp(((double)r + 0.5) * sr - 0.5, 0.0, (double)image.height - 1);
      const double src_c = std::clamp(((double)c + 0.5) * sc - 0.5, 0.0, (double)image.width - 1);
      const int r0 = (int)src_r, c0 = (int)src_c;
      const int r1 = std::min(r0 + 1, image.height - 1);
      const int c1 = std::min(c0 + 1, image.width - 1);
      const double fr = src_r - r0, fc = src_c - c0;
      out.at(r, c) = (float)((1 - fr) * (1 - fc) * image.at(r0, c0) +
                             (1 - fr) * fc * image.at(r0, c1) +
                             fr * (1 - fc) * image.at(r1, c0) + fr * fc * image.at(r1, c1));
    }
  return out;
}

Heatmap gradcam(const SAMM2DModel& model, const Sample& sample, const GradCamConfig& config) {
  for (const auto& np : model.named_params())
    for (float v : np.tensor.values())
      if (!std::isfinite(v))
        throw NumericError("gradcam: non-finite parameter in '" + np.name + "'");

  const int stage_count = (int)model.config.encoder.stage_channels.size();
  const int stage = config.stage < 0 ? stage_count - 1 : config.stage;
  if (stage < 0 || stage >= stage_count)
    throw ConfigError("gradcam: stage " + std::to_string(stage) + " out of range");
  if (config.encoder != 1 && config.encoder != 2)
    throw ConfigError("gradcam: encoder must be 1 or 2");

  const Image2D& img = sample.image;
  Tensor batch = Tensor::from_data({1, 1, img.height, img.width}, img.pixels);
  Rng rng(0);  // dropout is eval-mode; no draws happen
  const ForwardResult fwd = model.forward(batch, /*train=*/false, rng);
  fwd.logit.backward();

  const Tensor& map = config.encoder == 1 ? fwd.stage_maps1[(size_t)stage]
                                          : fwd.stage_maps2[(size_t)stage];
  const int C = map.dim(1), H = map.dim(2), W = map.dim(3);
  const auto& act = map.values();
  const auto& grad = map.grad();

  Image2D cam = Image2D::zeros(H, W);
  for (int k = 0; k < C; ++k) {
    double w_k = 0.0;
    for (int p = 0; p < H * W; ++p) w_k += (double)grad[(size_t)k * H * W + p];
    w_k /= (double)(H * W);
    for (int p = 0; p < H * W; ++p)
      cam.pixels[(size_t)p] += (float)(w_k * (double)act[(size_t)k * H * W + p]);
  }
  for (float& v : cam.pixels) v = std::max(v, 0.0f);

  Heatmap heat;
  heat.source_stage = stage;
  heat.values = upsample_bilinear(cam, img.height, img.width);
  const float mx = *std::max_element(heat.values.pixels.begin(), heat.values.pixels.end());
  if (mx > 0.0f)
    for (float& v : heat.values.pixels) v /= mx;
  return heat;
}

BinaryMask binarize(const Heatmap& heatmap, float theta) {
  BinaryMask out{heatmap.values.height, heatmap.values.width,
                 std::vector<uint8_t>(heatmap.values.count(), 0)};
  for (size_t i = 0; i < out.on.size(); ++i) out.on[i] = heatmap.values.pixels[i] > theta ? 1 : 0;
  return out;
}

BinaryMask dilate(const BinaryMask& mask, int radius) {
  if (radius <= 0) return mask;
  BinaryMask out = mask;
  const int r2 = radius * radius;
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c) {
      if (!mask.on[(size_t)r * mask.width + c]) continue;
      for (int dr = -radius; dr <= radius; ++dr)
        for (int dc = -radius; dc <= radius; ++dc) {
          if (dr * dr + dc * dc > r2) continue;
          const int rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= mask.height || cc < 0 || cc >= mask.width) continue;
          out.on[(size_t)rr * mask.width + cc] = 1;
        }
    }
  return out;
}

double iou_binary(const BinaryMask& a, const BinaryMask& b) {
  if (a.height != b.height || a.width != b.width)
    throw ShapeError("iou: mask dims differ");
  size_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.on.size(); ++i) {
    const bool av = a.on[i] != 0, bv = b.on[i] != 0;
    inter += av && bv;
    uni += av || bv;
  }
  if (uni == 0) return 1.0;  // both empty
  return (double)inter / (double)uni;
}

double iou(const Heatmap& heatmap, const BinaryMask& mask, float theta) {
  return iou_binary(binarize(heatmap, theta), mask);
}

AttentionStats attention_report(const SAMM2DModel& model, const std::vector<Sample>& samples,
                                int n_cases, uint64_t seed, const GradCamConfig& config,
                                std::vector<Heatmap>* heatmaps_out,
                                std::vector<size_t>* case_indices_out) {
  if (n_cases < 1) throw ConfigError("attention_report: n_cases must be >= 1");

  // Score everything in eval mode to find true positives.
  std::vector<size_t> tp_indices;
  {
    NoGradGuard no_grad;
    Rng rng(0);
    for (size_t i = 0; i < samples.size(); ++i) {
      const Sample& s = samples[i];
      if (s.label != 1 || !s.mask.has_value()) continue;
      Tensor batch = Tensor::from_data({1, 1, s.image.height, s.image.width}, s.image.pixels);
      const float score = model.forward(batch, false, rng).prob.values()[0];
      if (score >= config.tp_tau) tp_indices.push_back(i);
    }
  }

  AttentionStats stats;
  stats.binarize_theta = config.binarize_theta;
  stats.n_tp_available = (int)tp_indices.size();
  if (tp_indices.empty()) return stats;

  std::vector<size_t> chosen;
  if ((int)tp_indices.size() <= n_cases) {
    chosen = tp_indices;
    stats.used_all_tps = (int)tp_indices.size() < n_cases;
  } else {
    // Seeded partial Fisher-Yates draw of n_cases indices.
    Rng rng(seed);
    std::vector<size_t> pool = tp_indices;
    for (int k = 0; k < n_cases; ++k) {
      const size_t j = k + (size_t)rng.next_index(pool.size() - (size_t)k);
      std::swap(pool[(size_t)k], pool[j]);
      chosen.push_back(pool[(size_t)k]);
    }
  }

  double iou_sum = 0.0;
  int hits = 0;
  for (size_t idx : chosen) {
    const Sample& s = samples[idx];
    Heatmap heat = gradcam(model, s, config);
    iou_sum += iou(heat, *s.mask, config.binarize_theta);
    const auto& px = heat.values.pixels;
    const size_t argmax = (size_t)(std::max_element(px.begin(), px.end()) - px.begin());
    const BinaryMask dilated = dilate(*s.mask, config.dilation_radius);
    if (dilated.on[argmax]) ++hits;
    if (heatmaps_out) heatmaps_out->push_back(std::move(heat));
    if (case_indices_out) case_indices_out->push_back(idx);
  }
  stats.n_cases = (int)chosen.size();
  stats.frac_tp_on_target = (double)hits / (double)chosen.size();
  stats.mean_iou = iou_sum / (double)chosen.size();
  return stats;
}

}  // namespace samm2d
