#pragma once

#include <cstdint>
#include <vector>

#include "samm2d/imaging.hpp"
#include "samm2d/model.hpp"

namespace samm2d {

struct Heatmap {
  Image2D values;  // input resolution, in [0,1]; max = 1 unless all-zero
  int source_stage = 0;
};

struct GradCamConfig {
  int stage = -1;        // -1 = deepest stage
  int encoder = 1;       // 1 or 2: which encoder's maps to attribute
  float binarize_theta = 0.5f;
  int dilation_radius = 2;  // mask dilation for the argmax hit rule
  float tp_tau = 0.5f;      // score threshold defining a true positive
};

// Gradient of the pre-sigmoid logit w.r.t. the chosen stage's feature maps;
// channel weights are the spatial means of those gradients, the map is
// ReLU(sum_k w_k A_k) upsampled bilinearly to input size and max-normalized.
Heatmap gradcam(const SAMM2DModel& model, const Sample& sample, const GradCamConfig& config = {});

BinaryMask binarize(const Heatmap& heatmap, float theta);
BinaryMask dilate(const BinaryMask& mask, int radius);

// Intersection-over-union after binarizing the heatmap at theta; both-empty
// is defined as 1.0. Dim mismatch is rejected.
double iou(const Heatmap& heatmap, const BinaryMask& mask, float theta = 0.5f);
double iou_binary(const BinaryMask& a, const BinaryMask& b);

struct AttentionStats {
  int n_cases = 0;             // cases actually analyzed
  int n_tp_available = 0;      // true positives found in the set
  bool used_all_tps = false;   // fewer TPs than requested; all were used
  double frac_tp_on_target = 0.0;
  double mean_iou = 0.0;
  float binarize_theta = 0.5f;
};

// Seeded sample of true positives (label 1, score >= tp_tau, mask present);
// a case hits when the heatmap argmax lies inside the dilated mask.
AttentionStats attention_report(const SAMM2DModel& model, const std::vector<Sample>& samples,
                                int n_cases, uint64_t seed, const GradCamConfig& config = {},
                                std::vector<Heatmap>* heatmaps_out = nullptr,
                                std::vector<size_t>* case_indices_out = nullptr);

Image2D upsample_bilinear(const Image2D& image, int out_h, int out_w);

}  // namespace samm2d
