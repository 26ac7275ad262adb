#pragma once

#include <string>
#include <vector>

#include "samm2d/tensor.hpp"

namespace samm2d {

struct FocalParams {
  float alpha = 0.25f;
  float gamma = 3.0f;
  float epsilon = 0.1f;  // label smoothing

  void validate() const;
};

// Binary focal loss on label-smoothed soft targets, mean over the batch:
//   y~ = y*(1-eps) + eps/2
//   L  = -[ alpha*y~*(1-p)^gamma*log(p) + (1-alpha)*(1-y~)*p^gamma*log(1-p) ]
// p is clamped to [1e-7, 1-1e-7] internally; labels must be exactly 0 or 1.
Tensor smooth_focal_loss(const Tensor& probs, const std::vector<float>& labels,
                         const FocalParams& params);

struct OptimConfig {
  float base_lr = 1e-3f;  // schedule reference scale, recorded in reports
  float encoder_lr = 1e-5f;
  float head_lr = 1e-4f;
  float weight_decay = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float adam_eps = 1e-8f;
  float warmup_epochs = 5.0f;
  float restart_T0_epochs = 10.0f;
  int restart_mult = 1;
  float eta_min_frac = 0.0f;
  float clip_norm = 1.0f;

  void validate() const;
};

// Schedule multiplier at continuous epoch t: linear 0->1 over the warmup,
// then cosine annealing restarting every T0*mult^cycle epochs.
float lr_factor(float epoch_progress, const OptimConfig& config);

struct ParamGroup {
  std::string name;  // "encoder1" | "encoder2" | "head"
  std::vector<Tensor> params;
  std::vector<std::string> param_names;
  float base_lr = 0.0f;
};

// Joint L2 norm over every parameter gradient of every group; if it exceeds
// max_norm all gradients are scaled by max_norm/norm. Returns the scale.
float clip_global_norm(std::vector<ParamGroup>& groups, float max_norm);

// AdamW with decoupled weight decay (p -= lr*wd*p applied separately from the
// moment update) and bias-corrected first/second moments.
class AdamW {
 public:
  AdamW(std::vector<ParamGroup> groups, const OptimConfig& config);

  // lr for group g = groups[g].base_lr * lr_scale. Throws NumericError naming
  // the offending layer if a gradient is non-finite.
  void step(float lr_scale);

  const std::vector<ParamGroup>& groups() const { return groups_; }
  int64_t step_count() const { return step_count_; }

 private:
  std::vector<ParamGroup> groups_;
  OptimConfig config_;
  std::vector<std::vector<std::vector<float>>> m_, v_;  // [group][param][elem]
  int64_t step_count_ = 0;
};

}  // namespace samm2d
