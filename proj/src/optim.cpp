#include "samm2d/optim.hpp"

#include <cmath>

namespace samm2d {

namespace {
constexpr double kProbFloor = 1e-7;
}

void FocalParams::validate() const {
  if (!(alpha > 0.0f && alpha < 1.0f)) throw ConfigError("focal: alpha must be in (0,1)");
  if (gamma < 0.0f) throw ConfigError("focal: gamma must be >= 0");
  if (!(epsilon >= 0.0f && epsilon < 1.0f)) throw ConfigError("focal: epsilon must be in [0,1)");
}

Tensor smooth_focal_loss(const Tensor& probs, const std::vector<float>& labels,
                         const FocalParams& params) {
  params.validate();
  const size_t n = probs.size();
  if (n == 0) throw ShapeError("smooth_focal_loss: empty batch");
  if (labels.size() != n)
    throw ShapeError("smooth_focal_loss: " + std::to_string(n) + " probs vs " +
                     std::to_string(labels.size()) + " labels");
  for (float y : labels)
    if (y != 0.0f && y != 1.0f)
      throw ShapeError("smooth_focal_loss: labels must be exactly 0 or 1");

  const double alpha = params.alpha, gamma = params.gamma, eps = params.epsilon;
  const auto& p_raw = probs.values();

  // Forward in f64, one rounding at the end.
  auto per_sample = [&](double pc, double y) {
    const double yt = y * (1.0 - eps) + eps / 2.0;
    return -(alpha * yt * std::pow(1.0 - pc, gamma) * std::log(pc) +
             (1.0 - alpha) * (1.0 - yt) * std::pow(pc, gamma) * std::log(1.0 - pc));
  };
  double total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double pc = std::clamp((double)p_raw[i], kProbFloor, 1.0 - kProbFloor);
    total += per_sample(pc, (double)labels[i]);
  }
  const float loss = (float)(total / (double)n);

  auto p_node = probs.node();
  auto labels_copy = std::make_shared<std::vector<float>>(labels);
  auto bw = [p_node, labels_copy, alpha, gamma, eps, n](detail::Node& self) {
    p_node->ensure_grad();
    const double upstream = (double)self.grad[0] / (double)n;
    for (size_t i = 0; i < n; ++i) {
      const double p = (double)p_node->value[i];
      if (p <= kProbFloor || p >= 1.0 - kProbFloor) continue;  // clamp region is flat
      const double y = (double)(*labels_copy)[i];
      const double yt = y * (1.0 - eps) + eps / 2.0;
      const double a = alpha * yt;
      const double b = (1.0 - alpha) * (1.0 - yt);
      double d = a * (-std::pow(1.0 - p, gamma) / p) + b * (std::pow(p, gamma) / (1.0 - p));
      if (gamma != 0.0)
        d += a * (gamma * std::pow(1.0 - p, gamma - 1.0) * std::log(p)) -
             b * (gamma * std::pow(p, gamma - 1.0) * std::log(1.0 - p));
      p_node->grad[i] += (float)(upstream * d);
    }
  };
  return detail::make_op({1}, {loss}, {p_node}, std::move(bw), "smooth_focal_loss");
}

void OptimConfig::validate() const {
  if (encoder_lr <= 0.0f || head_lr <= 0.0f || base_lr <= 0.0f)
    throw ConfigError("optim: learning rates must be > 0");
  if (weight_decay < 0.0f) throw ConfigError("optim: weight_decay must be >= 0");
  if (!(beta1 >= 0.0f && beta1 < 1.0f && beta2 >= 0.0f && beta2 < 1.0f))
    throw ConfigError("optim: betas must be in [0,1)");
  if (adam_eps <= 0.0f) throw ConfigError("optim: adam_eps must be > 0");
  if (warmup_epochs < 0.0f) throw ConfigError("optim: warmup_epochs must be >= 0");
  if (restart_T0_epochs <= 0.0f) throw ConfigError("optim: restart_T0_epochs must be > 0");
  if (restart_mult < 1) throw ConfigError("optim: restart_mult must be >= 1");
  if (!(eta_min_frac >= 0.0f && eta_min_frac <= 1.0f))
    throw ConfigError("optim: eta_min_frac must be in [0,1]");
  if (clip_norm <= 0.0f) throw ConfigError("optim: clip_norm must be > 0");
}

float lr_factor(float epoch_progress, const OptimConfig& config) {
  if (epoch_progress < 0.0f) throw ConfigError("lr_factor: epoch progress must be >= 0");
  const double t = epoch_progress;
  const double warmup = config.warmup_epochs;
  if (warmup > 0.0 && t < warmup) return (float)(t / warmup);

  double s = t - warmup;
  double cycle_len = config.restart_T0_epochs;
  if (config.restart_mult == 1) {
    s = std::fmod(s, cycle_len);
  } else {
    while (s >= cycle_len) {
      s -= cycle_len;
      cycle_len *= config.restart_mult;
    }
  }
  const double cosine = 0.5 * (1.0 + std::cos(M_PI * s / cycle_len));
  return (float)(config.eta_min_frac + (1.0 - config.eta_min_frac) * cosine);
}

float clip_global_norm(std::vector<ParamGroup>& groups, float max_norm) {
  if (max_norm <= 0.0f) throw ConfigError("clip_global_norm: max_norm must be > 0");
  double sq = 0.0;
  for (auto& g : groups)
    for (auto& p : g.params) {
      if (!p.has_grad()) continue;
      for (float gv : p.grad()) sq += (double)gv * (double)gv;
    }
  const double norm = std::sqrt(sq);
  if (norm <= (double)max_norm || norm == 0.0) return 1.0f;
  const float scale = (float)((double)max_norm / norm);
  for (auto& g : groups)
    for (auto& p : g.params) {
      if (!p.has_grad()) continue;
      auto& grad = p.node()->grad;
      for (float& gv : grad) gv *= scale;
    }
  return scale;
}

AdamW::AdamW(std::vector<ParamGroup> groups, const OptimConfig& config)
    : groups_(std::move(groups)), config_(config) {
  config_.validate();
  m_.resize(groups_.size());
  v_.resize(groups_.size());
  for (size_t g = 0; g < groups_.size(); ++g) {
    if (groups_[g].params.size() != groups_[g].param_names.size())
      throw ConfigError("adamw: group '" + groups_[g].name + "' names/params mismatch");
    m_[g].resize(groups_[g].params.size());
    v_[g].resize(groups_[g].params.size());
    for (size_t p = 0; p < groups_[g].params.size(); ++p) {
      m_[g][p].assign(groups_[g].params[p].size(), 0.0f);
      v_[g][p].assign(groups_[g].params[p].size(), 0.0f);
    }
  }
}

void AdamW::step(float lr_scale) {
  ++step_count_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double bc1 = 1.0 - std::pow(b1, (double)step_count_);
  const double bc2 = 1.0 - std::pow(b2, (double)step_count_);
  for (size_t g = 0; g < groups_.size(); ++g) {
    const double lr = (double)groups_[g].base_lr * (double)lr_scale;
    for (size_t pi = 0; pi < groups_[g].params.size(); ++pi) {
      Tensor& p = groups_[g].params[pi];
      if (!p.has_grad())
        throw NumericError("adamw: no gradient for '" + groups_[g].param_names[pi] + "'");
      const auto& grad = p.grad();
      auto& vals = p.values_mut();
      auto& m = m_[g][pi];
      auto& v = v_[g][pi];
      for (size_t e = 0; e < vals.size(); ++e) {
        const double gv = (double)grad[e];
        if (!std::isfinite(gv))
          throw NumericError("adamw: non-finite gradient in '" + groups_[g].param_names[pi] + "'");
        // Decoupled weight decay, separate from the moment update.
        double pv = (double)vals[e];
        pv -= lr * (double)config_.weight_decay * pv;
        const double mn = b1 * (double)m[e] + (1.0 - b1) * gv;
        const double vn = b2 * (double)v[e] + (1.0 - b2) * gv * gv;
        m[e] = (float)mn;
        v[e] = (float)vn;
        const double m_hat = mn / bc1;
        const double v_hat = vn / bc2;
        pv -= lr * m_hat / (std::sqrt(v_hat) + (double)config_.adam_eps);
        vals[e] = (float)pv;
      }
    }
  }
}

}  // namespace samm2d
