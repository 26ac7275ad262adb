#include "samm2d/config.hpp"

#include <fstream>
#include <json.hpp>
#include <set>

namespace samm2d {

namespace {

using json = nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw DataError("config: '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw DataError("config: unknown key '" + where + "." + it.key() + "'");
}

template <typename T>
void get_to(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(out);
  } catch (const json::exception& e) {
    throw DataError("config: bad value for '" + where + "." + key + "': " + e.what());
  }
}

template <typename T, size_t N>
void get_array(const json& j, const char* key, T (&out)[N], const std::string& where) {
  if (!j.contains(key)) return;
  const auto& arr = j.at(key);
  if (!arr.is_array() || arr.size() != N)
    throw DataError("config: '" + where + "." + key + "' must be an array of " +
                    std::to_string(N));
  for (size_t i = 0; i < N; ++i) {
    try {
      arr[i].get_to(out[i]);
    } catch (const json::exception& e) {
      throw DataError("config: bad value in '" + where + "." + key + "': " + e.what());
    }
  }
}

void parse_gen(const json& j, GenParams& g) {
  check_keys(j,
             {"dims", "spacing_mm", "vessel_count", "vessel_intensity", "vessel_radius_vox",
              "aneurysm_radius_range_vox", "noise_sigma", "background_level", "prevalence"},
             "gen");
  get_array(j, "dims", g.dims, "gen");
  get_array(j, "spacing_mm", g.spacing_mm, "gen");
  get_to(j, "vessel_count", g.vessel_count, "gen");
  get_to(j, "vessel_intensity", g.vessel_intensity, "gen");
  get_to(j, "vessel_radius_vox", g.vessel_radius_vox, "gen");
  get_array(j, "aneurysm_radius_range_vox", g.aneurysm_radius_range_vox, "gen");
  get_to(j, "noise_sigma", g.noise_sigma, "gen");
  get_to(j, "background_level", g.background_level, "gen");
  get_to(j, "prevalence", g.prevalence, "gen");
}

void parse_preproc(const json& j, PreprocConfig& p) {
  check_keys(j, {"clip_lo_pct", "clip_hi_pct", "crop", "salience_tail_k"}, "preproc");
  get_to(j, "clip_lo_pct", p.clip_lo_pct, "preproc");
  get_to(j, "clip_hi_pct", p.clip_hi_pct, "preproc");
  get_to(j, "crop", p.crop, "preproc");
  get_to(j, "salience_tail_k", p.salience_tail_k, "preproc");
}

void parse_augment(const json& j, AugmentParams& a) {
  check_keys(j,
             {"hflip_p", "rot_deg_max", "scale_range", "brightness_range", "contrast_range",
              "gamma_range", "noise_sigma"},
             "augment");
  get_to(j, "hflip_p", a.hflip_p, "augment");
  get_to(j, "rot_deg_max", a.rot_deg_max, "augment");
  get_array(j, "scale_range", a.scale_range, "augment");
  get_array(j, "brightness_range", a.brightness_range, "augment");
  get_array(j, "contrast_range", a.contrast_range, "augment");
  get_array(j, "gamma_range", a.gamma_range, "augment");
  get_to(j, "noise_sigma", a.noise_sigma, "augment");
}

void parse_model(const json& j, ModelConfig& m) {
  check_keys(j,
             {"encoder", "pyramid_grids", "pyramid_stages", "head_dims", "dropout",
              "share_encoders"},
             "model");
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    check_keys(e, {"input_mode", "stage_channels", "blocks_per_stage", "use_residual"},
               "model.encoder");
    if (e.contains("input_mode")) {
      const std::string mode = e.at("input_mode").get<std::string>();
      if (mode == "replicate3")
        m.encoder.input_mode = EncoderConfig::InputMode::replicate3;
      else if (mode == "single_channel")
        m.encoder.input_mode = EncoderConfig::InputMode::single_channel;
      else
        throw DataError("config: model.encoder.input_mode must be single_channel|replicate3");
    }
    get_to(e, "stage_channels", m.encoder.stage_channels, "model.encoder");
    get_to(e, "blocks_per_stage", m.encoder.blocks_per_stage, "model.encoder");
    get_to(e, "use_residual", m.encoder.use_residual, "model.encoder");
  }
  get_to(j, "pyramid_grids", m.pyramid_grids, "model");
  get_to(j, "pyramid_stages", m.pyramid_stages, "model");
  get_to(j, "head_dims", m.head_dims, "model");
  get_to(j, "dropout", m.dropout, "model");
  get_to(j, "share_encoders", m.share_encoders, "model");
}

void parse_optim(const json& j, OptimConfig& o) {
  check_keys(j,
             {"base_lr", "encoder_lr", "head_lr", "weight_decay", "beta1", "beta2", "adam_eps",
              "warmup_epochs", "restart_T0_epochs", "restart_mult", "eta_min_frac", "clip_norm"},
             "optim");
  get_to(j, "base_lr", o.base_lr, "optim");
  get_to(j, "encoder_lr", o.encoder_lr, "optim");
  get_to(j, "head_lr", o.head_lr, "optim");
  get_to(j, "weight_decay", o.weight_decay, "optim");
  get_to(j, "beta1", o.beta1, "optim");
  get_to(j, "beta2", o.beta2, "optim");
  get_to(j, "adam_eps", o.adam_eps, "optim");
  get_to(j, "warmup_epochs", o.warmup_epochs, "optim");
  get_to(j, "restart_T0_epochs", o.restart_T0_epochs, "optim");
  get_to(j, "restart_mult", o.restart_mult, "optim");
  get_to(j, "eta_min_frac", o.eta_min_frac, "optim");
  get_to(j, "clip_norm", o.clip_norm, "optim");
}

void parse_focal(const json& j, FocalParams& f) {
  check_keys(j, {"alpha", "gamma", "epsilon"}, "focal");
  get_to(j, "alpha", f.alpha, "focal");
  get_to(j, "gamma", f.gamma, "focal");
  get_to(j, "epsilon", f.epsilon, "focal");
}

void parse_train(const json& j, TrainConfig& t) {
  check_keys(j,
             {"epochs_max", "batch_size", "early_stop_patience", "seed", "regime", "eval_every",
              "min_improvement"},
             "train");
  get_to(j, "epochs_max", t.epochs_max, "train");
  get_to(j, "batch_size", t.batch_size, "train");
  get_to(j, "early_stop_patience", t.early_stop_patience, "train");
  get_to(j, "seed", t.seed, "train");
  if (j.contains("regime")) t.regime = regime_from_name(j.at("regime").get<std::string>());
  get_to(j, "eval_every", t.eval_every, "train");
  get_to(j, "min_improvement", t.min_improvement, "train");
}

void parse_cost(const json& j, CostParams& c) {
  check_keys(j,
             {"prevalence", "cost_missed_rupture", "cost_treatment", "cost_fp_workup",
              "cost_review"},
             "cost");
  get_to(j, "prevalence", c.prevalence, "cost");
  get_to(j, "cost_missed_rupture", c.cost_missed_rupture, "cost");
  get_to(j, "cost_treatment", c.cost_treatment, "cost");
  get_to(j, "cost_fp_workup", c.cost_fp_workup, "cost");
  get_to(j, "cost_review", c.cost_review, "cost");
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw DataError(std::string("config: invalid JSON: ") + e.what());
  }
  check_keys(j, {"gen", "preproc", "augment", "model", "optim", "focal", "train", "cost"},
             "config");
  RunConfig c;
  if (j.contains("gen")) parse_gen(j.at("gen"), c.gen);
  if (j.contains("preproc")) parse_preproc(j.at("preproc"), c.preproc);
  if (j.contains("augment")) parse_augment(j.at("augment"), c.augment);
  if (j.contains("model")) parse_model(j.at("model"), c.model);
  if (j.contains("optim")) parse_optim(j.at("optim"), c.optim);
  if (j.contains("focal")) parse_focal(j.at("focal"), c.focal);
  if (j.contains("train")) parse_train(j.at("train"), c.train);
  if (j.contains("cost")) parse_cost(j.at("cost"), c.cost);
  c.validate();
  return c;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("config: cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json_text(text);
}

std::string RunConfig::to_json() const {
  json j;
  j["gen"] = {{"dims", gen.dims},
              {"spacing_mm", gen.spacing_mm},
              {"vessel_count", gen.vessel_count},
              {"vessel_intensity", gen.vessel_intensity},
              {"vessel_radius_vox", gen.vessel_radius_vox},
              {"aneurysm_radius_range_vox", gen.aneurysm_radius_range_vox},
              {"noise_sigma", gen.noise_sigma},
              {"background_level", gen.background_level},
              {"prevalence", gen.prevalence}};
  j["preproc"] = {{"clip_lo_pct", preproc.clip_lo_pct},
                  {"clip_hi_pct", preproc.clip_hi_pct},
                  {"crop", preproc.crop},
                  {"salience_tail_k", preproc.salience_tail_k}};
  j["augment"] = {{"hflip_p", augment.hflip_p},
                  {"rot_deg_max", augment.rot_deg_max},
                  {"scale_range", augment.scale_range},
                  {"brightness_range", augment.brightness_range},
                  {"contrast_range", augment.contrast_range},
                  {"gamma_range", augment.gamma_range},
                  {"noise_sigma", augment.noise_sigma}};
  j["model"] = json::parse(model_config_to_json(model));
  j["optim"] = {{"base_lr", optim.base_lr},
                {"encoder_lr", optim.encoder_lr},
                {"head_lr", optim.head_lr},
                {"weight_decay", optim.weight_decay},
                {"beta1", optim.beta1},
                {"beta2", optim.beta2},
                {"adam_eps", optim.adam_eps},
                {"warmup_epochs", optim.warmup_epochs},
                {"restart_T0_epochs", optim.restart_T0_epochs},
                {"restart_mult", optim.restart_mult},
                {"eta_min_frac", optim.eta_min_frac},
                {"clip_norm", optim.clip_norm}};
  j["focal"] = {{"alpha", focal.alpha}, {"gamma", focal.gamma}, {"epsilon", focal.epsilon}};
  j["train"] = {{"epochs_max", train.epochs_max},
                {"batch_size", train.batch_size},
                {"early_stop_patience", train.early_stop_patience},
                {"seed", train.seed},
                {"regime", regime_name(train.regime)},
                {"eval_every", train.eval_every},
                {"min_improvement", train.min_improvement}};
  j["cost"] = {{"prevalence", cost.prevalence},
               {"cost_missed_rupture", cost.cost_missed_rupture},
               {"cost_treatment", cost.cost_treatment},
               {"cost_fp_workup", cost.cost_fp_workup},
               {"cost_review", cost.cost_review}};
  return j.dump();
}

void RunConfig::validate() const {
  gen.validate();
  preproc.validate();
  model.validate();
  optim.validate();
  focal.validate();
  train.validate();
  cost.validate();
}

}  // namespace samm2d
