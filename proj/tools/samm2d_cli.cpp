// samm2d: synthetic aneurysm-screening pipeline driver.
//
// Subcommands: gen, preprocess, train, cv, ablation, calibrate, gradcam,
// report. Every report embeds the resolved config and tool version. Exit
// codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <numeric>

#include "samm2d/config.hpp"
#include "samm2d/saliency.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace samm2d;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Writes a subcommand's outputs into a staging directory that is renamed (or
// merged) into place only on success, so failures leave no partial outputs.
class OutputStager {
 public:
  explicit OutputStager(const fs::path& target) : target_(target) {
    stage_ = target;
    stage_ += ".partial";
    std::error_code ec;
    fs::remove_all(stage_, ec);
    fs::create_directories(stage_);
  }

  ~OutputStager() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(stage_, ec);
    }
  }

  const fs::path& dir() const { return stage_; }

  void commit() {
    if (!fs::exists(target_)) {
      fs::rename(stage_, target_);
    } else {
      for (const auto& entry : fs::directory_iterator(stage_)) {
        const fs::path dest = target_ / entry.path().filename();
        std::error_code ec;
        fs::remove_all(dest, ec);
        fs::rename(entry.path(), dest);
      }
      fs::remove_all(stage_);
    }
    committed_ = true;
  }

 private:
  fs::path target_, stage_;
  bool committed_ = false;
};

std::vector<std::string> csv_header(const RunConfig& cfg) {
  return {std::string(kToolVersion), "config " + cfg.to_json()};
}

void write_json_file(const json& j, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

json config_json(const RunConfig& cfg) { return json::parse(cfg.to_json()); }

json metrics_json(const ConfusionMetrics& m) {
  json degenerate = json::array();
  if (m.sensitivity_degenerate) degenerate.push_back("sensitivity");
  if (m.specificity_degenerate) degenerate.push_back("specificity");
  if (m.precision_degenerate) degenerate.push_back("precision");
  return {{"tp", m.tp},
          {"fp", m.fp},
          {"tn", m.tn},
          {"fn", m.fn},
          {"sensitivity", m.sensitivity},
          {"specificity", m.specificity},
          {"precision", m.precision},
          {"f1", m.f1},
          {"accuracy", m.accuracy},
          {"degenerate_rates", degenerate}};
}

RunConfig load_config(const std::string& config_path) {
  if (config_path.empty()) return RunConfig{};
  return RunConfig::from_file(config_path);
}

// Loads the preprocessed samples listed in a manifest (MIP2 files).
std::vector<Sample> load_samples(const fs::path& manifest_path) {
  const auto rows = load_manifest(manifest_path);
  const fs::path dir = manifest_path.parent_path();
  std::vector<Sample> samples;
  samples.reserve(rows.size());
  for (const auto& row : rows) {
    Sample s = load_sample(dir / row.file);
    if (s.label != row.label)
      throw DataError("sample '" + row.file + "' label disagrees with manifest");
    s.seed = row.seed;
    samples.push_back(std::move(s));
  }
  return samples;
}

void permute_labels(std::vector<Sample>& samples, uint64_t seed) {
  std::vector<int> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.push_back(s.label);
  Rng rng(seed);
  for (size_t i = labels.size(); i > 1; --i)
    std::swap(labels[i - 1], labels[(size_t)rng.next_index(i)]);
  for (size_t i = 0; i < samples.size(); ++i) {
    samples[i].label = labels[i];
    if (!labels[i]) samples[i].mask.reset();
  }
}

// ---- gen --------------------------------------------------------------------

int cmd_gen(const std::string& config_path, int n, double prevalence, int64_t seed,
            const std::string& out) {
  RunConfig cfg = load_config(config_path);
  if (prevalence >= 0.0) cfg.gen.prevalence = (float)prevalence;
  if (seed >= 0) cfg.train.seed = (uint64_t)seed;
  cfg.validate();

  OutputStager stager(out);
  gen_dataset(n, cfg.gen, cfg.train.seed, stager.dir(), csv_header(cfg));
  stager.commit();
  std::printf("gen: wrote %d studies to %s\n", n, out.c_str());
  return 0;
}

// ---- preprocess -------------------------------------------------------------

int cmd_preprocess(const std::string& config_path, const std::string& manifest,
                   const std::string& regime_name_s, const std::string& out) {
  RunConfig cfg = load_config(config_path);
  if (!regime_name_s.empty()) cfg.train.regime = regime_from_name(regime_name_s);
  cfg.validate();

  const auto rows = load_manifest(manifest);
  const fs::path src_dir = fs::path(manifest).parent_path();

  OutputStager stager(out);
  std::vector<ManifestRow> out_rows(rows.size());
  std::vector<uint64_t> aug_calls(rows.size(), 0);
  const int workers = worker_count();
  std::exception_ptr err;

#pragma omp parallel for num_threads(workers) schedule(dynamic) if (workers > 1)
  for (int64_t i = 0; i < (int64_t)rows.size(); ++i) {
    try {
      const auto& row = rows[(size_t)i];
      LabeledStudy study;
      study.volume = load_volume(src_dir / row.file);
      study.positive = row.label == 1;
      study.seed = row.seed;
      if (study.positive) {
        const fs::path mask_file = mask_path_for(src_dir / row.file);
        if (fs::exists(mask_file)) {
          const Volume mask_vol = load_volume(mask_file);
          study.aneurysm_mask.resize(mask_vol.voxels.size());
          for (size_t v = 0; v < mask_vol.voxels.size(); ++v)
            study.aneurysm_mask[v] = mask_vol.voxels[v] > 0.5f ? 1 : 0;
        }
      }
      Rng rng(derive_seed(cfg.train.seed, 0x9E000000ull + (uint64_t)i));
      const Sample sample = preprocess_study(study, cfg.preproc, cfg.train.regime, cfg.augment,
                                             rng, &aug_calls[(size_t)i]);
      char name[32];
      std::snprintf(name, sizeof(name), "sample_%05lld.mip2", (long long)i);
      save_sample(sample, stager.dir() / name);
      out_rows[(size_t)i] = {name, sample.label, row.seed};
    } catch (...) {
#pragma omp critical
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
  save_manifest(out_rows, stager.dir() / "manifest.csv", csv_header(cfg));
  stager.commit();
  const uint64_t total_aug = std::accumulate(aug_calls.begin(), aug_calls.end(), (uint64_t)0);
  std::printf("preprocess: %zu samples (%s regime, %llu augment calls) -> %s\n", rows.size(),
              regime_name(cfg.train.regime), (unsigned long long)total_aug, out.c_str());
  return 0;
}

// ---- train ------------------------------------------------------------------

int cmd_train(const std::string& config_path, const std::string& data,
              const std::string& val_data, double val_frac, int64_t permute_seed,
              const std::string& out) {
  RunConfig cfg = load_config(config_path);
  cfg.validate();

  std::vector<Sample> train_set = load_samples(data);
  std::vector<Sample> val_set;
  if (!val_data.empty()) {
    val_set = load_samples(val_data);
  } else {
    if (!(val_frac > 0.0 && val_frac < 1.0))
      throw UsageError("train: need --val-data or --val-frac in (0,1)");
    // Stratified holdout: last ceil(frac*k) members of each class stream.
    std::vector<int> labels;
    for (const auto& s : train_set) labels.push_back(s.label);
    const int k = std::max(2, (int)std::lround(1.0 / val_frac));
    const FoldSplit split = stratified_kfold(labels, k, cfg.train.seed);
    std::vector<Sample> tr, va;
    for (size_t i = 0; i < train_set.size(); ++i)
      (split.assignment[i] == 0 ? va : tr).push_back(std::move(train_set[i]));
    train_set = std::move(tr);
    val_set = std::move(va);
  }
  if (permute_seed >= 0) {
    permute_labels(train_set, derive_seed((uint64_t)permute_seed, 1));
    permute_labels(val_set, derive_seed((uint64_t)permute_seed, 2));
  }

  Rng init_rng(derive_seed(cfg.train.seed, 0x1));
  SAMM2DModel model = build_model(cfg.model, init_rng);
  const ParamTable table = count_params(model);

  TrainResult result = train_one(std::move(model), train_set, val_set, cfg.train, cfg.optim,
                                 cfg.focal, cfg.augment);

  OutputStager stager(out);
  save_checkpoint(result.model, stager.dir() / "checkpoint.smm2");
  result.history.save_csv(stager.dir() / "history.csv", csv_header(cfg));

  {
    std::ofstream params_csv(stager.dir() / "params.csv", std::ios::trunc);
    for (const auto& line : csv_header(cfg)) params_csv << "# " << line << "\n";
    params_csv << "layer,count\n";
    for (const auto& layer : table.layers) params_csv << layer.name << "," << layer.count << "\n";
    params_csv << "total," << table.total << "\n";
  }

  double val_auc_at_best = 0.0;
  for (const auto& rec : result.history.records)
    if (rec.epoch == result.best_epoch) val_auc_at_best = rec.val_auc;

  json summary{{"version", kToolVersion},
               {"config", config_json(cfg)},
               {"train_samples", train_set.size()},
               {"val_samples", val_set.size()},
               {"labels_permuted", permute_seed >= 0},
               {"param_total", table.total},
               {"best_epoch", result.best_epoch},
               {"best_val_loss", result.best_val_loss},
               {"val_auc_at_best", val_auc_at_best},
               {"epochs_run", result.epochs_run},
               {"augment_calls", result.augment_calls},
               {"checkpoint", "checkpoint.smm2"},
               {"history", "history.csv"}};
  write_json_file(summary, stager.dir() / "train_summary.json");
  stager.commit();
  std::printf("train: best epoch %d (val loss %.6f, val AUC %.4f) after %d epochs -> %s\n",
              result.best_epoch, result.best_val_loss, val_auc_at_best, result.epochs_run,
              out.c_str());
  return 0;
}

// ---- cv ---------------------------------------------------------------------

json aggregate_json(const Aggregate& a) { return {{"mean", a.mean}, {"sd", a.sd}}; }

int cmd_cv(const std::string& config_path, const std::string& data, int k,
           const std::string& out) {
  RunConfig cfg = load_config(config_path);
  cfg.validate();
  const std::vector<Sample> samples = load_samples(data);

  const CvResult cv = run_cv(samples, k, cfg.model, cfg.train, cfg.optim, cfg.focal, cfg.augment);

  OutputStager stager(out);
  save_cv_csv(cv, stager.dir() / "cv_metrics.csv", csv_header(cfg));
  json folds = json::array();
  for (const auto& f : cv.folds)
    folds.push_back({{"fold", f.fold},
                     {"auc", f.auc},
                     {"sensitivity", f.sensitivity},
                     {"specificity", f.specificity},
                     {"precision", f.precision},
                     {"f1", f.f1},
                     {"tau_star", f.tau_star},
                     {"best_epoch", f.best_epoch}});
  json summary{{"version", kToolVersion},
               {"config", config_json(cfg)},
               {"k", k},
               {"n_samples", samples.size()},
               {"folds", folds},
               {"aggregate",
                {{"auc", aggregate_json(cv.auc)},
                 {"sensitivity", aggregate_json(cv.sensitivity)},
                 {"specificity", aggregate_json(cv.specificity)},
                 {"precision", aggregate_json(cv.precision)},
                 {"f1", aggregate_json(cv.f1)}}},
               {"augment_calls", cv.augment_calls}};
  write_json_file(summary, stager.dir() / "cv_summary.json");
  stager.commit();
  std::printf("cv: k=%d AUC %.4f ± %.4f -> %s\n", k, cv.auc.mean, cv.auc.sd, out.c_str());
  return 0;
}

// ---- ablation ---------------------------------------------------------------

int cmd_ablation(const std::string& config_path, const std::string& data, int k,
                 const std::string& out) {
  RunConfig cfg = load_config(config_path);
  cfg.validate();
  const std::vector<Sample> samples = load_samples(data);

  const auto rows =
      run_ablation(samples, k, cfg.model, cfg.train, cfg.optim, cfg.focal, cfg.augment);

  OutputStager stager(out);
  save_ablation_csv(rows, stager.dir() / "ablation.csv", csv_header(cfg));
  json jrows = json::array();
  for (const auto& r : rows)
    jrows.push_back({{"regime", regime_name(r.regime)},
                     {"auc", aggregate_json(r.auc)},
                     {"recall", aggregate_json(r.recall)},
                     {"augment_calls", r.augment_calls},
                     {"lr_encoder", r.lr_encoder},
                     {"lr_head", r.lr_head},
                     {"focal_gamma", r.focal_gamma}});
  json summary{{"version", kToolVersion},
               {"config", config_json(cfg)},
               {"k", k},
               {"n_samples", samples.size()},
               {"regimes", jrows}};
  write_json_file(summary, stager.dir() / "ablation.json");
  stager.commit();
  std::printf("ablation: 6 regimes x %d folds -> %s\n", k, out.c_str());
  return 0;
}

// ---- calibrate --------------------------------------------------------------

constexpr const char* kCostFormula =
    "savings = cohort * [prevalence*sensitivity*(cost_missed_rupture - cost_treatment)"
    " - (1-prevalence)*(1-specificity)*cost_fp_workup - cost_review]";

int cmd_calibrate(const std::string& config_path, const std::string& checkpoint,
                  const std::string& data, const std::string& out) {
  RunConfig cfg = load_config(config_path);
  cfg.validate();
  const SAMM2DModel model = load_checkpoint(checkpoint);
  const std::vector<Sample> samples = load_samples(data);

  const ScoredSet scored = score_samples(model, samples, cfg.train.batch_size);
  const double auc = roc_auc(scored);
  const SweepResult sweep = sweep_threshold(scored);
  const auto modes = operating_report(scored, sweep.tau_star, cfg.cost);
  const auto curve = roc_curve(scored);

  OutputStager stager(out);
  write_sweep_csv(sweep, stager.dir() / "tau_sweep.csv", csv_header(cfg));
  write_roc_csv(curve, stager.dir() / "roc.csv", csv_header(cfg));
  write_roc_svg(curve, stager.dir() / "roc.svg");

  json jmodes = json::array();
  for (const auto& m : modes) {
    json jm = metrics_json(m.metrics);
    jm["name"] = m.name;
    jm["tau"] = m.tau;
    jm["savings_per_1000"] = m.projected_savings;
    jmodes.push_back(jm);
  }
  json report{{"version", kToolVersion},
              {"config", config_json(cfg)},
              {"n_samples", samples.size()},
              {"auc", auc},
              {"tau_star", sweep.tau_star},
              {"f1_star", sweep.f1_star},
              {"sweep", {{"lo", 0.1}, {"hi", 0.9}, {"step", 0.001}}},
              {"operating_modes", jmodes},
              {"cost_formula", kCostFormula},
              {"series", {{"roc", "roc.csv"}, {"tau_sweep", "tau_sweep.csv"}, {"roc_svg", "roc.svg"}}}};
  write_json_file(report, stager.dir() / "calibration.json");
  stager.commit();
  std::printf("calibrate: AUC %.4f, tau* = %.3f (F1 %.4f) -> %s\n", auc, sweep.tau_star,
              sweep.f1_star, out.c_str());
  return 0;
}

// ---- gradcam ----------------------------------------------------------------

int cmd_gradcam(const std::string& config_path, const std::string& checkpoint,
                const std::string& data, int n, const std::string& out, bool pgm) {
  RunConfig cfg = load_config(config_path);
  cfg.validate();
  const SAMM2DModel model = load_checkpoint(checkpoint);
  const std::vector<Sample> samples = load_samples(data);

  GradCamConfig gc_cfg;
  std::vector<Heatmap> heatmaps;
  std::vector<size_t> case_indices;
  const AttentionStats stats = attention_report(model, samples, n,
                                                derive_seed(cfg.train.seed, 0xCA5E), gc_cfg,
                                                &heatmaps, &case_indices);

  OutputStager stager(out);
  json files = json::array();
  for (size_t i = 0; i < heatmaps.size(); ++i) {
    char name[48];
    std::snprintf(name, sizeof(name), "heatmap_%05zu.mip2", case_indices[i]);
    Sample hm_sample;
    hm_sample.image = heatmaps[i].values;
    hm_sample.label = 1;
    hm_sample.mask = samples[case_indices[i]].mask;
    save_sample(hm_sample, stager.dir() / name);
    files.push_back(name);
    if (pgm) {
      std::snprintf(name, sizeof(name), "heatmap_%05zu.pgm", case_indices[i]);
      save_pgm(heatmaps[i].values, stager.dir() / name);
    }
  }
  json report{{"version", kToolVersion},
              {"config", config_json(cfg)},
              {"n_cases", stats.n_cases},
              {"n_tp_available", stats.n_tp_available},
              {"used_all_tps", stats.used_all_tps},
              {"frac_tp_on_target", stats.frac_tp_on_target},
              {"mean_iou", stats.mean_iou},
              {"binarize_theta", stats.binarize_theta},
              {"dilation_radius", gc_cfg.dilation_radius},
              {"stage", gc_cfg.stage},
              {"encoder", gc_cfg.encoder},
              {"tp_tau", gc_cfg.tp_tau},
              {"heatmaps", files}};
  write_json_file(report, stager.dir() / "attention_stats.json");
  stager.commit();
  std::printf("gradcam: %d cases, hit fraction %.3f, mean IoU %.4f -> %s\n", stats.n_cases,
              stats.frac_tp_on_target, stats.mean_iou, out.c_str());
  return 0;
}

// ---- report -----------------------------------------------------------------

int cmd_report(const std::string& run_dir) {
  const fs::path dir(run_dir);
  if (!fs::exists(dir)) throw DataError("report: run dir does not exist: " + run_dir);

  json consolidated{{"version", kToolVersion}, {"run_dir", run_dir}};
  json series = json::array();
  const std::pair<const char*, const char*> sections[] = {
      {"train_summary.json", "train"},       {"cv_summary.json", "cv"},
      {"ablation.json", "ablation"},         {"calibration.json", "calibration"},
      {"attention_stats.json", "attention"},
  };
  bool found_any = false;
  for (const auto& [file, key] : sections) {
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
      if (entry.path().filename() != file) continue;
      std::ifstream in(entry.path());
      try {
        consolidated[key] = json::parse(in);
        found_any = true;
      } catch (const json::exception& e) {
        throw DataError("report: cannot parse " + entry.path().string() + ": " + e.what());
      }
      break;
    }
  }
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    const auto ext = entry.path().extension();
    if (ext == ".csv" || ext == ".svg")
      series.push_back(fs::relative(entry.path(), dir).string());
  }
  std::sort(series.begin(), series.end());
  consolidated["series"] = series;
  if (!found_any) throw DataError("report: no report sections found under " + run_dir);

  OutputStager stager((dir / "report").string());
  write_json_file(consolidated, stager.dir() / "report.json");
  stager.commit();
  std::printf("report: consolidated -> %s/report/report.json\n", run_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SAMM2D synthetic aneurysm-screening pipeline"};
  app.require_subcommand(1);

  std::string config_path, manifest, data, val_data, out, checkpoint, regime, run_dir;
  int n = 0, k = 5, n_cases = 200;
  double prevalence = -1.0, val_frac = 0.2;
  int64_t seed = -1, permute_seed = -1;
  bool pgm = false;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic labeled dataset");
  gen->add_option("--n", n, "Number of studies")->required();
  gen->add_option("--prevalence", prevalence, "Override positive prevalence");
  gen->add_option("--seed", seed, "Override dataset seed");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--config", config_path, "Run config JSON");

  auto* pre = app.add_subcommand("preprocess", "Project, normalize and cache samples");
  pre->add_option("--manifest", manifest, "Dataset manifest from gen")->required();
  pre->add_option("--config", config_path, "Run config JSON");
  pre->add_option("--regime", regime, "Augmentation regime (A1..A6)");
  pre->add_option("--out", out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train one model");
  train->add_option("--data", data, "Preprocessed manifest")->required();
  train->add_option("--val-data", val_data, "Validation manifest (else --val-frac split)");
  train->add_option("--val-frac", val_frac, "Stratified holdout fraction");
  train->add_option("--permute-labels", permute_seed,
                    "Permute labels with this seed (leakage control)");
  train->add_option("--config", config_path, "Run config JSON");
  train->add_option("--out", out, "Output directory")->required();

  auto* cv = app.add_subcommand("cv", "Stratified k-fold cross-validation");
  cv->add_option("--data", data, "Preprocessed manifest")->required();
  cv->add_option("--k", k, "Folds");
  cv->add_option("--config", config_path, "Run config JSON");
  cv->add_option("--out", out, "Output directory")->required();

  auto* abl = app.add_subcommand("ablation", "Six-regime augmentation ablation");
  abl->add_option("--data", data, "Preprocessed manifest")->required();
  abl->add_option("--k", k, "Folds per regime");
  abl->add_option("--config", config_path, "Run config JSON");
  abl->add_option("--out", out, "Output directory")->required();

  auto* cal = app.add_subcommand("calibrate", "Threshold sweep and operating modes");
  cal->add_option("--checkpoint", checkpoint, "SMM2 checkpoint")->required();
  cal->add_option("--data", data, "Preprocessed manifest")->required();
  cal->add_option("--config", config_path, "Run config JSON");
  cal->add_option("--out", out, "Output directory")->required();

  auto* gc = app.add_subcommand("gradcam", "Heatmaps and attention stats");
  gc->add_option("--checkpoint", checkpoint, "SMM2 checkpoint")->required();
  gc->add_option("--data", data, "Preprocessed manifest")->required();
  gc->add_option("--n", n_cases, "True-positive cases to analyze");
  gc->add_option("--config", config_path, "Run config JSON");
  gc->add_option("--out", out, "Output directory")->required();
  gc->add_flag("--pgm", pgm, "Also write PGM previews");

  auto* rep = app.add_subcommand("report", "Consolidate a run directory");
  rep->add_option("--run-dir", run_dir, "Directory with prior outputs")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen(config_path, n, prevalence, seed, out);
    if (pre->parsed()) return cmd_preprocess(config_path, manifest, regime, out);
    if (train->parsed())
      return cmd_train(config_path, data, val_data, val_frac, permute_seed, out);
    if (cv->parsed()) return cmd_cv(config_path, data, k, out);
    if (abl->parsed()) return cmd_ablation(config_path, data, k, out);
    if (cal->parsed()) return cmd_calibrate(config_path, checkpoint, data, out);
    if (gc->parsed()) return cmd_gradcam(config_path, checkpoint, data, n_cases, out, pgm);
    if (rep->parsed()) return cmd_report(run_dir);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 4;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
