#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "samm2d/evaluation.hpp"
#include "samm2d/imaging.hpp"
#include "samm2d/model.hpp"
#include "samm2d/optim.hpp"

namespace samm2d {

struct TrainConfig {
  int epochs_max = 50;
  int batch_size = 16;
  int early_stop_patience = 15;
  uint64_t seed = 1234;
  Regime regime = Regime::A1_none;
  int eval_every = 1;
  // A validation loss counts as an improvement when it beats the best seen
  // by at least this much; `patience` consecutive evals without one stop the
  // run (so training never passes best_epoch + patience evals).
  float min_improvement = 1e-5f;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_auc = 0.0;
  double lr_encoder = 0.0;  // effective lr at the last batch of the epoch
  double lr_head = 0.0;
};

struct History {
  std::vector<EpochRecord> records;
  void save_csv(const std::filesystem::path& path,
                const std::vector<std::string>& header_lines = {}) const;
};

struct FoldSplit {
  int k = 0;
  std::vector<int> assignment;  // sample index -> fold in [0,k)

  std::vector<size_t> fold_indices(int fold) const;
  std::vector<size_t> complement_indices(int fold) const;
};

// Within each class: seed-shuffle, then deal round-robin. Per-fold positive
// counts differ by at most 1. Requires every class to have >= k members.
FoldSplit stratified_kfold(const std::vector<int>& labels, int k, uint64_t seed);

struct TrainResult {
  SAMM2DModel model;  // parameters of the best (lowest val loss) epoch
  History history;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  uint64_t augment_calls = 0;
  int epochs_run = 0;
};

// One training run. Regime deltas: A5 raises focal gamma to 5, A6 multiplies
// both group learning rates by 10; A2..A6 apply their on-the-fly transforms
// each epoch. Deterministic in TrainConfig::seed.
TrainResult train_one(SAMM2DModel model, const std::vector<Sample>& train_set,
                      const std::vector<Sample>& val_set, const TrainConfig& train_cfg,
                      const OptimConfig& optim_cfg, const FocalParams& focal,
                      const AugmentParams& aug_params);

std::vector<ParamGroup> make_param_groups(const SAMM2DModel& model, const OptimConfig& cfg);

// Eval-mode scores for a sample set, batched, no graph recording.
ScoredSet score_samples(const SAMM2DModel& model, const std::vector<Sample>& samples,
                        int batch_size = 32);

struct FoldMetrics {
  int fold = 0;
  double auc = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  double tau_star = 0.0;
  int best_epoch = 0;
};

struct Aggregate {
  double mean = 0.0;
  double sd = 0.0;  // sample SD (n-1)
};
Aggregate aggregate(const std::vector<double>& xs);

struct CvResult {
  std::vector<FoldMetrics> folds;
  Aggregate auc, sensitivity, specificity, precision, f1;
  uint64_t augment_calls = 0;
};

// k-fold cross-validation; fold f trains on the rest and is scored on f with
// a per-fold calibrated threshold. Folds run on SAMM2D_WORKERS threads.
CvResult run_cv(const std::vector<Sample>& samples, int k, const ModelConfig& model_cfg,
                const TrainConfig& train_cfg, const OptimConfig& optim_cfg,
                const FocalParams& focal, const AugmentParams& aug_params);

struct AblationRow {
  Regime regime = Regime::A1_none;
  Aggregate auc, recall;
  uint64_t augment_calls = 0;
  double lr_encoder = 0.0, lr_head = 0.0;  // effective base lrs for the arm
  float focal_gamma = 0.0f;
};

// One run_cv per regime, changing only that regime's deltas.
std::vector<AblationRow> run_ablation(const std::vector<Sample>& samples, int k,
                                      const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                                      const OptimConfig& optim_cfg, const FocalParams& focal,
                                      const AugmentParams& aug_params);

void save_cv_csv(const CvResult& cv, const std::filesystem::path& path,
                 const std::vector<std::string>& header_lines = {});
void save_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path,
                       const std::vector<std::string>& header_lines = {});

// Worker pool width for fold/study-level parallelism (SAMM2D_WORKERS, >= 1,
// default 1; kernels parallelize with OpenMP either way).
int worker_count();

}  // namespace samm2d
