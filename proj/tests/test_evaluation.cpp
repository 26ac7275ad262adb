#include <doctest.h>

#include <cmath>

#include "samm2d/evaluation.hpp"
#include "samm2d/rng.hpp"

using namespace samm2d;

namespace {

// O(P*N) pairwise Mann-Whitney oracle with explicit tie handling.
double pairwise_auc(const ScoredSet& set) {
  double wins = 0.0;
  size_t pairs = 0;
  for (size_t i = 0; i < set.scores.size(); ++i) {
    if (set.labels[i] != 1) continue;
    for (size_t j = 0; j < set.scores.size(); ++j) {
      if (set.labels[j] != 0) continue;
      ++pairs;
      if (set.scores[i] > set.scores[j])
        wins += 1.0;
      else if (set.scores[i] == set.scores[j])
        wins += 0.5;
    }
  }
  return wins / (double)pairs;
}

ScoredSet random_set(Rng& rng, size_t max_n) {
  ScoredSet set;
  const size_t n = 2 + rng.next_index(max_n - 1);
  for (size_t i = 0; i < n; ++i) {
    // Quantized scores inject plenty of ties.
    const double q = rng.next_index(20) / 19.0;
    set.scores.push_back((float)q);
    set.labels.push_back((int)rng.next_index(2));
  }
  // Guarantee both classes.
  set.labels[0] = 0;
  set.labels[n - 1] = 1;
  return set;
}

}  // namespace

TEST_CASE("roc_auc closed cases") {
  ScoredSet separable{{0.1f, 0.2f, 0.8f, 0.9f}, {0, 0, 1, 1}};
  CHECK(roc_auc(separable) == doctest::Approx(1.0));

  ScoredSet constant{{0.5f, 0.5f, 0.5f, 0.5f}, {0, 1, 0, 1}};
  CHECK(roc_auc(constant) == doctest::Approx(0.5));

  ScoredSet spec_case{{0.1f, 0.4f, 0.35f, 0.8f}, {0, 0, 1, 1}};
  CHECK(roc_auc(spec_case) == doctest::Approx(0.75));

  ScoredSet single{{0.2f, 0.4f}, {1, 1}};
  CHECK_THROWS_AS(roc_auc(single), SingleClassError);
}

TEST_CASE("roc_auc equals the pairwise oracle exactly on 1000 fuzzed tied sets") {
  Rng rng(314159);
  for (int it = 0; it < 1000; ++it) {
    const ScoredSet set = random_set(rng, 120);
    CHECK(std::abs(roc_auc(set) - pairwise_auc(set)) <= 1e-9);
  }
}

TEST_CASE("AUC is invariant under strictly monotone score transforms") {
  Rng rng(2718);
  for (int it = 0; it < 20; ++it) {
    ScoredSet set;
    for (int i = 0; i < 60; ++i) {
      set.scores.push_back((float)rng.next_double());
      set.labels.push_back((int)rng.next_index(2));
    }
    set.labels[0] = 0;
    set.labels[1] = 1;
    const double base = roc_auc(set);

    ScoredSet cubed = set;
    for (auto& s : cubed.scores) s = s * s * s;
    CHECK(roc_auc(cubed) == doctest::Approx(base).epsilon(1e-12));

    ScoredSet logistic = set;
    for (auto& s : logistic.scores) s = (float)(1.0 / (1.0 + std::exp(-(3.0 * s + 0.5))));
    CHECK(roc_auc(logistic) == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("complement rule holds for tie-free scores") {
  Rng rng(99);
  ScoredSet set;
  for (int i = 0; i < 50; ++i) {
    set.scores.push_back((float)((i + 1) / 51.0 + rng.next_double() * 1e-4));
    set.labels.push_back((int)rng.next_index(2));
  }
  set.labels[0] = 0;
  set.labels[1] = 1;
  ScoredSet flipped = set;
  for (auto& s : flipped.scores) s = 1.0f - s;
  CHECK(roc_auc(set) + roc_auc(flipped) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("confusion_at boundary thresholds") {
  ScoredSet set{{0.1f, 0.4f, 0.35f, 0.8f}, {0, 0, 1, 1}};
  const ConfusionMetrics at0 = confusion_at(set, 0.0);
  CHECK(at0.sensitivity == doctest::Approx(1.0));
  CHECK(at0.fp == 2);

  const ConfusionMetrics high = confusion_at(set, 0.95);
  CHECK(high.sensitivity == doctest::Approx(0.0));
  CHECK(high.specificity == doctest::Approx(1.0));

  const ConfusionMetrics mid = confusion_at(set, 0.375);
  CHECK(mid.tp == 1);
  CHECK(mid.fn == 1);
  CHECK(mid.tn == 1);  // 0.1 below, 0.4 above
  CHECK(mid.fp == 1);
}

TEST_CASE("confusion_at spec hand-count at tau between the positives") {
  // Positives 0.35 and 0.8; tau 0.5 -> tp=1 fn=1 tn=2 fp=0
  ScoredSet set{{0.1f, 0.4f, 0.35f, 0.8f}, {0, 0, 1, 1}};
  const ConfusionMetrics m = confusion_at(set, 0.5);
  CHECK(m.tp == 1);
  CHECK(m.fn == 1);
  CHECK(m.tn == 2);
  CHECK(m.fp == 0);
  CHECK(m.precision == doctest::Approx(1.0));
  CHECK(m.sensitivity == doctest::Approx(0.5));
  CHECK(m.f1 == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("degenerate rates are zero and flagged") {
  ScoredSet set{{0.1f, 0.2f}, {0, 0}};
  const ConfusionMetrics m = confusion_at(set, 0.5);
  CHECK(m.sensitivity == 0.0);
  CHECK(m.sensitivity_degenerate);
  CHECK(m.precision_degenerate);
  CHECK_FALSE(m.specificity_degenerate);
}

TEST_CASE("sensitivity falls and specificity rises with tau") {
  Rng rng(555);
  ScoredSet set;
  for (int i = 0; i < 200; ++i) {
    set.scores.push_back((float)rng.next_double());
    set.labels.push_back((int)rng.next_index(2));
  }
  double prev_sens = 2.0, prev_spec = -1.0;
  for (double tau = 0.0; tau <= 1.0; tau += 0.05) {
    const ConfusionMetrics m = confusion_at(set, tau);
    CHECK(m.sensitivity <= prev_sens + 1e-12);
    CHECK(m.specificity >= prev_spec - 1e-12);
    prev_sens = m.sensitivity;
    prev_spec = m.specificity;
  }
}

TEST_CASE("sweep_threshold matches a brute-force scan and keeps the smallest tied tau") {
  Rng rng(808);
  for (int it = 0; it < 100; ++it) {
    ScoredSet set;
    const int n = 5 + (int)rng.next_index(60);
    for (int i = 0; i < n; ++i) {
      set.scores.push_back((float)(rng.next_index(10) / 9.0));
      set.labels.push_back((int)rng.next_index(2));
    }
    const SweepResult sweep = sweep_threshold(set);

    double best_f1 = -1.0, best_tau = 0.0;
    for (int i = 0; i <= 800; ++i) {
      const double tau = 0.1 + i * 0.001;
      const double f1 = confusion_at(set, tau).f1;
      if (f1 > best_f1) {
        best_f1 = f1;
        best_tau = tau;
      }
    }
    CHECK(sweep.f1_star == doctest::Approx(best_f1).epsilon(1e-12));
    CHECK(sweep.tau_star == doctest::Approx(best_tau).epsilon(1e-9));
    CHECK(sweep.curve.size() == 801);
  }
}

TEST_CASE("sweep on a separable set reaches F1 = 1 inside the class gap") {
  ScoredSet set{{0.05f, 0.2f, 0.75f, 0.9f}, {0, 0, 1, 1}};
  const SweepResult sweep = sweep_threshold(set);
  CHECK(sweep.f1_star == doctest::Approx(1.0));
  CHECK(sweep.tau_star > 0.2);
  CHECK(sweep.tau_star <= 0.75);
}

TEST_CASE("sweep over a constant-F1 grid returns lo by the tie rule") {
  // All scores above hi: every tau predicts positive, F1 constant.
  ScoredSet set{{0.95f, 0.96f, 0.97f}, {1, 0, 1}};
  const SweepResult sweep = sweep_threshold(set);
  CHECK(sweep.tau_star == doctest::Approx(0.1));
}

TEST_CASE("re-sweeping around tau_star with a finer step finds nothing better on the grid") {
  Rng rng(4242);
  ScoredSet set;
  for (int i = 0; i < 80; ++i) {
    set.scores.push_back((float)rng.next_double());
    set.labels.push_back((int)rng.next_index(2));
  }
  const SweepResult coarse = sweep_threshold(set);
  const double lo = std::max(0.1, coarse.tau_star - 0.01);
  const double hi = std::min(0.9, coarse.tau_star + 0.01);
  const SweepResult fine = sweep_threshold(set, lo, hi, 0.0001);
  CHECK(fine.f1_star <= coarse.f1_star + 1e-12);
}

TEST_CASE("operating_report: fixed schema, calibrated balanced row") {
  ScoredSet set{{0.1f, 0.3f, 0.5f, 0.7f, 0.9f, 0.2f}, {0, 0, 1, 1, 1, 0}};
  CostParams cost;
  const auto modes = operating_report(set, 0.45, cost);
  REQUIRE(modes.size() == 3);
  CHECK(modes[0].name == "screening");
  CHECK(modes[0].tau == doctest::Approx(0.25));
  CHECK(modes[1].name == "balanced");
  CHECK(modes[1].tau == doctest::Approx(0.45));
  CHECK(modes[2].name == "diagnostic");
  CHECK(modes[2].tau == doctest::Approx(0.60));

  // Without a calibrated tau* the balanced row uses the published 0.391.
  const auto fallback = operating_report(set, std::nullopt, cost);
  CHECK(fallback[1].tau == doctest::Approx(0.391));
}

TEST_CASE("cost_savings closed cases") {
  CostParams cost;
  ConfusionMetrics m;
  m.sensitivity = 0.0;
  m.specificity = 1.0;
  CHECK(cost_savings(m, cost, 1000) == doctest::Approx(0.0));

  CostParams zero;
  zero.cost_missed_rupture = zero.cost_treatment = zero.cost_fp_workup = zero.cost_review = 0.0;
  m.sensitivity = 0.9;
  m.specificity = 0.5;
  CHECK(cost_savings(m, zero, 1000) == doctest::Approx(0.0));

  // Documented example parameterization near the published figure.
  CostParams ex;
  ex.prevalence = 0.02;
  ex.cost_missed_rupture = 800000.0;
  ex.cost_treatment = 50000.0;
  ex.cost_fp_workup = 2000.0;
  ex.cost_review = 0.0;
  ConfusionMetrics screening;
  screening.sensitivity = 0.95;
  screening.specificity = 0.45;
  CHECK(cost_savings(screening, ex, 1000) == doctest::Approx(13172000.0));
}

TEST_CASE("roc_curve starts at (0,0), ends at (1,1), and is monotone") {
  Rng rng(31337);
  ScoredSet set;
  for (int i = 0; i < 100; ++i) {
    set.scores.push_back((float)(rng.next_index(8) / 7.0));
    set.labels.push_back((int)rng.next_index(2));
  }
  set.labels[0] = 0;
  set.labels[1] = 1;
  const auto curve = roc_curve(set);
  CHECK(curve.front().fpr == 0.0);
  CHECK(curve.front().tpr == 0.0);
  CHECK(curve.back().fpr == doctest::Approx(1.0));
  CHECK(curve.back().tpr == doctest::Approx(1.0));
  for (size_t i = 1; i < curve.size(); ++i) {
    CHECK(curve[i].fpr >= curve[i - 1].fpr);
    CHECK(curve[i].tpr >= curve[i - 1].tpr);
  }
}
