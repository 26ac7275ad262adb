#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "samm2d/errors.hpp"

namespace samm2d {

class SingleClassError : public DataError {
 public:
  explicit SingleClassError(const std::string& msg) : DataError(msg) {}
};

struct ScoredSet {
  std::vector<float> scores;  // in [0,1]
  std::vector<int> labels;    // 0/1, same length

  void validate() const;
  size_t positives() const;
};

struct ConfusionMetrics {
  size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double sensitivity = 0.0, specificity = 0.0, precision = 0.0, f1 = 0.0, accuracy = 0.0;
  // Set when the corresponding denominator was zero (rate reported as 0).
  bool sensitivity_degenerate = false, specificity_degenerate = false,
       precision_degenerate = false;
};

// Mann-Whitney AUC with ties counted half, computed via average ranks in f64;
// algebraically identical to the all-pairs statistic. Throws SingleClassError
// unless both classes are present.
double roc_auc(const ScoredSet& set);

// Prediction rule: positive iff score >= tau.
ConfusionMetrics confusion_at(const ScoredSet& set, double tau);

struct SweepPoint {
  double tau = 0.0;
  double f1 = 0.0;
};
struct SweepResult {
  double tau_star = 0.0;
  double f1_star = 0.0;
  std::vector<SweepPoint> curve;
};
// Grid argmax of F1 over tau in [lo, hi] at the given step; ties keep the
// smallest tau.
SweepResult sweep_threshold(const ScoredSet& set, double lo = 0.1, double hi = 0.9,
                            double step = 0.001);

struct CostParams {
  double prevalence = 0.02;
  double cost_missed_rupture = 800000.0;
  double cost_treatment = 50000.0;
  double cost_fp_workup = 2000.0;
  double cost_review = 0.0;  // per patient

  void validate() const;
};

// Net savings for `cohort` patients:
//   cohort * [ prevalence*sensitivity*(cost_missed_rupture - cost_treatment)
//              - (1-prevalence)*(1-specificity)*cost_fp_workup
//              - cost_review ]
double cost_savings(const ConfusionMetrics& metrics, const CostParams& cost, int cohort = 1000);

struct OperatingMode {
  std::string name;  // screening | balanced | diagnostic
  double tau = 0.0;
  ConfusionMetrics metrics;
  double projected_savings = 0.0;  // per 1,000 patients
};

// Three fixed modes: screening (0.25), balanced (tau_star when available,
// else 0.391), diagnostic (0.60).
std::vector<OperatingMode> operating_report(const ScoredSet& set, std::optional<double> tau_star,
                                            const CostParams& cost);

struct RocPoint {
  double fpr = 0.0, tpr = 0.0;
};
std::vector<RocPoint> roc_curve(const ScoredSet& set);

void write_roc_csv(const std::vector<RocPoint>& curve, const std::filesystem::path& path,
                   const std::vector<std::string>& header_lines = {});
void write_roc_svg(const std::vector<RocPoint>& curve, const std::filesystem::path& path);
void write_sweep_csv(const SweepResult& sweep, const std::filesystem::path& path,
                     const std::vector<std::string>& header_lines = {});

}  // namespace samm2d
