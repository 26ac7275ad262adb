#include "samm2d/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace samm2d {

void ScoredSet::validate() const {
  if (scores.size() != labels.size())
    throw DataError("scored set: scores and labels differ in length");
  if (scores.empty()) throw DataError("scored set: empty");
  for (float s : scores)
    if (!(s >= 0.0f && s <= 1.0f))
      throw DataError("scored set: score outside [0,1]");
  for (int l : labels)
    if (l != 0 && l != 1) throw DataError("scored set: label outside {0,1}");
}

size_t ScoredSet::positives() const {
  size_t p = 0;
  for (int l : labels) p += (size_t)l;
  return p;
}

double roc_auc(const ScoredSet& set) {
  set.validate();
  const size_t n = set.scores.size();
  const size_t pos = set.positives();
  const size_t neg = n - pos;
  if (pos == 0 || neg == 0)
    throw SingleClassError("roc_auc: need at least one positive and one negative");

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return set.scores[a] < set.scores[b]; });

  // Average ranks over tie groups; rank sum of positives gives the
  // Mann-Whitney statistic.
  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && set.scores[order[j]] == set.scores[order[i]]) ++j;
    const double avg_rank = ((double)(i + 1) + (double)j) / 2.0;  // 1-based
    for (size_t k = i; k < j; ++k)
      if (set.labels[order[k]] == 1) rank_sum_pos += avg_rank;
    i = j;
  }
  const double u = rank_sum_pos - (double)pos * ((double)pos + 1.0) / 2.0;
  return u / ((double)pos * (double)neg);
}

ConfusionMetrics confusion_at(const ScoredSet& set, double tau) {
  set.validate();
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("confusion_at: tau must be in [0,1]");
  ConfusionMetrics m;
  for (size_t i = 0; i < set.scores.size(); ++i) {
    const bool pred = (double)set.scores[i] >= tau;
    if (set.labels[i] == 1)
      pred ? ++m.tp : ++m.fn;
    else
      pred ? ++m.fp : ++m.tn;
  }
  auto rate = [](size_t num, size_t den, bool& degenerate) {
    if (den == 0) {
      degenerate = true;
      return 0.0;
    }
    return (double)num / (double)den;
  };
  m.sensitivity = rate(m.tp, m.tp + m.fn, m.sensitivity_degenerate);
  m.specificity = rate(m.tn, m.tn + m.fp, m.specificity_degenerate);
  m.precision = rate(m.tp, m.tp + m.fp, m.precision_degenerate);
  m.accuracy = (double)(m.tp + m.tn) / (double)set.scores.size();
  const double pr = m.precision + m.sensitivity;
  m.f1 = pr > 0.0 ? 2.0 * m.precision * m.sensitivity / pr : 0.0;
  return m;
}

SweepResult sweep_threshold(const ScoredSet& set, double lo, double hi, double step) {
  set.validate();
  if (!(lo < hi) || step <= 0.0) throw ConfigError("sweep_threshold: need lo < hi and step > 0");
  SweepResult result;
  const int steps = (int)std::llround((hi - lo) / step);
  result.curve.reserve((size_t)steps + 1);
  for (int i = 0; i <= steps; ++i) {
    const double tau = lo + (double)i * step;
    const double f1 = confusion_at(set, tau).f1;
    result.curve.push_back({tau, f1});
    if (i == 0 || f1 > result.f1_star) {  // strict '>' keeps the smallest tau on ties
      result.f1_star = f1;
      result.tau_star = tau;
    }
  }
  return result;
}

void CostParams::validate() const {
  if (!(prevalence > 0.0 && prevalence < 1.0))
    throw ConfigError("cost: prevalence must be in (0,1)");
  if (cost_missed_rupture < 0.0 || cost_treatment < 0.0 || cost_fp_workup < 0.0 ||
      cost_review < 0.0)
    throw ConfigError("cost: costs must be >= 0");
}

double cost_savings(const ConfusionMetrics& metrics, const CostParams& cost, int cohort) {
  cost.validate();
  if (cohort <= 0) throw ConfigError("cost_savings: cohort must be > 0");
  const double averted = cost.prevalence * metrics.sensitivity *
                         (cost.cost_missed_rupture - cost.cost_treatment);
  const double workups = (1.0 - cost.prevalence) * (1.0 - metrics.specificity) *
                         cost.cost_fp_workup;
  return (double)cohort * (averted - workups - cost.cost_review);
}

std::vector<OperatingMode> operating_report(const ScoredSet& set, std::optional<double> tau_star,
                                            const CostParams& cost) {
  const double balanced_tau = tau_star.value_or(0.391);
  const std::pair<std::string, double> modes[3] = {
      {"screening", 0.25}, {"balanced", balanced_tau}, {"diagnostic", 0.60}};
  std::vector<OperatingMode> out;
  for (const auto& [name, tau] : modes) {
    OperatingMode mode;
    mode.name = name;
    mode.tau = tau;
    mode.metrics = confusion_at(set, tau);
    mode.projected_savings = cost_savings(mode.metrics, cost, 1000);
    out.push_back(std::move(mode));
  }
  return out;
}

std::vector<RocPoint> roc_curve(const ScoredSet& set) {
  set.validate();
  const size_t pos = set.positives();
  const size_t neg = set.scores.size() - pos;
  if (pos == 0 || neg == 0)
    throw SingleClassError("roc_curve: need at least one positive and one negative");

  std::vector<size_t> order(set.scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return set.scores[a] > set.scores[b]; });

  std::vector<RocPoint> curve{{0.0, 0.0}};
  size_t tp = 0, fp = 0, i = 0;
  const size_t n = order.size();
  while (i < n) {
    size_t j = i;
    while (j < n && set.scores[order[j]] == set.scores[order[i]]) ++j;
    for (size_t k = i; k < j; ++k) set.labels[order[k]] == 1 ? ++tp : ++fp;
    curve.push_back({(double)fp / (double)neg, (double)tp / (double)pos});
    i = j;
  }
  return curve;
}

void write_roc_csv(const std::vector<RocPoint>& curve, const std::filesystem::path& path,
                   const std::vector<std::string>& header_lines) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("write_roc_csv: cannot write " + path.string());
  for (const auto& line : header_lines) out << "# " << line << "\n";
  out << "fpr,tpr\n";
  char buf[64];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g\n", p.fpr, p.tpr);
    out << buf;
  }
}

void write_sweep_csv(const SweepResult& sweep, const std::filesystem::path& path,
                     const std::vector<std::string>& header_lines) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("write_sweep_csv: cannot write " + path.string());
  for (const auto& line : header_lines) out << "# " << line << "\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "# tau_star=%.3f f1_star=%.9g\n", sweep.tau_star, sweep.f1_star);
  out << buf << "tau,f1\n";
  for (const auto& p : sweep.curve) {
    std::snprintf(buf, sizeof(buf), "%.3f,%.9g\n", p.tau, p.f1);
    out << buf;
  }
}

void write_roc_svg(const std::vector<RocPoint>& curve, const std::filesystem::path& path) {
  const int size = 400, margin = 40;
  const double span = size - 2 * margin;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("write_roc_svg: cannot write " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size
      << "\" viewBox=\"0 0 " << size << " " << size << "\">\n"
      << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << span << "\" height=\""
      << span << "\" fill=\"none\" stroke=\"#888\"/>\n"
      << "<line x1=\"" << margin << "\" y1=\"" << size - margin << "\" x2=\"" << size - margin
      << "\" y2=\"" << margin << "\" stroke=\"#ccc\" stroke-dasharray=\"4\"/>\n<polyline fill=\"none\" stroke=\"#c33\" stroke-width=\"2\" points=\"";
  char buf[64];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", margin + p.fpr * span,
                  size - margin - p.tpr * span);
    out << buf;
  }
  out << "\"/>\n<text x=\"" << size / 2 << "\" y=\"" << size - 8
      << "\" text-anchor=\"middle\" font-size=\"12\">FPR</text>\n"
      << "<text x=\"12\" y=\"" << size / 2
      << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 12 " << size / 2
      << ")\">TPR</text>\n</svg>\n";
}

}  // namespace samm2d
