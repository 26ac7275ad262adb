#include "samm2d/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>

namespace samm2d {

namespace {

void seeded_shuffle(std::vector<size_t>& xs, Rng& rng) {
  for (size_t i = xs.size(); i > 1; --i)
    std::swap(xs[i - 1], xs[(size_t)rng.next_index(i)]);
}

Tensor batch_tensor(const std::vector<Sample>& samples, const std::vector<size_t>& indices,
                    const std::vector<Image2D>* override_images = nullptr) {
  const int h = samples[indices[0]].image.height;
  const int w = samples[indices[0]].image.width;
  std::vector<float> data;
  data.reserve(indices.size() * (size_t)h * w);
  for (size_t pos = 0; pos < indices.size(); ++pos) {
    const Image2D& img =
        override_images ? (*override_images)[pos] : samples[indices[pos]].image;
    if (img.height != h || img.width != w)
      throw ShapeError("batch: inconsistent sample dims");
    data.insert(data.end(), img.pixels.begin(), img.pixels.end());
  }
  return Tensor::from_data({(int)indices.size(), 1, h, w}, std::move(data));
}

std::vector<float> batch_labels(const std::vector<Sample>& samples,
                                const std::vector<size_t>& indices) {
  std::vector<float> labels(indices.size());
  for (size_t i = 0; i < indices.size(); ++i) labels[i] = (float)samples[indices[i]].label;
  return labels;
}

// Mean focal loss over a set in eval mode (no graph).
double eval_loss(const SAMM2DModel& model, const std::vector<Sample>& samples,
                 const FocalParams& focal, int batch_size) {
  NoGradGuard no_grad;
  Rng rng(0);
  double total = 0.0;
  size_t i = 0;
  while (i < samples.size()) {
    const size_t end = std::min(i + (size_t)batch_size, samples.size());
    std::vector<size_t> idx(end - i);
    std::iota(idx.begin(), idx.end(), i);
    const Tensor probs = model.forward(batch_tensor(samples, idx), false, rng).prob;
    const Tensor loss = smooth_focal_loss(probs, batch_labels(samples, idx), focal);
    total += (double)loss.item() * (double)idx.size();
    i = end;
  }
  return total / (double)samples.size();
}

std::vector<std::vector<float>> snapshot_params(const SAMM2DModel& model) {
  std::vector<std::vector<float>> snap;
  for (const auto& t : model.params()) snap.push_back(t.values());
  return snap;
}

void restore_params(SAMM2DModel& model, const std::vector<std::vector<float>>& snap) {
  auto params = model.params();
  for (size_t i = 0; i < params.size(); ++i) params[i].values_mut() = snap[i];
}

}  // namespace

int worker_count() {
  const char* env = std::getenv("SAMM2D_WORKERS");
  if (!env) return 1;
  const int n = std::atoi(env);
  return n >= 1 ? n : 1;
}

void TrainConfig::validate() const {
  if (epochs_max < 1) throw ConfigError("train: epochs_max must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (early_stop_patience < 1) throw ConfigError("train: early_stop_patience must be >= 1");
  if (eval_every < 1) throw ConfigError("train: eval_every must be >= 1");
  if (min_improvement < 0.0f) throw ConfigError("train: min_improvement must be >= 0");
}

void History::save_csv(const std::filesystem::path& path,
                       const std::vector<std::string>& header_lines) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("history: cannot write " + path.string());
  for (const auto& line : header_lines) out << "# " << line << "\n";
  out << "epoch,train_loss,train_acc,val_loss,val_auc,lr_encoder,lr_head\n";
  char buf[256];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.train_loss,
                  r.train_acc, r.val_loss, r.val_auc, r.lr_encoder, r.lr_head);
    out << buf;
  }
}

std::vector<size_t> FoldSplit::fold_indices(int fold) const {
  std::vector<size_t> out;
  for (size_t i = 0; i < assignment.size(); ++i)
    if (assignment[i] == fold) out.push_back(i);
  return out;
}

std::vector<size_t> FoldSplit::complement_indices(int fold) const {
  std::vector<size_t> out;
  for (size_t i = 0; i < assignment.size(); ++i)
    if (assignment[i] != fold) out.push_back(i);
  return out;
}

FoldSplit stratified_kfold(const std::vector<int>& labels, int k, uint64_t seed) {
  if (k < 2) throw ConfigError("stratified_kfold: k must be >= 2");
  std::vector<size_t> by_class[2];
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw DataError("stratified_kfold: labels must be 0/1");
    by_class[labels[i]].push_back(i);
  }
  for (int c = 0; c < 2; ++c)
    if ((int)by_class[c].size() < k)
      throw DataError("stratified_kfold: class " + std::to_string(c) + " has " +
                      std::to_string(by_class[c].size()) + " members, needs >= " +
                      std::to_string(k));

  FoldSplit split;
  split.k = k;
  split.assignment.assign(labels.size(), -1);
  for (int c = 0; c < 2; ++c) {
    Rng rng(derive_seed(seed, (uint64_t)c));
    seeded_shuffle(by_class[c], rng);
    for (size_t i = 0; i < by_class[c].size(); ++i)
      split.assignment[by_class[c][i]] = (int)(i % (size_t)k);
  }
  return split;
}

std::vector<ParamGroup> make_param_groups(const SAMM2DModel& model, const OptimConfig& cfg) {
  ParamGroup enc1{"encoder1", {}, {}, cfg.encoder_lr};
  ParamGroup enc2{"encoder2", {}, {}, cfg.encoder_lr};
  ParamGroup head{"head", {}, {}, cfg.head_lr};
  for (const auto& np : model.named_params()) {
    ParamGroup* g = nullptr;
    if (np.name.starts_with("encoder1.")) g = &enc1;
    else if (np.name.starts_with("encoder2.")) g = &enc2;
    else if (np.name.starts_with("head.")) g = &head;
    else throw ConfigError("param group: unassigned parameter '" + np.name + "'");
    g->params.push_back(np.tensor);
    g->param_names.push_back(np.name);
  }
  std::vector<ParamGroup> groups{std::move(enc1)};
  if (!enc2.params.empty()) groups.push_back(std::move(enc2));
  groups.push_back(std::move(head));
  return groups;
}

ScoredSet score_samples(const SAMM2DModel& model, const std::vector<Sample>& samples,
                        int batch_size) {
  NoGradGuard no_grad;
  Rng rng(0);
  ScoredSet set;
  size_t i = 0;
  while (i < samples.size()) {
    const size_t end = std::min(i + (size_t)batch_size, samples.size());
    std::vector<size_t> idx(end - i);
    std::iota(idx.begin(), idx.end(), i);
    const Tensor probs = model.forward(batch_tensor(samples, idx), false, rng).prob;
    for (size_t j = 0; j < idx.size(); ++j) {
      set.scores.push_back(probs.values()[j]);
      set.labels.push_back(samples[idx[j]].label);
    }
    i = end;
  }
  return set;
}

TrainResult train_one(SAMM2DModel model, const std::vector<Sample>& train_set,
                      const std::vector<Sample>& val_set, const TrainConfig& train_cfg,
                      const OptimConfig& optim_cfg, const FocalParams& focal_in,
                      const AugmentParams& aug_params) {
  train_cfg.validate();
  optim_cfg.validate();
  if (train_set.empty() || val_set.empty())
    throw DataError("train_one: train and val sets must be nonempty");

  FocalParams focal = focal_in;
  OptimConfig optim = optim_cfg;
  if (train_cfg.regime == Regime::A5_high_gamma) focal.gamma = 5.0f;
  if (train_cfg.regime == Regime::A6_high_lr) {
    optim.encoder_lr *= 10.0f;
    optim.head_lr *= 10.0f;
  }
  focal.validate();

  auto groups = make_param_groups(model, optim);
  AdamW opt(groups, optim);
  Rng dropout_rng(derive_seed(train_cfg.seed, 0xD0));

  TrainResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  int stale = 0;
  std::vector<std::vector<float>> best_snapshot = snapshot_params(model);
  double last_val_loss = 0.0, last_val_auc = 0.0;

  const size_t n = train_set.size();
  const size_t n_batches = (n + (size_t)train_cfg.batch_size - 1) / (size_t)train_cfg.batch_size;

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= train_cfg.epochs_max; ++epoch) {
    Rng shuffle_rng(derive_seed(train_cfg.seed, 0x5000u + (uint64_t)epoch));
    seeded_shuffle(order, shuffle_rng);

    double epoch_loss = 0.0;
    size_t correct = 0;
    double lr_scale = 0.0;
    for (size_t b = 0; b < n_batches; ++b) {
      const size_t lo = b * (size_t)train_cfg.batch_size;
      const size_t hi = std::min(lo + (size_t)train_cfg.batch_size, n);
      std::vector<size_t> idx(order.begin() + (long)lo, order.begin() + (long)hi);

      // On-the-fly augmentation, seeded per (epoch, sample).
      std::vector<Image2D> images(idx.size());
      for (size_t j = 0; j < idx.size(); ++j) {
        Rng aug_rng(derive_seed(derive_seed(train_cfg.seed, 0xA000u + (uint64_t)epoch),
                                (uint64_t)idx[j]));
        images[j] = augment(train_set[idx[j]].image, train_cfg.regime, aug_params, aug_rng,
                            &result.augment_calls);
      }

      const Tensor batch = batch_tensor(train_set, idx, &images);
      const std::vector<float> labels = batch_labels(train_set, idx);
      const ForwardResult fwd = model.forward(batch, /*train=*/true, dropout_rng);
      const Tensor loss = smooth_focal_loss(fwd.prob, labels, focal);
      const double loss_val = (double)loss.item();
      if (!std::isfinite(loss_val)) throw NumericError("train_one: non-finite loss");
      loss.backward();
      clip_global_norm(groups, optim.clip_norm);

      const float t = (float)(epoch - 1) + (float)b / (float)n_batches;
      lr_scale = lr_factor(t, optim);
      opt.step(lr_scale);

      epoch_loss += loss_val * (double)idx.size();
      for (size_t j = 0; j < idx.size(); ++j)
        correct += (fwd.prob.values()[j] >= 0.5f) == (labels[j] >= 0.5f);
    }

    if (epoch % train_cfg.eval_every == 0) {
      last_val_loss = eval_loss(model, val_set, focal, train_cfg.batch_size);
      const ScoredSet val_scores = score_samples(model, val_set, train_cfg.batch_size);
      last_val_auc = roc_auc(val_scores);
      if (last_val_loss < result.best_val_loss - (double)train_cfg.min_improvement) {
        result.best_val_loss = last_val_loss;
        result.best_epoch = epoch;
        best_snapshot = snapshot_params(model);
        stale = 0;
      } else {
        ++stale;
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / (double)n;
    rec.train_acc = (double)correct / (double)n;
    rec.val_loss = last_val_loss;
    rec.val_auc = last_val_auc;
    rec.lr_encoder = (double)optim.encoder_lr * lr_scale;
    rec.lr_head = (double)optim.head_lr * lr_scale;
    result.history.records.push_back(rec);
    result.epochs_run = epoch;

    if (stale >= train_cfg.early_stop_patience) break;
  }

  restore_params(model, best_snapshot);
  result.model = std::move(model);
  return result;
}

Aggregate aggregate(const std::vector<double>& xs) {
  Aggregate a;
  if (xs.empty()) return a;
  double sum = 0.0;
  for (double x : xs) sum += x;
  a.mean = sum / (double)xs.size();
  if (xs.size() > 1) {
    double sq = 0.0;
    for (double x : xs) sq += (x - a.mean) * (x - a.mean);
    a.sd = std::sqrt(sq / (double)(xs.size() - 1));
  }
  return a;
}

CvResult run_cv(const std::vector<Sample>& samples, int k, const ModelConfig& model_cfg,
                const TrainConfig& train_cfg, const OptimConfig& optim_cfg,
                const FocalParams& focal, const AugmentParams& aug_params) {
  std::vector<int> labels(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) labels[i] = samples[i].label;
  const FoldSplit split = stratified_kfold(labels, k, train_cfg.seed);

  CvResult cv;
  cv.folds.resize((size_t)k);
  std::vector<uint64_t> fold_aug_calls((size_t)k, 0);
  const int workers = worker_count();
  std::exception_ptr err;

#pragma omp parallel for num_threads(workers) schedule(dynamic) if (workers > 1)
  for (int fold = 0; fold < k; ++fold) {
    try {
      std::vector<Sample> train_set, val_set;
      for (size_t i : split.complement_indices(fold)) train_set.push_back(samples[i]);
      for (size_t i : split.fold_indices(fold)) val_set.push_back(samples[i]);

      TrainConfig fold_cfg = train_cfg;
      fold_cfg.seed = derive_seed(train_cfg.seed, 0xF01D0000u + (uint64_t)fold);
      Rng init_rng(derive_seed(fold_cfg.seed, 0x1));
      SAMM2DModel model = build_model(model_cfg, init_rng);
      TrainResult tr =
          train_one(std::move(model), train_set, val_set, fold_cfg, optim_cfg, focal, aug_params);

      const ScoredSet scored = score_samples(tr.model, val_set, train_cfg.batch_size);
      const SweepResult sweep = sweep_threshold(scored);
      const ConfusionMetrics m = confusion_at(scored, sweep.tau_star);

      FoldMetrics fm;
      fm.fold = fold;
      fm.auc = roc_auc(scored);
      fm.sensitivity = m.sensitivity;
      fm.specificity = m.specificity;
      fm.precision = m.precision;
      fm.f1 = m.f1;
      fm.tau_star = sweep.tau_star;
      fm.best_epoch = tr.best_epoch;
      cv.folds[(size_t)fold] = fm;
      fold_aug_calls[(size_t)fold] = tr.augment_calls;
    } catch (...) {
#pragma omp critical
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);

  for (uint64_t c : fold_aug_calls) cv.augment_calls += c;
  auto pluck = [&](auto field) {
    std::vector<double> xs;
    for (const auto& f : cv.folds) xs.push_back(field(f));
    return aggregate(xs);
  };
  cv.auc = pluck([](const FoldMetrics& f) { return f.auc; });
  cv.sensitivity = pluck([](const FoldMetrics& f) { return f.sensitivity; });
  cv.specificity = pluck([](const FoldMetrics& f) { return f.specificity; });
  cv.precision = pluck([](const FoldMetrics& f) { return f.precision; });
  cv.f1 = pluck([](const FoldMetrics& f) { return f.f1; });
  return cv;
}

std::vector<AblationRow> run_ablation(const std::vector<Sample>& samples, int k,
                                      const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                                      const OptimConfig& optim_cfg, const FocalParams& focal,
                                      const AugmentParams& aug_params) {
  std::vector<AblationRow> rows;
  for (int r = 0; r < 6; ++r) {
    const Regime regime = (Regime)r;
    TrainConfig cfg = train_cfg;
    cfg.regime = regime;
    const CvResult cv = run_cv(samples, k, model_cfg, cfg, optim_cfg, focal, aug_params);

    AblationRow row;
    row.regime = regime;
    row.auc = cv.auc;
    row.recall = cv.sensitivity;
    row.augment_calls = cv.augment_calls;
    const float lr_mult = regime == Regime::A6_high_lr ? 10.0f : 1.0f;
    row.lr_encoder = optim_cfg.encoder_lr * lr_mult;
    row.lr_head = optim_cfg.head_lr * lr_mult;
    row.focal_gamma = regime == Regime::A5_high_gamma ? 5.0f : focal.gamma;
    rows.push_back(row);
  }
  return rows;
}

void save_cv_csv(const CvResult& cv, const std::filesystem::path& path,
                 const std::vector<std::string>& header_lines) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("save_cv_csv: cannot write " + path.string());
  for (const auto& line : header_lines) out << "# " << line << "\n";
  out << "fold,auc,sensitivity,specificity,precision,f1,tau_star,best_epoch\n";
  char buf[256];
  for (const auto& f : cv.folds) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.3f,%d\n", f.fold, f.auc,
                  f.sensitivity, f.specificity, f.precision, f.f1, f.tau_star, f.best_epoch);
    out << buf;
  }
  std::snprintf(buf, sizeof(buf),
                "aggregate,%.9g±%.9g,%.9g±%.9g,%.9g±%.9g,%.9g±%.9g,%.9g±%.9g,,\n", cv.auc.mean,
                cv.auc.sd, cv.sensitivity.mean, cv.sensitivity.sd, cv.specificity.mean,
                cv.specificity.sd, cv.precision.mean, cv.precision.sd, cv.f1.mean, cv.f1.sd);
  out << buf;
}

void save_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path,
                       const std::vector<std::string>& header_lines) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("save_ablation_csv: cannot write " + path.string());
  for (const auto& line : header_lines) out << "# " << line << "\n";
  out << "regime,auc_mean,auc_sd,recall_mean,recall_sd,augment_calls,lr_encoder,lr_head,"
         "focal_gamma\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,%.9g,%.9g,%llu,%.9g,%.9g,%.9g\n",
                  regime_name(r.regime), r.auc.mean, r.auc.sd, r.recall.mean, r.recall.sd,
                  (unsigned long long)r.augment_calls, r.lr_encoder, r.lr_head,
                  (double)r.focal_gamma);
    out << buf;
  }
}

}  // namespace samm2d
