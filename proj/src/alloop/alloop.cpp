#include "mobyal/alloop/alloop.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "mobyal/errors.hpp"
#include "mobyal/numcore/ops.hpp"

namespace mobyal::alloop {

using numcore::BnMode;
using numcore::Tensor;

void validate(const Dataset& d) {
  if (d.num_classes < 2) throw ConfigError("dataset: need at least 2 classes");
  if (d.train_images.size() != d.train_labels.size()) throw DimensionError("dataset: train images and labels differ");
  if (d.test_images.size() != d.test_labels.size()) throw DimensionError("dataset: test images and labels differ");
  auto check = [&](const std::vector<int>& ys) {
    for (int y : ys) {
      if (y < 0 || static_cast<std::size_t>(y) >= d.num_classes) throw ContractError("dataset: label out of range");
    }
  };
  check(d.train_labels);
  check(d.test_labels);
}

LabelGuard::LabelGuard(std::vector<int> labels) : labels_(std::move(labels)), revealed_(labels_.size(), 0) {}

void LabelGuard::reveal(std::span<const std::uint64_t> ids) {
  for (auto id : ids) {
    if (id >= labels_.size()) throw ContractError("label guard: unknown id " + std::to_string(id));
    revealed_[id] = 1;
  }
}

bool LabelGuard::revealed(std::uint64_t id) const { return id < revealed_.size() && revealed_[id]; }

int LabelGuard::label(std::uint64_t id) {
  if (!revealed(id)) {
    ++unrevealed_reads_;
    throw LabelAccessError("label of unlabelled id " + std::to_string(id) + " was requested");
  }
  ++reads_;
  return labels_[id];
}

std::vector<int> LabelGuard::labels(std::span<const std::uint64_t> ids) {
  std::vector<int> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(label(id));
  return out;
}

void PoolState::label(std::span<const std::uint64_t> ids) {
  std::vector<std::uint64_t> add(ids.begin(), ids.end());
  std::sort(add.begin(), add.end());
  if (std::adjacent_find(add.begin(), add.end()) != add.end()) throw ContractError("pool: id labelled twice");
  std::vector<std::uint64_t> rest;
  std::set_difference(unlabelled.begin(), unlabelled.end(), add.begin(), add.end(), std::back_inserter(rest));
  if (rest.size() + add.size() != unlabelled.size()) throw ContractError("pool: id is not in the unlabelled pool");
  unlabelled = std::move(rest);
  std::vector<std::uint64_t> merged;
  std::merge(labelled.begin(), labelled.end(), add.begin(), add.end(), std::back_inserter(merged));
  labelled = std::move(merged);
}

PoolState make_pool(std::size_t total, std::span<const std::uint64_t> initial) {
  PoolState p;
  for (std::uint64_t i = 0; i < total; ++i) p.unlabelled.push_back(i);
  p.label(initial);
  return p;
}

void check_partition(const PoolState& pool, std::size_t total) {
  const auto& l = pool.labelled;
  const auto& u = pool.unlabelled;
  if (!std::is_sorted(l.begin(), l.end()) || !std::is_sorted(u.begin(), u.end())) {
    throw ContractError("pool: id lists are not sorted");
  }
  if (l.size() + u.size() != total) throw ContractError("pool: partition does not cover the training set");
  std::vector<std::uint64_t> all;
  std::merge(l.begin(), l.end(), u.begin(), u.end(), std::back_inserter(all));
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i] != i) throw ContractError("pool: labelled and unlabelled ids overlap or leave gaps");
  }
}

const char* to_string(SelectorKind k) {
  switch (k) {
    case SelectorKind::Coreset: return "coreset";
    case SelectorKind::Entropy: return "entropy";
    case SelectorKind::Random: return "random";
    case SelectorKind::HighContrastive: return "high_contrastive";
  }
  return "?";
}

SelectorKind selector_from_string(const std::string& s) {
  for (auto k : {SelectorKind::Coreset, SelectorKind::Entropy, SelectorKind::Random, SelectorKind::HighContrastive}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("unknown selector '" + s + "'");
}

void validate(const ALConfig& c, std::size_t pool_size) {
  if (c.initial_labelled < 2) throw ConfigError("al: initial_labelled must be >= 2");
  if (c.cycles < 0) throw ConfigError("al: cycles must be >= 0");
  if (c.cycles > 0 && c.budget == 0) throw ConfigError("al: budget must be positive");
  if (c.seeds.empty()) throw ConfigError("al: need at least one seed");
  if (c.eval_batch == 0) throw ConfigError("al: eval_batch must be positive");
  const std::size_t need = c.initial_labelled + static_cast<std::size_t>(c.cycles) * c.budget;
  if (need > pool_size) {
    throw ConfigError("al: initial + cycles * budget = " + std::to_string(need) + " exceeds the pool of " +
                      std::to_string(pool_size));
  }
  model::validate(c.model);
  train::validate(c.train);
}

Evaluation evaluate_predictions(std::span<const int> predicted, std::span<const int> labels, std::size_t num_classes) {
  if (labels.empty()) throw ContractError("evaluate: empty test set");
  if (predicted.size() != labels.size()) throw DimensionError("evaluate: predictions and labels differ in count");
  Evaluation e;
  e.per_class.assign(num_classes, 0.0);
  e.class_counts.assign(num_classes, 0);
  std::vector<std::size_t> correct(num_classes, 0);
  std::size_t total_correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    if (y >= num_classes) throw ContractError("evaluate: label out of range");
    ++e.class_counts[y];
    if (predicted[i] == labels[i]) {
      ++correct[y];
      ++total_correct;
    }
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (e.class_counts[c]) e.per_class[c] = static_cast<double>(correct[c]) / static_cast<double>(e.class_counts[c]);
  }
  e.accuracy = static_cast<double>(total_correct) / static_cast<double>(labels.size());
  return e;
}

namespace {

// Runs f(first, features) on eval-mode encoder features of consecutive chunks.
template <class F>
void for_feature_batches(DualModel<float>& m, std::span<const Image> images, std::span<const std::uint64_t> ids,
                         std::size_t batch, F&& f) {
  for (std::size_t s = 0; s < ids.size(); s += batch) {
    const std::size_t e = std::min(ids.size(), s + batch);
    std::vector<Image> chunk;
    chunk.reserve(e - s);
    for (std::size_t i = s; i < e; ++i) chunk.push_back(images[ids[i]]);
    const auto feats = model::forward_features<float>(nullptr, m, model::images_to_tensor<float>(chunk), BnMode::Eval);
    f(s, feats);
  }
}

std::vector<std::uint64_t> iota_ids(std::size_t n) {
  std::vector<std::uint64_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  return ids;
}

}  // namespace

std::vector<int> predict(DualModel<float>& m, std::span<const Image> images, std::size_t batch) {
  const auto ids = iota_ids(images.size());
  std::vector<int> out(images.size());
  for_feature_batches(m, images, ids, batch, [&](std::size_t first, const Tensor<float>& f) {
    const auto logits = model::classify<float>(nullptr, m, f);
    const std::size_t rows = logits.dim(0), cols = logits.dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
      const float* row = logits.data().data() + r * cols;
      out[first + r] = static_cast<int>(std::max_element(row, row + cols) - row);
    }
  });
  return out;
}

Evaluation evaluate(DualModel<float>& m, std::span<const Image> images, std::span<const int> labels,
                    std::size_t batch) {
  if (images.empty()) throw ContractError("evaluate: empty test set");
  return evaluate_predictions(predict(m, images, batch), labels, m.config.num_classes);
}

select::FeatureMatrix extract_features(DualModel<float>& m, std::span<const Image> images,
                                       std::span<const std::uint64_t> ids, std::size_t batch) {
  select::FeatureMatrix fm;
  fm.dim = m.config.feature_dim();
  fm.ids.assign(ids.begin(), ids.end());
  fm.values.resize(ids.size() * fm.dim);
  for_feature_batches(m, images, ids, batch, [&](std::size_t first, const Tensor<float>& f) {
    std::copy(f.data().begin(), f.data().end(), fm.values.begin() + static_cast<std::ptrdiff_t>(first * fm.dim));
  });
  return fm;
}

std::vector<double> class_probabilities(DualModel<float>& m, std::span<const Image> images,
                                        std::span<const std::uint64_t> ids, std::size_t batch) {
  std::vector<double> out(ids.size() * m.config.num_classes);
  for_feature_batches(m, images, ids, batch, [&](std::size_t first, const Tensor<float>& f) {
    const auto p = numcore::softmax_rows(model::classify<float>(nullptr, m, f));
    std::copy(p.begin(), p.end(), out.begin() + static_cast<std::ptrdiff_t>(first * m.config.num_classes));
  });
  return out;
}

namespace {

enum : std::uint64_t { kInitial = 1, kModel = 2, kSubset = 3, kTrain = 4, kSelect = 5 };

std::vector<Image> gather_images(std::span<const Image> images, std::span<const std::uint64_t> ids) {
  std::vector<Image> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(images[id]);
  return out;
}

}  // namespace

std::vector<std::uint64_t> select_batch(const ALConfig& cfg, std::span<const Image> train_images,
                                        DualModel<float>& m, const contrastive::KeyQueuePair<float>& queues,
                                        const PoolState& pool, std::uint64_t seed) {
  const auto& u = pool.unlabelled;
  const std::size_t b = cfg.budget;
  switch (cfg.selector) {
    case SelectorKind::Coreset: {
      const auto lf = extract_features(m, train_images, pool.labelled, cfg.eval_batch);
      const auto uf = extract_features(m, train_images, u, cfg.eval_batch);
      return select::coreset_select(lf, uf, b).chosen;
    }
    case SelectorKind::Entropy: {
      const auto p = class_probabilities(m, train_images, u, cfg.eval_batch);
      return select::entropy_select(p, m.config.num_classes, u, b).chosen;
    }
    case SelectorKind::Random: {
      Rng rng(seed);
      return select::random_select(u, b, rng).chosen;
    }
    case SelectorKind::HighContrastive: {
      const auto imgs = gather_images(train_images, u);
      contrastive::ScoreOptions opts{cfg.train.loss, cfg.train.augment, cfg.eval_batch};
      const auto scores = contrastive::per_sample_contrastive_scores(m, queues, imgs, u, seed, opts);
      return select::high_contrastive_select(scores, u, b).chosen;
    }
  }
  return {};
}

std::vector<CycleMetrics> run_trial(const Dataset& data, const ALConfig& cfg, std::size_t trial,
                                    const CycleObserver& observer) {
  validate(data);
  validate(cfg, data.train_images.size());
  if (trial >= cfg.seeds.size()) throw ContractError("run_trial: trial index outside the seed list");
  if (cfg.model.num_classes != data.num_classes) throw ConfigError("model num_classes differs from the dataset");
  const std::uint64_t seed = cfg.seeds[trial];
  const std::size_t total = data.train_images.size();

  LabelGuard guard(data.train_labels);
  Rng init_rng(derive_seed(seed, {kInitial}));
  const auto all = iota_ids(total);
  const auto initial = select::random_select(all, cfg.initial_labelled, init_rng).chosen;
  PoolState pool = make_pool(total, initial);
  guard.reveal(initial);

  const std::size_t qdim = cfg.model.projection_dim;
  contrastive::KeyQueuePair<float> queues(cfg.train.queue_capacity, qdim);
  auto m = model::init_model<float>(cfg.model, derive_seed(seed, {kModel, 0}));
  bool trained = false;
  contrastive::ScoreOptions score_opts{cfg.train.loss, cfg.train.augment, cfg.eval_batch};

  std::vector<CycleMetrics> out;
  for (int cycle = 0; cycle <= cfg.cycles; ++cycle) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto c = static_cast<std::uint64_t>(cycle);
    pool.cycle = cycle;
    check_partition(pool, total);

    // Unlabelled training subset, scored by the previous cycle's learner.
    const std::size_t subset_size = std::min(pool.labelled.size(), pool.unlabelled.size());
    const auto pool_images = gather_images(data.train_images, pool.unlabelled);
    const auto subset = train::select_unlabelled_training_subset(
        trained ? &m : nullptr, trained ? &queues : nullptr, pool_images, pool.unlabelled, subset_size,
        cfg.subset_mode, derive_seed(seed, {kSubset, c}), score_opts);
    const auto unl_images = gather_images(data.train_images, subset);

    if (cfg.reinitialize || !trained) {
      m = model::init_model<float>(cfg.model, derive_seed(seed, {kModel, c}));
      queues = contrastive::KeyQueuePair<float>(cfg.train.queue_capacity, qdim);
    }
    const auto lab_images = gather_images(data.train_images, pool.labelled);
    const auto lab_labels = guard.labels(pool.labelled);
    const train::LabelledView lv{lab_images, lab_labels};
    std::vector<train::StageReport> reports;
    const auto train_seed = derive_seed(seed, {kTrain, c});
    if (cfg.train.mode == train::TrainMode::Joint) {
      reports.push_back(train::train_stage(m, queues, lv, unl_images, cfg.train, train_seed));
    } else {
      reports = train::train_multi_stage(m, queues, lv, unl_images, cfg.train, train_seed);
    }
    trained = true;

    const auto ev = evaluate(m, data.test_images, data.test_labels, cfg.eval_batch);
    CycleMetrics cm;
    cm.trial = trial;
    cm.seed = seed;
    cm.cycle = cycle;
    cm.labelled = pool.labelled.size();
    cm.accuracy = ev.accuracy;
    cm.per_class = ev.per_class;
    const auto& last = reports.back().epochs.back();
    cm.classification_loss = last.classification_loss;
    cm.contrastive_labelled = last.contrastive_labelled;
    cm.contrastive_unlabelled = last.contrastive_unlabelled;

    std::vector<std::uint64_t> chosen;
    if (cycle < cfg.cycles) {
      chosen = select_batch(cfg, data.train_images, m, queues, pool, derive_seed(seed, {kSelect, c}));
      pool.label(chosen);
      guard.reveal(chosen);
      check_partition(pool, total);
    }
    cm.label_reads = guard.reads();
    cm.unrevealed_label_reads = guard.unrevealed_reads();
    if (cfg.record_seconds) {
      cm.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    out.push_back(cm);
    if (observer) observer(CycleEvent{out.back(), pool, guard, m, reports, chosen});
  }
  return out;
}

std::vector<std::vector<CycleMetrics>> run_active_learning(const Dataset& data, const ALConfig& cfg,
                                                           const CycleObserver& observer) {
  std::vector<std::vector<CycleMetrics>> out;
  for (std::size_t t = 0; t < cfg.seeds.size(); ++t) out.push_back(run_trial(data, cfg, t, observer));
  return out;
}

std::vector<CycleSummary> aggregate_trials(const std::vector<std::vector<CycleMetrics>>& trials) {
  if (trials.empty()) throw ContractError("aggregate_trials: no trials");
  std::size_t cycles = 0;
  for (const auto& t : trials) cycles = std::max(cycles, t.size());
  std::vector<CycleSummary> out;
  for (std::size_t c = 0; c < cycles; ++c) {
    CycleSummary s;
    s.cycle = static_cast<int>(c);
    // Sorted before summing so the result does not depend on trial order.
    std::vector<double> acc;
    for (const auto& t : trials) {
      if (c >= t.size()) continue;
      acc.push_back(t[c].accuracy);
      s.labelled = t[c].labelled;
    }
    std::sort(acc.begin(), acc.end());
    s.trials = acc.size();
    double sum = 0.0;
    for (double a : acc) sum += a;
    s.mean = sum / static_cast<double>(acc.size());
    double sq = 0.0;
    for (double a : acc) sq += (a - s.mean) * (a - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(acc.size()));
    out.push_back(s);
  }
  return out;
}

}  // namespace mobyal::alloop
