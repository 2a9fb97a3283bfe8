#include "mobyal/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mobyal/errors.hpp"
#include "mobyal/numcore/ops.hpp"

namespace mobyal::train {

using contrastive::KeyQueuePair;
using numcore::BnMode;
using numcore::Tape;
using numcore::Tensor;

void validate(const TrainConfig& c) {
  if (c.epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (c.batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
  numcore::validate(c.lr);
  if (!(c.sgd_momentum >= 0.0 && c.sgd_momentum < 1.0)) throw ConfigError("train: sgd momentum must be in [0, 1)");
  if (!(c.weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be >= 0");
  contrastive::validate(c.loss);
  if (c.queue_capacity == 0) throw ConfigError("train: queue_capacity must be positive");
  if (!(c.momentum_base >= 0.0 && c.momentum_base <= c.momentum_end && c.momentum_end <= 1.0)) {
    throw ConfigError("train: need 0 <= momentum_base <= momentum_end <= 1");
  }
  augment::validate(c.augment);
}

namespace {

// Tags for derive_seed so independent streams never share a seed.
enum : std::uint64_t {
  kLabelledOrder = 1,
  kUnlabelledOrder = 2,
  kLabelledViews = 3,
  kUnlabelledViews = 4,
  kSubset = 5,
};

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

// Consecutive chunks of order; a final chunk of one is dropped (batchnorm
// needs two samples).
std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < order.size(); s += batch) {
    const std::size_t e = std::min(order.size(), s + batch);
    if (e - s < 2) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s), order.begin() + static_cast<std::ptrdiff_t>(e));
  }
  return out;
}

struct Views {
  Tensor<float> weak;
  Tensor<float> strong;
};

Views make_views(std::span<const Image> images, const std::vector<std::size_t>& idx, const TrainConfig& cfg,
                 std::uint64_t seed, bool need_strong) {
  std::vector<Image> weak, strong;
  weak.reserve(idx.size());
  for (std::size_t p = 0; p < idx.size(); ++p) {
    Rng rng(derive_seed(seed, {p}));
    weak.push_back(augment::weak_augment(images[idx[p]], rng, cfg.augment));
    if (need_strong) strong.push_back(augment::contrast_view(images[idx[p]], rng, cfg.augment));
  }
  Views v{model::images_to_tensor<float>(weak), {}};
  if (need_strong) v.strong = model::images_to_tensor<float>(strong);
  return v;
}

void sgd_on_touched(std::vector<Tensor<float>> params, numcore::SgdState<float>& sgd) {
  std::vector<Tensor<float>> touched;
  for (auto& p : params) {
    if (p.has_grad()) touched.push_back(p);
  }
  if (!touched.empty()) numcore::sgd_step<float>(touched, sgd);
}

void check_finite(double v, const char* what, int epoch, std::uint64_t step) {
  if (!std::isfinite(v)) {
    throw TrainingError(std::string("non-finite ") + what + " loss at epoch " + std::to_string(epoch) +
                        ", inference " + std::to_string(step));
  }
}

struct StepOutcome {
  double classification = 0.0;
  double contrastive = 0.0;
};

// One inference with the contrastive machinery: labels == nullptr makes it an
// unlabelled step.
StepOutcome contrastive_step(DualModel<float>& m, KeyQueuePair<float>& queues, const Views& v,
                             const std::vector<int>* labels, const TrainConfig& cfg, numcore::SgdState<float>& sgd,
                             double ema_momentum, int epoch, std::uint64_t step) {
  const double lambda = cfg.loss.lambda_c;
  StepOutcome out;
  Tape<float> tape;
  const auto fw = model::forward_features(&tape, m, v.weak, BnMode::Train);
  Tensor<float> loss;
  if (labels) {
    loss = numcore::softmax_cross_entropy(&tape, model::classify(&tape, m, fw), std::span<const int>(*labels));
    out.classification = loss.item();
    check_finite(out.classification, "classification", epoch, step);
  }
  const auto k = model::forward_key_embedding(m, v.weak);
  const auto ks = model::forward_key_embedding(m, v.strong);
  if (lambda > 0.0) {
    const auto q = model::query_embedding_from_features(&tape, m, fw, BnMode::Train);
    const auto qs = model::forward_query_embedding(&tape, m, v.strong, BnMode::Train);
    const auto con = contrastive::contrastive_pair_loss(&tape, q, qs, k, ks, queues, cfg.loss.temperature,
                                                        cfg.loss.include_positive);
    out.contrastive = con.item();
    check_finite(out.contrastive, "contrastive", epoch, step);
    loss = labels ? contrastive::combined_loss(&tape, loss, con, lambda) : numcore::scale(&tape, con, lambda);
  }
  if (loss.defined() && loss.requires_grad()) {
    tape.backward(loss);
    sgd_on_touched(model::query_parameters(m), sgd);
  }
  model::ema_update(m, ema_momentum);
  contrastive::enqueue_keys(queues, k, ks);
  return out;
}

numcore::SgdState<float> make_sgd(const TrainConfig& cfg) {
  numcore::SgdState<float> s;
  s.learning_rate = cfg.lr.base_lr;
  s.momentum = cfg.sgd_momentum;
  s.weight_decay = cfg.weight_decay;
  return s;
}

void check_labelled(const LabelledView& l, std::size_t classes) {
  if (l.images.empty()) throw TrainingError("training needs a non-empty labelled set");
  if (l.images.size() != l.labels.size()) throw DimensionError("labelled images and labels differ in count");
  if (l.images.size() < 2) throw TrainingError("training needs at least 2 labelled images (batchnorm)");
  for (int y : l.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) throw ContractError("label outside [0, num_classes)");
  }
}

double mean_or_zero(double sum, std::size_t n) { return n ? sum / static_cast<double>(n) : 0.0; }

}  // namespace

StageReport train_stage(DualModel<float>& m, KeyQueuePair<float>& queues, const LabelledView& labelled,
                        std::span<const Image> unlabelled, const TrainConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  check_labelled(labelled, m.config.num_classes);
  const std::size_t n_lab = labelled.images.size();
  const std::size_t n_unl = unlabelled.size();
  const std::size_t lab_batches = make_batches(std::vector<std::size_t>(n_lab), cfg.batch_size).size();
  const bool use_unlabelled = n_unl >= 2;
  const std::uint64_t total =
      static_cast<std::uint64_t>(cfg.epochs) * lab_batches * (use_unlabelled ? 2 : 1);

  auto sgd = make_sgd(cfg);
  StageReport report;
  report.stage = "joint";
  std::uint64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    sgd.learning_rate = numcore::lr_at(cfg.lr, epoch, cfg.epochs);
    const auto e = static_cast<std::uint64_t>(epoch);
    const auto batches = make_batches(shuffled(n_lab, derive_seed(seed, {kLabelledOrder, e})), cfg.batch_size);
    std::vector<std::size_t> u_order;
    std::size_t u_cursor = 0, u_round = 0;
    if (use_unlabelled) u_order = shuffled(n_unl, derive_seed(seed, {kUnlabelledOrder, e, u_round}));

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.learning_rate = sgd.learning_rate;
    double ce_sum = 0, cl_sum = 0, cu_sum = 0;
    std::size_t n_l = 0, n_u = 0;
    for (const auto& batch : batches) {
      std::vector<int> ys;
      ys.reserve(batch.size());
      for (std::size_t i : batch) ys.push_back(labelled.labels[i]);
      const auto views = make_views(labelled.images, batch, cfg, derive_seed(seed, {kLabelledViews, step}), true);
      rec.momentum = model::momentum_at(static_cast<long>(step), static_cast<long>(total), cfg.momentum_base,
                                        cfg.momentum_end);
      const auto o = contrastive_step(m, queues, views, &ys, cfg, sgd, rec.momentum, epoch + 1, step);
      ce_sum += o.classification;
      cl_sum += o.contrastive;
      ++n_l;
      ++step;
      report.keys_enqueued += batch.size();

      if (!use_unlabelled) continue;
      const std::size_t ub = std::min(batch.size(), n_unl);
      std::vector<std::size_t> ubatch;
      while (ubatch.size() < ub) {
        if (u_cursor == u_order.size()) {
          u_order = shuffled(n_unl, derive_seed(seed, {kUnlabelledOrder, e, ++u_round}));
          u_cursor = 0;
        }
        ubatch.push_back(u_order[u_cursor++]);
      }
      const auto uviews = make_views(unlabelled, ubatch, cfg, derive_seed(seed, {kUnlabelledViews, step}), true);
      rec.momentum = model::momentum_at(static_cast<long>(step), static_cast<long>(total), cfg.momentum_base,
                                        cfg.momentum_end);
      const auto uo = contrastive_step(m, queues, uviews, nullptr, cfg, sgd, rec.momentum, epoch + 1, step);
      cu_sum += uo.contrastive;
      ++n_u;
      ++step;
      report.keys_enqueued += ubatch.size();
    }
    rec.classification_loss = mean_or_zero(ce_sum, n_l);
    rec.contrastive_labelled = mean_or_zero(cl_sum, n_l);
    rec.contrastive_unlabelled = mean_or_zero(cu_sum, n_u);
    report.epochs.push_back(rec);
  }
  report.inferences = step;
  return report;
}

StageReport train_pretrain(DualModel<float>& m, KeyQueuePair<float>& queues, std::span<const Image> images,
                           const TrainConfig& cfg, int epochs, std::uint64_t seed) {
  validate(cfg);
  if (epochs < 0) throw ConfigError("train: pretrain epochs must be >= 0");
  StageReport report;
  report.stage = "pretrain";
  if (epochs == 0) return report;
  if (images.size() < 2) throw TrainingError("pretraining needs at least 2 images");
  const std::size_t n = images.size();
  const std::uint64_t total = static_cast<std::uint64_t>(epochs) *
                              make_batches(std::vector<std::size_t>(n), cfg.batch_size).size();
  auto sgd = make_sgd(cfg);
  std::uint64_t step = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    sgd.learning_rate = numcore::lr_at(cfg.lr, epoch, epochs);
    const auto e = static_cast<std::uint64_t>(epoch);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.learning_rate = sgd.learning_rate;
    double sum = 0;
    std::size_t count = 0;
    for (const auto& batch : make_batches(shuffled(n, derive_seed(seed, {kUnlabelledOrder, e})), cfg.batch_size)) {
      const auto views = make_views(images, batch, cfg, derive_seed(seed, {kUnlabelledViews, step}), true);
      rec.momentum = model::momentum_at(static_cast<long>(step), static_cast<long>(total), cfg.momentum_base,
                                        cfg.momentum_end);
      sum += contrastive_step(m, queues, views, nullptr, cfg, sgd, rec.momentum, epoch + 1, step).contrastive;
      ++count;
      ++step;
      report.keys_enqueued += batch.size();
    }
    rec.contrastive_unlabelled = mean_or_zero(sum, count);
    report.epochs.push_back(rec);
  }
  report.inferences = step;
  return report;
}

StageReport train_finetune(DualModel<float>& m, const LabelledView& labelled, const TrainConfig& cfg, int epochs,
                           std::uint64_t seed) {
  validate(cfg);
  check_labelled(labelled, m.config.num_classes);
  if (epochs < 1) throw ConfigError("train: finetune epochs must be >= 1");
  StageReport report;
  report.stage = "finetune";
  auto sgd = make_sgd(cfg);
  const std::size_t n = labelled.images.size();
  std::uint64_t step = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    sgd.learning_rate = numcore::lr_at(cfg.lr, epoch, epochs);
    const auto e = static_cast<std::uint64_t>(epoch);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.learning_rate = sgd.learning_rate;
    double sum = 0;
    std::size_t count = 0;
    for (const auto& batch : make_batches(shuffled(n, derive_seed(seed, {kLabelledOrder, e})), cfg.batch_size)) {
      std::vector<int> ys;
      for (std::size_t i : batch) ys.push_back(labelled.labels[i]);
      const auto views = make_views(labelled.images, batch, cfg, derive_seed(seed, {kLabelledViews, step}), false);
      Tape<float> tape;
      const auto f = model::forward_features(&tape, m, views.weak, BnMode::Train);
      auto loss = numcore::softmax_cross_entropy(&tape, model::classify(&tape, m, f), std::span<const int>(ys));
      check_finite(loss.item(), "classification", epoch + 1, step);
      sum += loss.item();
      tape.backward(loss);
      sgd_on_touched(model::encoder_classifier_parameters(m), sgd);
      ++count;
      ++step;
    }
    rec.classification_loss = mean_or_zero(sum, count);
    report.epochs.push_back(rec);
  }
  report.inferences = step;
  return report;
}

std::vector<StageReport> train_multi_stage(DualModel<float>& m, KeyQueuePair<float>& queues,
                                           const LabelledView& labelled, std::span<const Image> unlabelled,
                                           const TrainConfig& cfg, std::uint64_t seed) {
  check_labelled(labelled, m.config.num_classes);
  std::vector<Image> all(labelled.images.begin(), labelled.images.end());
  all.insert(all.end(), unlabelled.begin(), unlabelled.end());
  std::vector<StageReport> out;
  out.push_back(train_pretrain(m, queues, all, cfg, cfg.epochs, derive_seed(seed, {1})));
  out.push_back(train_finetune(m, labelled, cfg, std::max(1, cfg.epochs / 2), derive_seed(seed, {2})));
  return out;
}

std::vector<std::uint64_t> lowest_score_ids(std::span<const double> scores, std::span<const std::uint64_t> ids,
                                            std::size_t size) {
  if (scores.size() != ids.size()) throw DimensionError("lowest_score_ids: scores and ids differ in count");
  if (size > ids.size()) throw ContractError("subset size exceeds the unlabelled pool");
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] < scores[b];
    return ids[a] < ids[b];
  });
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < size; ++i) out.push_back(ids[order[i]]);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::uint64_t> select_unlabelled_training_subset(DualModel<float>* m,
                                                             const KeyQueuePair<float>* queues,
                                                             std::span<const Image> pool_images,
                                                             std::span<const std::uint64_t> pool_ids,
                                                             std::size_t size, SubsetMode mode, std::uint64_t seed,
                                                             const contrastive::ScoreOptions& options) {
  if (pool_images.size() != pool_ids.size()) throw DimensionError("subset selection: images and ids differ");
  if (size > pool_ids.size()) throw ContractError("subset size exceeds the unlabelled pool");
  if (mode == SubsetMode::LowestLoss && m != nullptr && queues != nullptr) {
    const auto scores = contrastive::per_sample_contrastive_scores(*m, *queues, pool_images, pool_ids,
                                                                   derive_seed(seed, {kSubset}), options);
    return lowest_score_ids(scores, pool_ids, size);
  }
  std::vector<std::uint64_t> ids(pool_ids.begin(), pool_ids.end());
  Rng rng(derive_seed(seed, {kSubset}));
  rng.shuffle(std::span<std::uint64_t>(ids));
  ids.resize(size);
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace mobyal::train
