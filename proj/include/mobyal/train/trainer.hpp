#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mobyal/augment/augment.hpp"
#include "mobyal/contrastive/contrastive.hpp"
#include "mobyal/model/model.hpp"
#include "mobyal/numcore/optim.hpp"

namespace mobyal::train {

using augment::Image;
using model::DualModel;

enum class TrainMode { Joint, MultiStage };

struct TrainConfig {
  int epochs = 200;
  std::size_t batch_size = 128;
  numcore::StepLrSchedule lr{};
  double sgd_momentum = 0.9;
  double weight_decay = 5e-4;
  contrastive::LossWeights loss{};
  std::size_t queue_capacity = 256;
  // EMA momentum ramps linearly from momentum_base to momentum_end over all
  // inferences of a stage.
  double momentum_base = 0.99;
  double momentum_end = 1.0;
  augment::AugmentPolicy augment{};
  TrainMode mode = TrainMode::Joint;
};

void validate(const TrainConfig& config);

struct EpochRecord {
  int epoch = 0;
  double classification_loss = 0.0;   // mean over labelled steps
  double contrastive_labelled = 0.0;   // mean pair loss (unscaled) over labelled steps
  double contrastive_unlabelled = 0.0; // mean pair loss (unscaled) over unlabelled steps
  double learning_rate = 0.0;
  double momentum = 0.0;               // EMA momentum of the epoch's last inference
};

struct StageReport {
  std::string stage;  // "joint", "pretrain" or "finetune"
  std::vector<EpochRecord> epochs;
  std::uint64_t inferences = 0;
  std::uint64_t keys_enqueued = 0;  // rows added to each queue
  std::string checkpoint;           // set by callers that save one
};

// Labelled training data. labels[i] belongs to images[i]; ids seed the
// augmentation streams.
struct LabelledView {
  std::span<const Image> images;
  std::span<const int> labels;
};

// Joint training: alternate one labelled and one unlabelled batch per step
// (epochs run over the labelled set, unlabelled batches cycle through a
// reshuffled subset). Labelled steps back-propagate cross-entropy on the weak
// view plus lambda_c times the pair loss; unlabelled steps back-propagate
// lambda_c times the pair loss only. Every inference is followed by the
// optimizer step on parameters that received gradients, the EMA update and
// enqueueing k / k'. The model and queues are updated in place.
StageReport train_stage(DualModel<float>& model, contrastive::KeyQueuePair<float>& queues,
                        const LabelledView& labelled, std::span<const Image> unlabelled,
                        const TrainConfig& config, std::uint64_t seed);

// Contrastive-only training over images; never sees labels.
StageReport train_pretrain(DualModel<float>& model, contrastive::KeyQueuePair<float>& queues,
                           std::span<const Image> images, const TrainConfig& config, int epochs,
                           std::uint64_t seed);

// Cross-entropy on weak views, updating the query encoder and classifier only.
StageReport train_finetune(DualModel<float>& model, const LabelledView& labelled, const TrainConfig& config,
                           int epochs, std::uint64_t seed);

// Pretrain on labelled + unlabelled images for config.epochs, then fine-tune
// on the labelled set for max(1, config.epochs / 2) epochs.
std::vector<StageReport> train_multi_stage(DualModel<float>& model, contrastive::KeyQueuePair<float>& queues,
                                           const LabelledView& labelled, std::span<const Image> unlabelled,
                                           const TrainConfig& config, std::uint64_t seed);

enum class SubsetMode { LowestLoss, Random };

// Picks `size` members of the unlabelled pool to train on. Random: uniform
// without replacement. LowestLoss: smallest per-sample pair loss, ties by
// ascending id; falls back to Random when model is null. Returned ids are in
// ascending order.
std::vector<std::uint64_t> select_unlabelled_training_subset(DualModel<float>* model,
                                                             const contrastive::KeyQueuePair<float>* queues,
                                                             std::span<const Image> pool_images,
                                                             std::span<const std::uint64_t> pool_ids,
                                                             std::size_t size, SubsetMode mode, std::uint64_t seed,
                                                             const contrastive::ScoreOptions& options);

// Ranking part of the above for precomputed scores.
std::vector<std::uint64_t> lowest_score_ids(std::span<const double> scores, std::span<const std::uint64_t> ids,
                                            std::size_t size);

}  // namespace mobyal::train
