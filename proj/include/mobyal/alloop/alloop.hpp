#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mobyal/augment/augment.hpp"
#include "mobyal/contrastive/contrastive.hpp"
#include "mobyal/model/model.hpp"
#include "mobyal/select/select.hpp"
#include "mobyal/train/trainer.hpp"

namespace mobyal::alloop {

using augment::Image;
using model::DualModel;

// Train ids are positions in train_images.
struct Dataset {
  std::vector<Image> train_images;
  std::vector<int> train_labels;
  std::vector<Image> test_images;
  std::vector<int> test_labels;
  std::size_t num_classes = 0;
};

void validate(const Dataset& d);

// Hands out training labels only for revealed ids. Every read is counted; a
// read of an unrevealed id is counted separately and throws LabelAccessError.
class LabelGuard {
 public:
  explicit LabelGuard(std::vector<int> labels);

  void reveal(std::span<const std::uint64_t> ids);
  bool revealed(std::uint64_t id) const;
  int label(std::uint64_t id);
  std::vector<int> labels(std::span<const std::uint64_t> ids);

  std::uint64_t reads() const { return reads_; }
  std::uint64_t unrevealed_reads() const { return unrevealed_reads_; }
  std::size_t size() const { return labels_.size(); }

 private:
  std::vector<int> labels_;
  std::vector<char> revealed_;
  std::uint64_t reads_ = 0;
  std::uint64_t unrevealed_reads_ = 0;
};

struct PoolState {
  std::vector<std::uint64_t> labelled;    // ascending
  std::vector<std::uint64_t> unlabelled;  // ascending
  int cycle = 0;

  // Moves ids from unlabelled to labelled. ContractError if any id is not
  // currently unlabelled or repeats.
  void label(std::span<const std::uint64_t> ids);
};

// Starts with labelled = initial and unlabelled = the rest of [0, total).
PoolState make_pool(std::size_t total, std::span<const std::uint64_t> initial);

// Disjoint, covering [0, total), sorted. Throws ContractError otherwise.
void check_partition(const PoolState& pool, std::size_t total);

enum class SelectorKind { Coreset, Entropy, Random, HighContrastive };

const char* to_string(SelectorKind k);
SelectorKind selector_from_string(const std::string& s);

struct ALConfig {
  std::size_t initial_labelled = 200;
  std::size_t budget = 100;
  int cycles = 3;
  SelectorKind selector = SelectorKind::Coreset;
  train::SubsetMode subset_mode = train::SubsetMode::LowestLoss;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  model::ModelConfig model{};
  train::TrainConfig train{};
  // Re-initialize the learner every cycle (false keeps training the previous
  // cycle's weights).
  bool reinitialize = true;
  std::size_t eval_batch = 256;
  // Wall-clock seconds per cycle; off writes 0 so output files are
  // byte-reproducible.
  bool record_seconds = true;
};

// Throws ConfigError. pool_size is the number of training images.
void validate(const ALConfig& c, std::size_t pool_size);

struct Evaluation {
  double accuracy = 0.0;
  std::vector<double> per_class;  // correct_c / count_c, 0 for an absent class
  std::vector<std::size_t> class_counts;
};

Evaluation evaluate_predictions(std::span<const int> predicted, std::span<const int> labels, std::size_t num_classes);

// Eval-mode argmax of the classifier (first maximum on ties).
std::vector<int> predict(DualModel<float>& model, std::span<const Image> images, std::size_t batch);
Evaluation evaluate(DualModel<float>& model, std::span<const Image> images, std::span<const int> labels,
                    std::size_t batch);

// Eval-mode encoder features, one row per id (ids index images).
select::FeatureMatrix extract_features(DualModel<float>& model, std::span<const Image> images,
                                       std::span<const std::uint64_t> ids, std::size_t batch);
// Eval-mode softmax rows, [ids.size() x num_classes].
std::vector<double> class_probabilities(DualModel<float>& model, std::span<const Image> images,
                                        std::span<const std::uint64_t> ids, std::size_t batch);

// Runs the configured selector once: budget ids out of pool.unlabelled. The
// queues feed the high-contrastive scores; seed drives random choices.
std::vector<std::uint64_t> select_batch(const ALConfig& config, std::span<const Image> train_images,
                                        DualModel<float>& model, const contrastive::KeyQueuePair<float>& queues,
                                        const PoolState& pool, std::uint64_t seed);

struct CycleMetrics {
  std::size_t trial = 0;
  std::uint64_t seed = 0;
  int cycle = 0;
  std::size_t labelled = 0;
  double accuracy = 0.0;
  std::vector<double> per_class;
  double classification_loss = 0.0;     // last epoch of the last stage
  double contrastive_labelled = 0.0;
  double contrastive_unlabelled = 0.0;
  double seconds = 0.0;
  std::uint64_t label_reads = 0;        // cumulative, revealed ids
  std::uint64_t unrevealed_label_reads = 0;
};

struct CycleEvent {
  const CycleMetrics& metrics;
  const PoolState& pool;        // after this cycle's selection
  const LabelGuard& guard;
  DualModel<float>& model;      // trained in this cycle
  const std::vector<train::StageReport>& reports;
  std::span<const std::uint64_t> selected;  // empty after the last cycle
};

using CycleObserver = std::function<void(const CycleEvent&)>;

// One trial: seeds[trial]. Cycle 0 trains on the initial set; cycles 1..N
// each follow a selection of `budget` ids.
std::vector<CycleMetrics> run_trial(const Dataset& data, const ALConfig& config, std::size_t trial,
                                    const CycleObserver& observer = {});

// All trials in seed order.
std::vector<std::vector<CycleMetrics>> run_active_learning(const Dataset& data, const ALConfig& config,
                                                           const CycleObserver& observer = {});

struct CycleSummary {
  int cycle = 0;
  std::size_t labelled = 0;
  std::size_t trials = 0;
  double mean = 0.0;
  double std = 0.0;  // population
};

// Per-cycle mean and population std of overall accuracy. Trials may differ
// in length; each cycle aggregates the trials that reached it.
std::vector<CycleSummary> aggregate_trials(const std::vector<std::vector<CycleMetrics>>& trials);

}  // namespace mobyal::alloop
