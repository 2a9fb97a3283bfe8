#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mobyal/augment/augment.hpp"
#include "mobyal/model/model.hpp"
#include "mobyal/numcore/tape.hpp"
#include "mobyal/numcore/tensor.hpp"

namespace mobyal::contrastive {

using numcore::Tape;
using numcore::Tensor;

// Fixed-capacity FIFO of unit-norm key rows. Oldest rows are evicted first.
template <class T>
class KeyQueue {
 public:
  KeyQueue(std::size_t capacity, std::size_t dim);

  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }
  // Rows ever enqueued, including evicted ones.
  std::uint64_t total_enqueued() const { return total_; }

  // Appends the rows of keys [B x dim] in order. Values are copied, so the
  // queue never holds gradients. Throws ContractError on a row whose norm
  // is off 1 by more than 1e-4.
  void enqueue(const Tensor<T>& keys);

  // Row i in arrival order, 0 = oldest.
  std::span<const T> row(std::size_t i) const;
  // All rows oldest-first as [size x dim]; an empty vector when empty.
  std::vector<T> contents() const;
  void clear();

 private:
  std::size_t capacity_;
  std::size_t dim_;
  std::size_t head_ = 0;  // slot of the oldest row
  std::size_t size_ = 0;
  std::uint64_t total_ = 0;
  std::vector<T> storage_;
};

// weak holds keys k of weak views, strong holds keys k' of strong views.
template <class T>
struct KeyQueuePair {
  KeyQueue<T> weak;
  KeyQueue<T> strong;
  KeyQueuePair(std::size_t capacity, std::size_t dim) : weak(capacity, dim), strong(capacity, dim) {}
};

struct LossWeights {
  double temperature = 0.2;
  double lambda_c = 0.5;
  // Denominator holds the positive plus the queue; false leaves the positive
  // out (negatives only).
  bool include_positive = true;
};

void validate(const LossWeights& w);

// Mean over rows of -log(exp(q.k/t) / (exp(q.k/t) + sum_j exp(q.n_j/t))) with
// n_j the queue rows. Keys and queue are constants; only q receives a
// gradient. An empty queue gives exactly 0.
template <class T>
Tensor<T> info_nce(Tape<T>* tape, const Tensor<T>& q, const Tensor<T>& k_pos, const KeyQueue<T>& queue,
                   double temperature, bool include_positive = true);

// Per-row values of the same loss, in double. Not differentiable.
template <class T>
std::vector<double> info_nce_rows(const Tensor<T>& q, const Tensor<T>& k_pos, const KeyQueue<T>& queue,
                                  double temperature, bool include_positive = true);

// info_nce(q, k', strong) + info_nce(q', k, weak).
template <class T>
Tensor<T> contrastive_pair_loss(Tape<T>* tape, const Tensor<T>& q, const Tensor<T>& q_strong, const Tensor<T>& k,
                                const Tensor<T>& k_strong, const KeyQueuePair<T>& queues, double temperature,
                                bool include_positive = true);

// classification + lambda_c * contrastive.
template <class T>
Tensor<T> combined_loss(Tape<T>* tape, const Tensor<T>& classification, const Tensor<T>& contrastive,
                        double lambda_c);
double combined_loss(double classification, double contrastive, double lambda_c);

// k -> weak queue, k' -> strong queue.
template <class T>
void enqueue_keys(KeyQueuePair<T>& queues, const Tensor<T>& k, const Tensor<T>& k_strong);

struct ScoreOptions {
  LossWeights weights;
  augment::AugmentPolicy policy;
  std::size_t batch_size = 256;
};

// Pair loss of one image against the queues, using its own weak and strong
// views (weak_augment then contrast_view from rng) as query and key. Eval
// mode, gradient-free.
double per_sample_contrastive_score(model::DualModel<float>& model, const KeyQueuePair<float>& queues,
                                    const augment::Image& image, Rng& rng, const ScoreOptions& options);

// Batched scores; image i draws its views from Rng(derive_seed(seed, {ids[i]})),
// so each score equals the single-image call with that stream.
std::vector<double> per_sample_contrastive_scores(model::DualModel<float>& model, const KeyQueuePair<float>& queues,
                                                  std::span<const augment::Image> images,
                                                  std::span<const std::uint64_t> ids, std::uint64_t seed,
                                                  const ScoreOptions& options);

}  // namespace mobyal::contrastive
