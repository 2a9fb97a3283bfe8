#include "mobyal/contrastive/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "mobyal/errors.hpp"
#include "mobyal/numcore/ops.hpp"

namespace mobyal::contrastive {

template <class T>
KeyQueue<T>::KeyQueue(std::size_t capacity, std::size_t dim) : capacity_(capacity), dim_(dim) {
  if (capacity == 0 || dim == 0) throw ContractError("KeyQueue: capacity and dim must be positive");
  storage_.assign(capacity * dim, T{0});
}

template <class T>
void KeyQueue<T>::enqueue(const Tensor<T>& keys) {
  if (keys.rank() != 2 || keys.dim(1) != dim_) {
    throw DimensionError("KeyQueue: keys must be [B x " + std::to_string(dim_) + "], got " +
                         numcore::shape_string(keys.shape()));
  }
  const std::size_t b = keys.dim(0);
  const auto data = keys.data();
  for (std::size_t i = 0; i < b; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) ss += static_cast<double>(data[i * dim_ + j]) * data[i * dim_ + j];
    if (!(std::abs(std::sqrt(ss) - 1.0) <= 1e-4)) {
      throw ContractError("KeyQueue: key row " + std::to_string(i) + " is not unit norm");
    }
  }
  // Rows that would be evicted within this batch are skipped outright.
  const std::size_t skip = b > capacity_ ? b - capacity_ : 0;
  for (std::size_t i = skip; i < b; ++i) {
    std::size_t slot;
    if (size_ < capacity_) {
      slot = (head_ + size_) % capacity_;
      ++size_;
    } else {
      slot = head_;
      head_ = (head_ + 1) % capacity_;
    }
    std::copy_n(data.data() + i * dim_, dim_, storage_.data() + slot * dim_);
  }
  total_ += b;
}

template <class T>
std::span<const T> KeyQueue<T>::row(std::size_t i) const {
  if (i >= size_) throw ContractError("KeyQueue: row index out of range");
  return std::span<const T>(storage_.data() + ((head_ + i) % capacity_) * dim_, dim_);
}

template <class T>
std::vector<T> KeyQueue<T>::contents() const {
  std::vector<T> out;
  out.reserve(size_ * dim_);
  for (std::size_t i = 0; i < size_; ++i) {
    const auto r = row(i);
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

template <class T>
void KeyQueue<T>::clear() {
  head_ = 0;
  size_ = 0;
}

void validate(const LossWeights& w) {
  if (!(w.temperature > 0.0) || !std::isfinite(w.temperature)) {
    throw ConfigError("contrastive: temperature must be positive");
  }
  if (!(w.lambda_c >= 0.0) || !std::isfinite(w.lambda_c)) throw ConfigError("contrastive: lambda_c must be >= 0");
}

namespace {

template <class T>
void check_pair(const Tensor<T>& q, const Tensor<T>& k, const KeyQueue<T>& queue, double temperature) {
  if (!(temperature > 0.0)) throw ContractError("info_nce: temperature must be positive");
  if (q.rank() != 2 || q.shape() != k.shape() || q.dim(1) != queue.dim()) {
    throw DimensionError("info_nce: q " + numcore::shape_string(q.shape()) + ", k " +
                         numcore::shape_string(k.shape()) + ", queue dim " + std::to_string(queue.dim()));
  }
}

// Row losses and, when probs is non-null, the softmax weights over
// [positive, queue...] (positive weight stays 0 without include_positive).
template <class T>
std::vector<double> rows_impl(const Tensor<T>& q, const Tensor<T>& k, const std::vector<T>& negatives,
                              std::size_t n_neg, double temperature, bool include_positive,
                              std::vector<double>* probs) {
  const std::size_t n = q.dim(0), d = q.dim(1);
  std::vector<double> out(n, 0.0);
  if (n_neg == 0) return out;
  if (probs) probs->assign(n * (n_neg + 1), 0.0);
  const auto qs = q.data();
  const auto ks = k.data();
  std::vector<double> logits(n_neg + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const T* qi = qs.data() + i * d;
    double pos = 0.0;
    for (std::size_t c = 0; c < d; ++c) pos += static_cast<double>(qi[c]) * ks[i * d + c];
    logits[0] = pos / temperature;
    for (std::size_t j = 0; j < n_neg; ++j) {
      const T* nj = negatives.data() + j * d;
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += static_cast<double>(qi[c]) * nj[c];
      logits[j + 1] = s / temperature;
    }
    const std::size_t first = include_positive ? 0 : 1;
    const double mx = *std::max_element(logits.begin() + static_cast<std::ptrdiff_t>(first), logits.end());
    double z = 0.0;
    for (std::size_t j = first; j <= n_neg; ++j) z += std::exp(logits[j] - mx);
    const double lse = mx + std::log(z);
    out[i] = lse - logits[0];
    if (probs) {
      for (std::size_t j = first; j <= n_neg; ++j) (*probs)[i * (n_neg + 1) + j] = std::exp(logits[j] - lse);
    }
  }
  return out;
}

}  // namespace

template <class T>
std::vector<double> info_nce_rows(const Tensor<T>& q, const Tensor<T>& k_pos, const KeyQueue<T>& queue,
                                  double temperature, bool include_positive) {
  check_pair(q, k_pos, queue, temperature);
  return rows_impl(q, k_pos, queue.contents(), queue.size(), temperature, include_positive, nullptr);
}

template <class T>
Tensor<T> info_nce(Tape<T>* tape, const Tensor<T>& q, const Tensor<T>& k_pos, const KeyQueue<T>& queue,
                   double temperature, bool include_positive) {
  check_pair(q, k_pos, queue, temperature);
  const bool record = numcore::needs_record(tape, q) && !queue.empty();
  auto negatives = std::make_shared<std::vector<T>>(queue.contents());
  auto probs = std::make_shared<std::vector<double>>();
  const std::size_t n_neg = queue.size();
  const auto rows = rows_impl(q, k_pos, *negatives, n_neg, temperature, include_positive, probs.get());
  double total = 0.0;
  for (double r : rows) total += r;
  const std::size_t n = q.dim(0), d = q.dim(1);
  Tensor<T> out({1}, static_cast<T>(total / static_cast<double>(n)), record);
  if (record) {
    Tensor<T> k = k_pos.clone();
    tape->record("info_nce", {q}, out, [q = q, k, out, negatives, probs, n, d, n_neg, temperature]() mutable {
      const double g = static_cast<double>(out.grad()[0]) / (static_cast<double>(n) * temperature);
      auto dq = q.ensure_grad();
      const auto ks = k.data();
      std::vector<double> acc(d);
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = probs->data() + i * (n_neg + 1);
        for (std::size_t c = 0; c < d; ++c) acc[c] = (p[0] - 1.0) * ks[i * d + c];
        for (std::size_t j = 0; j < n_neg; ++j) {
          const T* nj = negatives->data() + j * d;
          for (std::size_t c = 0; c < d; ++c) acc[c] += p[j + 1] * nj[c];
        }
        for (std::size_t c = 0; c < d; ++c) dq[i * d + c] += static_cast<T>(g * acc[c]);
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> contrastive_pair_loss(Tape<T>* tape, const Tensor<T>& q, const Tensor<T>& q_strong, const Tensor<T>& k,
                                const Tensor<T>& k_strong, const KeyQueuePair<T>& queues, double temperature,
                                bool include_positive) {
  auto a = info_nce(tape, q, k_strong, queues.strong, temperature, include_positive);
  auto b = info_nce(tape, q_strong, k, queues.weak, temperature, include_positive);
  return numcore::add(tape, a, b);
}

template <class T>
Tensor<T> combined_loss(Tape<T>* tape, const Tensor<T>& classification, const Tensor<T>& contrastive,
                        double lambda_c) {
  return numcore::add(tape, classification, numcore::scale(tape, contrastive, lambda_c));
}

double combined_loss(double classification, double contrastive, double lambda_c) {
  return classification + lambda_c * contrastive;
}

template <class T>
void enqueue_keys(KeyQueuePair<T>& queues, const Tensor<T>& k, const Tensor<T>& k_strong) {
  queues.weak.enqueue(k);
  queues.strong.enqueue(k_strong);
}

namespace {

std::vector<double> score_batch(model::DualModel<float>& m, const KeyQueuePair<float>& queues,
                                std::vector<augment::Image>& weak, std::vector<augment::Image>& strong,
                                const LossWeights& w) {
  const auto xw = model::images_to_tensor<float>(weak);
  const auto xs = model::images_to_tensor<float>(strong);
  const auto q = model::forward_query_embedding<float>(nullptr, m, xw, numcore::BnMode::Eval);
  const auto qs = model::forward_query_embedding<float>(nullptr, m, xs, numcore::BnMode::Eval);
  const auto k = model::forward_key_embedding(m, xw, numcore::BnMode::Eval);
  const auto ks = model::forward_key_embedding(m, xs, numcore::BnMode::Eval);
  auto a = info_nce_rows(q, ks, queues.strong, w.temperature, w.include_positive);
  const auto b = info_nce_rows(qs, k, queues.weak, w.temperature, w.include_positive);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

}  // namespace

double per_sample_contrastive_score(model::DualModel<float>& m, const KeyQueuePair<float>& queues,
                                    const augment::Image& image, Rng& rng, const ScoreOptions& options) {
  std::vector<augment::Image> weak{augment::weak_augment(image, rng, options.policy)};
  std::vector<augment::Image> strong{augment::contrast_view(image, rng, options.policy)};
  return score_batch(m, queues, weak, strong, options.weights)[0];
}

std::vector<double> per_sample_contrastive_scores(model::DualModel<float>& m, const KeyQueuePair<float>& queues,
                                                  std::span<const augment::Image> images,
                                                  std::span<const std::uint64_t> ids, std::uint64_t seed,
                                                  const ScoreOptions& options) {
  if (images.size() != ids.size()) throw DimensionError("per_sample_contrastive_scores: ids and images differ");
  if (options.batch_size == 0) throw ContractError("per_sample_contrastive_scores: batch_size must be positive");
  std::vector<double> out;
  out.reserve(images.size());
  if (queues.weak.empty() && queues.strong.empty()) {
    out.assign(images.size(), 0.0);
    return out;
  }
  for (std::size_t start = 0; start < images.size(); start += options.batch_size) {
    const std::size_t end = std::min(images.size(), start + options.batch_size);
    std::vector<augment::Image> weak, strong;
    for (std::size_t i = start; i < end; ++i) {
      Rng rng(derive_seed(seed, {ids[i]}));
      weak.push_back(augment::weak_augment(images[i], rng, options.policy));
      strong.push_back(augment::contrast_view(images[i], rng, options.policy));
    }
    const auto s = score_batch(m, queues, weak, strong, options.weights);
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

#define MOBYAL_INSTANTIATE(T)                                                                                   \
  template class KeyQueue<T>;                                                                                  \
  template Tensor<T> info_nce<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const KeyQueue<T>&, double,     \
                                 bool);                                                                        \
  template std::vector<double> info_nce_rows<T>(const Tensor<T>&, const Tensor<T>&, const KeyQueue<T>&,        \
                                                double, bool);                                                 \
  template Tensor<T> contrastive_pair_loss<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                              const Tensor<T>&, const KeyQueuePair<T>&, double, bool);         \
  template Tensor<T> combined_loss<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&, double);                   \
  template void enqueue_keys<T>(KeyQueuePair<T>&, const Tensor<T>&, const Tensor<T>&);

MOBYAL_INSTANTIATE(float)
MOBYAL_INSTANTIATE(double)

}  // namespace mobyal::contrastive
