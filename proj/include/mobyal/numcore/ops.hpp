#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mobyal/numcore/tape.hpp"
#include "mobyal/numcore/tensor.hpp"

// Differentiable operations. Each takes the tape to record on; a null tape
// (or inputs that do not require grad) runs the forward pass only.
namespace mobyal::numcore {

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

enum class BnMode { Train, Eval };

template <class T>
struct BatchNormStats {
  std::vector<T> running_mean;
  std::vector<T> running_var;

  BatchNormStats() = default;
  explicit BatchNormStats(std::size_t channels) : running_mean(channels, T{0}), running_var(channels, T{1}) {}
};

// [p x q] . [q x r] -> [p x r]
template <class T>
Tensor<T> matmul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

// x [N x in], weight [out x in], bias [out] -> x . weight^T + bias
template <class T>
Tensor<T> linear(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// x [N x C x H x W], weight [F x C x 3 x 3], zero padding 1, stride 1 or 2.
template <class T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& weight, std::size_t stride);

// Per-channel batch normalization of [N x C] or [N x C x H x W]. Train mode
// normalizes with batch statistics and, when update_running is set, moves the
// running statistics by kBatchNormMomentum (unbiased variance). Eval mode uses
// the running statistics.
template <class T>
Tensor<T> batchnorm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    BatchNormStats<T>& stats, BnMode mode, bool update_running = true);

template <class T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x);

// [N x C x H x W] -> [N x C]
template <class T>
Tensor<T> global_avg_pool(Tape<T>* tape, const Tensor<T>& x);

// Mean over rows of -log softmax(logits)[label].
template <class T>
Tensor<T> softmax_cross_entropy(Tape<T>* tape, const Tensor<T>& logits, std::span<const int> labels);

// Rows scaled to unit Euclidean norm. Throws NormalizationError on a zero row.
template <class T>
Tensor<T> l2_normalize(Tape<T>* tape, const Tensor<T>& x);

template <class T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

template <class T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& a, double factor);

template <class T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

template <class T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& a);

// Row-wise softmax of [N x C] logits, computed in double. Not differentiable.
template <class T>
std::vector<double> softmax_rows(const Tensor<T>& logits);

}  // namespace mobyal::numcore
