#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mobyal/augment/augment.hpp"
#include "mobyal/numcore/ops.hpp"
#include "mobyal/numcore/tape.hpp"
#include "mobyal/numcore/tensor.hpp"

namespace mobyal::model {

using numcore::BatchNormStats;
using numcore::BnMode;
using numcore::Shape;
using numcore::Tape;
using numcore::Tensor;

struct ModelConfig {
  std::size_t in_channels = 3;
  std::size_t num_classes = 10;
  // Output channels of the three conv blocks (strides 1, 2, 1). The last one
  // is the feature dimension.
  std::array<std::size_t, 3> widths{32, 64, 64};
  std::size_t projection_dim = 64;
  bool use_predictor = true;
  bool use_projector = true;

  std::size_t feature_dim() const { return widths[2]; }
  bool operator==(const ModelConfig&) const = default;
};

void validate(const ModelConfig& config);

template <class T>
struct ConvBlock {
  Tensor<T> weight;  // [out x in x 3 x 3], no bias (batchnorm follows)
  Tensor<T> gamma;
  Tensor<T> beta;
  BatchNormStats<T> stats;
  std::size_t stride = 1;
};

template <class T>
struct Encoder {
  std::vector<ConvBlock<T>> blocks;
};

// Affine layer, optionally followed by batchnorm and relu. Bias is undefined
// for layers whose output is batch-normalized (beta takes its role) and for
// the resize layer.
template <class T>
struct Dense {
  Tensor<T> weight;  // [out x in]
  Tensor<T> bias;
  bool has_bn = false;
  Tensor<T> gamma;
  Tensor<T> beta;
  BatchNormStats<T> stats;

  bool defined() const { return weight.defined(); }
};

// Query side: encoder, projector, predictor, classifier. Key side: encoder
// and projector, updated only by ema_update.
//
// Tensors are handles, so copying a DualModel shares parameters. Use
// clone_model for an independent snapshot.
template <class T>
struct DualModel {
  ModelConfig config;
  Encoder<T> query_encoder;
  // Linear+bn+relu when use_projector; otherwise undefined (identity) or a
  // bias-free linear resize when feature_dim != projection_dim.
  Dense<T> query_projector;
  Dense<T> predictor;  // undefined when !use_predictor
  Dense<T> classifier;
  Encoder<T> key_encoder;
  Dense<T> key_projector;
};

// He-normal conv and linear weights, zero biases, unit gamma, zero beta.
// Key side is an exact copy of the query side.
template <class T>
DualModel<T> init_model(const ModelConfig& config, std::uint64_t seed);

template <class T>
DualModel<T> clone_model(const DualModel<T>& model);

// Stacks equally sized images into [N x C x H x W].
template <class T>
Tensor<T> images_to_tensor(std::span<const augment::Image> images);

// Train mode normalizes with batch statistics and moves the query running
// statistics; Eval mode uses the running statistics.
template <class T>
Tensor<T> forward_features(Tape<T>* tape, DualModel<T>& model, const Tensor<T>& x, BnMode mode);

// q = normalize(g_q(f'_q(features))) with toggled blocks skipped.
template <class T>
Tensor<T> query_embedding_from_features(Tape<T>* tape, DualModel<T>& model, const Tensor<T>& features,
                                        BnMode mode);

template <class T>
Tensor<T> forward_query_embedding(Tape<T>* tape, DualModel<T>& model, const Tensor<T>& x, BnMode mode);

// k = normalize(f'_k(f_k(x))). Never recorded. Train mode uses batch
// statistics without touching the key running statistics, which follow the
// EMA rule only.
template <class T>
Tensor<T> forward_key_embedding(DualModel<T>& model, const Tensor<T>& x, BnMode mode = BnMode::Train);

template <class T>
Tensor<T> classify(Tape<T>* tape, DualModel<T>& model, const Tensor<T>& features);

// theta_k <- m * theta_k + (1 - m) * theta_q for every paired parameter and
// batchnorm running statistic.
template <class T>
void ema_update(DualModel<T>& model, double momentum);

// 0.99 + 0.01 * step / total_steps.
double momentum_at(long step, long total_steps, double base = 0.99, double end = 1.0);

// Trainable query-side parameters. with_classifier=false leaves out the
// classifier (contrastive-only pretraining).
template <class T>
std::vector<Tensor<T>> query_parameters(DualModel<T>& model, bool with_classifier = true);

template <class T>
std::vector<Tensor<T>> encoder_classifier_parameters(DualModel<T>& model);

template <class T>
std::vector<Tensor<T>> key_parameters(DualModel<T>& model);

// Every stored value in checkpoint order: parameters and batchnorm running
// statistics, query side then key side.
template <class T>
struct StateEntry {
  std::string name;
  Shape shape;
  std::span<T> values;
};

template <class T>
std::vector<StateEntry<T>> state_entries(DualModel<T>& model);

// Binary checkpoint, little-endian:
//   "MOBYCKPT"  u32 version (1)
//   u32 x 8     in_channels num_classes width0 width1 width2 projection_dim
//               use_predictor use_projector
//   u32         entry count
//   per entry   u32 name length, name bytes, u32 rank, u32 dims[rank],
//               f32 values[prod(dims)]
void write_checkpoint(const std::string& path, DualModel<float>& model);
DualModel<float> read_checkpoint(const std::string& path);

}  // namespace mobyal::model
