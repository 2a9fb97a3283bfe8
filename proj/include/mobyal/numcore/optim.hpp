#pragma once

#include <span>
#include <unordered_map>
#include <vector>

#include "mobyal/numcore/tensor.hpp"

namespace mobyal::numcore {

// SGD with heavy-ball momentum and decoupled weight decay:
//   v <- momentum * v + g
//   theta <- theta - lr * (v + weight_decay * theta)
template <class T>
struct SgdState {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  // Keyed by parameter storage identity.
  std::unordered_map<const void*, std::vector<T>> velocity;
};

// Applies one update to every parameter and clears their gradients. Throws
// ContractError if any parameter has no gradient.
template <class T>
void sgd_step(std::span<Tensor<T>> params, SgdState<T>& state);

struct StepLrSchedule {
  double base_lr = 0.01;
  std::vector<double> milestones{0.6, 0.8};  // fractions of total epochs
  double decay_factor = 0.1;
};

// base_lr * decay_factor^(milestones passed). Milestone m is passed from
// epoch round(m * total_epochs) onwards.
double lr_at(const StepLrSchedule& schedule, int epoch, int total_epochs);

void validate(const StepLrSchedule& schedule);

}  // namespace mobyal::numcore
