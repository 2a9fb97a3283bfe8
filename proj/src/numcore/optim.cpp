#include "mobyal/numcore/optim.hpp"

#include <cmath>
#include <string>

namespace mobyal::numcore {

template <class T>
void sgd_step(std::span<Tensor<T>> params, SgdState<T>& state) {
  for (const auto& p : params) {
    if (!p.has_grad()) throw ContractError("sgd_step: parameter " + shape_string(p.shape()) + " has no gradient");
  }
  const T lr = static_cast<T>(state.learning_rate);
  const T mu = static_cast<T>(state.momentum);
  const T wd = static_cast<T>(state.weight_decay);
  for (auto& p : params) {
    auto& v = state.velocity[p.id()];
    if (v.size() != p.numel()) v.assign(p.numel(), T{0});
    auto theta = p.data();
    const auto g = p.grad();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      v[i] = mu * v[i] + g[i];
      theta[i] -= lr * (v[i] + wd * theta[i]);
    }
    p.clear_grad();
  }
}

template void sgd_step<float>(std::span<Tensor<float>>, SgdState<float>&);
template void sgd_step<double>(std::span<Tensor<double>>, SgdState<double>&);

void validate(const StepLrSchedule& schedule) {
  if (!(schedule.base_lr > 0.0)) throw ContractError("lr schedule: base_lr must be positive");
  if (!(schedule.decay_factor > 0.0)) throw ContractError("lr schedule: decay_factor must be positive");
  double prev = 0.0;
  for (double m : schedule.milestones) {
    if (!(m > prev) || !(m < 1.0)) {
      throw ContractError("lr schedule: milestones must be strictly increasing inside (0, 1)");
    }
    prev = m;
  }
}

double lr_at(const StepLrSchedule& schedule, int epoch, int total_epochs) {
  int passed = 0;
  for (double m : schedule.milestones) {
    if (epoch >= std::lround(m * total_epochs)) ++passed;
  }
  return schedule.base_lr * std::pow(schedule.decay_factor, passed);
}

}  // namespace mobyal::numcore
