#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mobyal/numcore/tensor.hpp"

namespace mobyal::numcore {

// Records differentiable operations in execution order. backward() replays
// them newest-first, which is a reverse topological order because every
// record's inputs were produced before it. A tape supports one backward pass.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  struct Record {
    std::string op;
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  void record(std::string op, std::vector<Tensor<T>> inputs, Tensor<T> output, BackwardFn fn) {
    if (consumed_) throw ContractError("tape already replayed; record a fresh forward pass");
    records_.push_back(Record{std::move(op), std::move(inputs), std::move(output), std::move(fn)});
  }

  // Seeds d(loss)/d(loss) = 1 and runs every record whose output received a
  // gradient. Gradients accumulate into existing buffers.
  void backward(Tensor<T> loss) {
    if (consumed_) throw ContractError("backward called twice on the same tape");
    if (loss.numel() != 1) throw DimensionError("backward needs a scalar loss, got " + shape_string(loss.shape()));
    if (!loss.requires_grad()) throw ContractError("loss does not depend on any tensor that requires grad");
    consumed_ = true;
    loss.ensure_grad()[0] += T{1};
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      if (!it->output.has_grad()) continue;
      it->backward();
      visited_.push_back(it->op);
    }
  }

  std::size_t size() const { return records_.size(); }
  bool consumed() const { return consumed_; }
  const std::vector<Record>& records() const { return records_; }
  // Op names in the order backward visited them.
  const std::vector<std::string>& visit_order() const { return visited_; }

 private:
  std::vector<Record> records_;
  std::vector<std::string> visited_;
  bool consumed_ = false;
};

// True when an op on these inputs must be recorded.
template <class T, class... Ts>
bool needs_record(const Tape<T>* tape, const Ts&... inputs) {
  return tape != nullptr && (inputs.requires_grad() || ...);
}

}  // namespace mobyal::numcore
