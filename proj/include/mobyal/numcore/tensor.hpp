#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mobyal/errors.hpp"

namespace mobyal::numcore {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

// Row-major n-d array with an optional gradient buffer.
//
// Tensor is a handle: copies share storage, so the tape can refer to the
// same buffers the caller holds. Use clone() for an independent copy.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}, bool requires_grad = false)
      : s_(std::make_shared<Storage>()) {
    for (std::size_t d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_string(shape));
    }
    s_->data.assign(shape_numel(shape), fill);
    s_->shape = std::move(shape);
    s_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : s_(std::make_shared<Storage>()) {
    for (std::size_t d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_string(shape));
    }
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("tensor data length " + std::to_string(values.size()) +
                           " does not match shape " + shape_string(shape));
    }
    s_->shape = std::move(shape);
    s_->data = std::move(values);
    s_->requires_grad = requires_grad;
  }

  static Tensor scalar(T v, bool requires_grad = false) { return Tensor(Shape{1}, v, requires_grad); }

  bool defined() const { return static_cast<bool>(s_); }

  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t dim(std::size_t i) const { return s_->shape.at(i); }
  std::size_t numel() const { return s_->data.size(); }

  std::span<T> data() { return s_->data; }
  std::span<const T> data() const { return s_->data; }
  T& operator[](std::size_t i) { return s_->data[i]; }
  const T& operator[](std::size_t i) const { return s_->data[i]; }

  T item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
    return s_->data[0];
  }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool v) { s_->requires_grad = v; }

  bool has_grad() const { return !s_->grad.empty(); }
  std::span<T> grad() { return s_->grad; }
  std::span<const T> grad() const { return s_->grad; }

  // Allocates a zero gradient buffer if none exists.
  std::span<T> ensure_grad() {
    if (s_->grad.empty()) s_->grad.assign(s_->data.size(), T{0});
    return s_->grad;
  }
  void clear_grad() {
    s_->grad.clear();
    s_->grad.shrink_to_fit();
  }

  // Independent copy of shape, data and the requires_grad flag; no gradient.
  Tensor clone() const {
    Tensor t;
    t.s_ = std::make_shared<Storage>();
    t.s_->shape = s_->shape;
    t.s_->data = s_->data;
    t.s_->requires_grad = s_->requires_grad;
    return t;
  }

  // Gradient-free copy with a different shape of the same element count.
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) {
      throw DimensionError("cannot reshape " + shape_string(s_->shape) + " to " + shape_string(shape));
    }
    Tensor t;
    t.s_ = std::make_shared<Storage>();
    t.s_->shape = std::move(shape);
    t.s_->data = s_->data;
    return t;
  }

  const void* id() const { return s_.get(); }
  bool same(const Tensor& other) const { return s_ == other.s_; }

 private:
  struct Storage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> s_;
};

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

}  // namespace mobyal::numcore
