#pragma once

// Dense row-major tensors with an optional reverse-mode tape.
//
// A Tensor is a cheap shared handle to a Node. Operations executed while a
// Tape is active on the current thread record their backward closures on it;
// with no active tape they only compute values. Leaf parameters carry
// requires_grad and accumulate gradients across every use (fan-out sums).

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "codebrain/errors.hpp"

namespace codebrain::num {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <class T>
class Tape;

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::function<void(const std::vector<T>&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
  }
  void accumulate(std::size_t i, double g) {
    ensure_grad();
    grad[i] += static_cast<T>(g);
  }
};

namespace detail {
template <class T>
Tape<T>*& active_tape() {
  thread_local Tape<T>* tape = nullptr;
  return tape;
}
}  // namespace detail

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    if (numel(shape) != data.size()) {
      throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_string(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, v), requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) { return Tensor({1}, {v}, requires_grad); }

  static Tensor vector(std::vector<T> v, bool requires_grad = false) {
    Shape s{v.size()};
    return Tensor(std::move(s), std::move(v), requires_grad);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> v, bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(v), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }

  // Matrix view: the last dimension is columns, everything before it rows.
  std::size_t cols() const { return node_->shape.empty() ? 1 : node_->shape.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }

  std::span<const T> data() const { return node_->value; }
  // In-place access for parameter updates; never use on recorded intermediates.
  std::span<T> mutable_data() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }

  T operator[](std::size_t i) const { return node_->value[i]; }
  T at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  T item() const {
    if (size() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_string(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  bool all_finite() const {
    for (T v : node_->value) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  // True when this tensor is an intermediate recorded on a tape.
  bool tracked() const { return node_->requires_grad && static_cast<bool>(node_->backward); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

  // Independent value copy with no gradient history.
  Tensor clone(bool requires_grad = false) const { return Tensor(shape(), node_->value, requires_grad); }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Records operations executed on this thread while alive. Nested tapes shadow
// outer ones; the destructor restores the previous tape.
template <class T>
class Tape {
 public:
  Tape() : previous_(detail::active_tape<T>()) { detail::active_tape<T>() = this; }
  ~Tape() { detail::active_tape<T>() = previous_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return detail::active_tape<T>(); }

  void record(const std::shared_ptr<Node<T>>& node) { nodes_.push_back(node); }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  void backward(const Tensor<T>& loss) {
    if (consumed_) throw GradientError("backward called twice on the same tape");
    if (!loss.defined() || loss.size() != 1) {
      throw std::invalid_argument("backward needs a scalar loss");
    }
    const auto& root = loss.node();
    if (!root->requires_grad) {
      throw GradientError("missing gradient: loss does not depend on any trainable tensor");
    }
    consumed_ = true;
    if (!root->backward) {
      // The loss is itself a leaf parameter.
      root->accumulate(0, 1.0);
      return;
    }
    bool found = false;
    for (const auto& n : nodes_) found = found || n == root;
    if (!found) throw GradientError("missing gradient: loss was not recorded on this tape");
    root->accumulate(0, 1.0);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<T>& n = **it;
      if (!n.grad.empty() && n.backward) n.backward(n.grad);
    }
    // Intermediate buffers are no longer needed; leaves keep theirs.
    for (auto& n : nodes_) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }

 private:
  std::vector<std::shared_ptr<Node<T>>> nodes_;
  Tape* previous_;
  bool consumed_ = false;
};

// Suspends recording for the current thread (frozen sub-networks, eval).
template <class T>
class NoGradScope {
 public:
  NoGradScope() : saved_(detail::active_tape<T>()) { detail::active_tape<T>() = nullptr; }
  ~NoGradScope() { detail::active_tape<T>() = saved_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* saved_;
};

namespace detail {

// Builds an operation result. The node is recorded (and requires_grad set)
// only when a tape is active and at least one input requires a gradient.
template <class T>
Tensor<T> result(const char* op, Shape shape, std::vector<T> value,
                 std::initializer_list<const Tensor<T>*> inputs) {
  for (T v : value) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
  Tensor<T> out(std::move(shape), std::move(value));
  Tape<T>* tape = active_tape<T>();
  if (tape == nullptr) return out;
  bool needs = false;
  for (const Tensor<T>* in : inputs) needs = needs || (in->defined() && in->requires_grad());
  if (needs) {
    out.node()->requires_grad = true;
    tape->record(out.node());
  }
  return out;
}

template <class T>
void set_backward(Tensor<T>& out, std::function<void(const std::vector<T>&)> fn) {
  if (out.requires_grad()) out.node()->backward = std::move(fn);
}

}  // namespace detail

}  // namespace codebrain::num
