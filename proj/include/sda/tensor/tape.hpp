#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "sda/tensor/tensor.hpp"

namespace sda {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Tape<T>* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records operations in execution order and replays their backward rules in
/// exact reverse order. Ops whose inputs do not require gradients are stored as
/// constants and never recorded.
template <typename T>
class Tape {
 public:
  /// One slot per op input; nullptr where the input does not require a gradient.
  /// Backward rules must accumulate (+=) into the slots.
  using GradSlots = std::span<Tensor<T>* const>;
  using BackwardFn = std::function<void(const Tensor<T>& out, const Tensor<T>& grad_out, GradSlots grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  /// Input that collects its own gradient, readable through grad().
  Var<T> leaf(Tensor<T> value);
  /// Leaf bound to a parameter; backward accumulates into p.grad. With
  /// gradients disabled the parameter binds as a constant.
  Var<T> param(Parameter<T>& p);

  /// Inference mode: parameters stop requiring gradients, so no op is recorded.
  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }

  Var<T> record(Tensor<T> value, std::vector<Var<T>> inputs, BackwardFn backward);

  /// Runs after each backward rule with that op's record index and input
  /// gradient slots. Used to inject faults into gradient checks.
  using BackwardHook = std::function<void(std::size_t op_index, GradSlots grad_in)>;
  void set_backward_hook(BackwardHook hook) { hook_ = std::move(hook); }

  /// Reverse sweep from a single-element loss. Repeated calls accumulate into
  /// leaf and parameter gradients.
  void backward(const Var<T>& loss);

  const Tensor<T>& value(const Var<T>& v) const { return nodes_.at(v.id()).value; }
  bool requires_grad(const Var<T>& v) const { return nodes_.at(v.id()).requires_grad; }
  /// Accumulated gradient of a leaf, or nullptr when none has reached it.
  const Tensor<T>* grad(const Var<T>& v) const;

  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t num_ops() const { return ops_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    bool requires_grad = false;
    bool is_leaf = false;
    Parameter<T>* param = nullptr;
    std::optional<Tensor<T>> grad;
  };
  struct Op {
    std::vector<std::size_t> inputs;
    std::size_t output;
    BackwardFn backward;
  };

  Var<T> push(Node node);

  std::deque<Node> nodes_;
  std::vector<Op> ops_;
  bool grad_enabled_ = true;
  BackwardHook hook_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(*this);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(*this);
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace sda
