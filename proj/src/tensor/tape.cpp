#include "sda/tensor/tape.hpp"

#include <algorithm>

#include "sda/errors.hpp"

namespace sda {

template <typename T>
Var<T> Tape<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  return push(Node{std::move(value), false, true, nullptr, std::nullopt});
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value) {
  return push(Node{std::move(value), true, true, nullptr, std::nullopt});
}

template <typename T>
Var<T> Tape<T>::param(Parameter<T>& p) {
  if (!grad_enabled_) return constant(p.value);
  return push(Node{p.value, true, true, &p, std::nullopt});
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::vector<Var<T>> inputs, BackwardFn backward) {
  bool any = false;
  for (const auto& in : inputs) {
    if (in.tape() != this) throw UsageError("op inputs live on a different tape");
    any = any || nodes_[in.id()].requires_grad;
  }
  Var<T> out = push(Node{std::move(value), any, false, nullptr, std::nullopt});
  if (any) {
    Op op;
    op.inputs.reserve(inputs.size());
    for (const auto& in : inputs) op.inputs.push_back(in.id());
    op.output = out.id();
    op.backward = std::move(backward);
    ops_.push_back(std::move(op));
  }
  return out;
}

template <typename T>
const Tensor<T>* Tape<T>::grad(const Var<T>& v) const {
  const auto& node = nodes_.at(v.id());
  return node.grad ? &*node.grad : nullptr;
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
  if (loss.tape() != this) throw UsageError("backward: loss is not on this tape");
  const auto& loss_node = nodes_.at(loss.id());
  if (loss_node.value.size() != 1) {
    throw UsageError("backward: loss must be scalar, got shape " + shape_str(loss_node.value.shape()));
  }
  std::vector<std::optional<Tensor<T>>> work(nodes_.size());
  work[loss.id()] = Tensor<T>(loss_node.value.shape(), T{1});

  std::vector<Tensor<T>*> slots;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    const Op& op = *it;
    if (op.output >= work.size() || !work[op.output]) continue;
    slots.assign(op.inputs.size(), nullptr);
    for (std::size_t k = 0; k < op.inputs.size(); ++k) {
      const auto id = op.inputs[k];
      if (!nodes_[id].requires_grad) continue;
      if (!work[id]) work[id] = Tensor<T>(nodes_[id].value.shape());
      slots[k] = &*work[id];
    }
    op.backward(nodes_[op.output].value, *work[op.output], GradSlots(slots));
    if (hook_) hook_(std::size_t(ops_.rend() - it) - 1, GradSlots(slots));
    if (!nodes_[op.output].is_leaf) work[op.output].reset();
  }

  for (std::size_t id = 0; id < nodes_.size() && id < work.size(); ++id) {
    auto& node = nodes_[id];
    if (!node.is_leaf || !node.requires_grad || !work[id]) continue;
    const auto& g = *work[id];
    if (node.param != nullptr) {
      auto dst = node.param->grad.data();
      auto src = g.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
    if (!node.grad) {
      node.grad = g;
    } else {
      auto dst = node.grad->data();
      auto src = g.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace sda
