#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sda/tensor/tensor.hpp"

namespace sda::train {

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Parameter<T>*>>;

/// Scales all gradients by max_norm / norm when their joint L2 norm exceeds
/// max_norm. Returns the norm before scaling.
template <typename T>
double clip_grad_norm(const NamedParams<T>& params, double max_norm);

/// Momentum SGD with weight decay folded into the buffer:
///   m <- momentum * m + g + weight_decay * theta
///   theta <- theta - lr * m
template <typename T>
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  /// Applies one update and zeroes the gradients. Buffers are created on the
  /// first call; later calls must pass the same names in the same order.
  void step(const NamedParams<T>& params, double lr);

  const std::vector<std::string>& names() const { return names_; }
  const std::vector<Tensor<T>>& buffers() const { return buffers_; }
  /// Restores buffers saved from a previous run.
  void set_state(std::vector<std::string> names, std::vector<Tensor<T>> buffers);

 private:
  double momentum_, weight_decay_;
  std::vector<std::string> names_;
  std::vector<Tensor<T>> buffers_;
};

}  // namespace sda::train
