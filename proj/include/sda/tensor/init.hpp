#pragma once

#include <cstddef>
#include <random>

#include "sda/tensor/tensor.hpp"

namespace sda {

/// U(-b, b) with b = sqrt(6 / fan_in), the ReLU-gain Kaiming bound.
template <typename T>
Tensor<T> kaiming_uniform(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng);

template <typename T>
Tensor<T> uniform(const Shape& shape, double lo, double hi, std::mt19937_64& rng);

}  // namespace sda
