#include "sda/tensor/init.hpp"

#include <cmath>

namespace sda {

template <typename T>
Tensor<T> uniform(const Shape& shape, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Tensor<T> kaiming_uniform(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  return uniform<T>(shape, -bound, bound, rng);
}

template Tensor<float> uniform<float>(const Shape&, double, double, std::mt19937_64&);
template Tensor<double> uniform<double>(const Shape&, double, double, std::mt19937_64&);
template Tensor<float> kaiming_uniform<float>(const Shape&, std::size_t, std::mt19937_64&);
template Tensor<double> kaiming_uniform<double>(const Shape&, std::size_t, std::mt19937_64&);

}  // namespace sda
