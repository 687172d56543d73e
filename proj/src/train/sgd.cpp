#include "sda/train/sgd.hpp"

#include <cmath>

#include "sda/errors.hpp"

namespace sda::train {

template <typename T>
double clip_grad_norm(const NamedParams<T>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, p] : params)
    for (T g : p->grad.data()) sq += double(g) * double(g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (const auto& [name, p] : params)
      for (T& g : p->grad.data()) g *= s;
  }
  return norm;
}

template <typename T>
void Sgd<T>::step(const NamedParams<T>& params, double lr) {
  if (buffers_.empty() && names_.empty()) {
    for (const auto& [name, p] : params) {
      names_.push_back(name);
      buffers_.emplace_back(p->value.shape());
    }
  }
  if (params.size() != names_.size()) {
    throw UsageError("sgd: expected " + std::to_string(names_.size()) + " parameters, got " +
                     std::to_string(params.size()));
  }
  const T mu = static_cast<T>(momentum_), wd = static_cast<T>(weight_decay_), eta = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, p] = params[i];
    if (name != names_[i] || p->value.shape() != buffers_[i].shape()) {
      throw UsageError("sgd: parameter " + std::to_string(i) + " is \"" + name + "\" " +
                       shape_str(p->value.shape()) + ", buffer holds \"" + names_[i] + "\" " +
                       shape_str(buffers_[i].shape()));
    }
    auto theta = p->value.data();
    auto g = p->grad.data();
    auto m = buffers_[i].data();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      m[k] = mu * m[k] + g[k] + wd * theta[k];
      theta[k] -= eta * m[k];
    }
    p->zero_grad();
  }
}

template <typename T>
void Sgd<T>::set_state(std::vector<std::string> names, std::vector<Tensor<T>> buffers) {
  if (names.size() != buffers.size()) throw UsageError("sgd: names and buffers differ in length");
  names_ = std::move(names);
  buffers_ = std::move(buffers);
}

template double clip_grad_norm<float>(const NamedParams<float>&, double);
template double clip_grad_norm<double>(const NamedParams<double>&, double);
template class Sgd<float>;
template class Sgd<double>;

}  // namespace sda::train
