#include "sda/detector/head.hpp"

#include "sda/errors.hpp"
#include "sda/tensor/init.hpp"

namespace sda::detector {

template <typename T>
HeadParams<T> init_head(const HeadConfig& cfg, std::size_t channels, std::mt19937_64& rng) {
  if (cfg.num_classes == 0 || cfg.hidden == 0) throw ConfigError("head: num_classes and hidden must be >= 1");
  HeadParams<T> p;
  p.hidden = make_conv<T>(cfg.hidden, channels, 3, 1, 1, rng);
  p.out = make_conv<T>(cfg.num_classes + 4, cfg.hidden, 1, 1, 0, rng);
  p.out.weight.value = uniform<T>(p.out.weight.value.shape(), -cfg.out_weight_bound, cfg.out_weight_bound, rng);
  auto bias = p.out.bias.value.data();
  for (std::size_t k = 0; k < cfg.num_classes; ++k) bias[k] = static_cast<T>(cfg.heatmap_bias);
  return p;
}

template <typename T>
void visit_params(HeadParams<T>& p, const ParamVisitor<T>& fn) {
  fn("head.hidden.weight", p.hidden.weight);
  fn("head.hidden.bias", p.hidden.bias);
  fn("head.out.weight", p.out.weight);
  fn("head.out.bias", p.out.bias);
}

template <typename T>
std::vector<LevelOutput<T>> head_forward(Tape<T>& tape, HeadParams<T>& p, const neck::FeaturePyramid<T>& pyramid) {
  pyramid.validate();
  const std::size_t K = p.out.weight.value.dim(0) - 4;
  std::vector<LevelOutput<T>> out;
  for (const auto& x : pyramid.levels) {
    if (x.shape()[1] != p.hidden.weight.value.dim(1)) {
      throw ShapeError("head: level has " + std::to_string(x.shape()[1]) + " channels, head expects " +
                       std::to_string(p.hidden.weight.value.dim(1)));
    }
    auto y = apply_conv(tape, p.out, relu(apply_conv(tape, p.hidden, x)));
    out.push_back({slice(y, 1, 0, K), slice(y, 1, K, K + 2), slice(y, 1, K + 2, K + 4)});
  }
  return out;
}

#define SDA_INSTANTIATE_HEAD(T)                                                               \
  template HeadParams<T> init_head<T>(const HeadConfig&, std::size_t, std::mt19937_64&);      \
  template void visit_params<T>(HeadParams<T>&, const ParamVisitor<T>&);                      \
  template std::vector<LevelOutput<T>> head_forward<T>(Tape<T>&, HeadParams<T>&,              \
                                                       const neck::FeaturePyramid<T>&);

SDA_INSTANTIATE_HEAD(float)
SDA_INSTANTIATE_HEAD(double)

}  // namespace sda::detector
