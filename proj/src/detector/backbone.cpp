#include "sda/detector/backbone.hpp"

#include "sda/errors.hpp"
#include "sda/tensor/init.hpp"

namespace sda::detector {

template <typename T>
ConvLayer<T> make_conv(std::size_t out, std::size_t in, std::size_t k, std::size_t stride, std::size_t padding,
                       std::mt19937_64& rng) {
  ConvLayer<T> c;
  c.weight = Parameter<T>(kaiming_uniform<T>({out, in, k, k}, in * k * k, rng));
  c.bias = Parameter<T>(Tensor<T>(Shape{out}));
  c.stride = stride;
  c.padding = padding;
  return c;
}

template <typename T>
Var<T> apply_conv(Tape<T>& tape, ConvLayer<T>& layer, const Var<T>& x) {
  return conv2d(x, tape.param(layer.weight), tape.param(layer.bias), {layer.stride, layer.padding});
}

void BackboneConfig::validate() const {
  for (auto w : widths) {
    if (w == 0) throw ConfigError("backbone: widths must be >= 1");
  }
  if (channels == 0) throw ConfigError("backbone: channels must be >= 1");
}

template <typename T>
BackboneParams<T> init_backbone(const BackboneConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const auto& w = cfg.widths;
  BackboneParams<T> p;
  p.stem = make_conv<T>(w[0], 3, 4, 2, 1, rng);
  p.down4 = make_conv<T>(w[1], w[0], 4, 2, 1, rng);
  p.refine4 = make_conv<T>(w[1], w[1], 3, 1, 1, rng);
  p.down8 = make_conv<T>(w[2], w[1], 4, 2, 1, rng);
  p.down16 = make_conv<T>(w[3], w[2], 4, 2, 1, rng);
  for (std::size_t i = 0; i < 3; ++i) p.lateral[i] = make_conv<T>(cfg.channels, w[i + 1], 1, 1, 0, rng);
  return p;
}

template <typename T>
void visit_params(BackboneParams<T>& p, const ParamVisitor<T>& fn) {
  auto conv = [&](const std::string& name, ConvLayer<T>& c) {
    fn("backbone." + name + ".weight", c.weight);
    fn("backbone." + name + ".bias", c.bias);
  };
  conv("stem", p.stem);
  conv("down4", p.down4);
  conv("refine4", p.refine4);
  conv("down8", p.down8);
  conv("down16", p.down16);
  for (std::size_t i = 0; i < 3; ++i) conv("lateral" + std::to_string(i), p.lateral[i]);
}

template <typename T>
neck::FeaturePyramid<T> backbone_forward(Tape<T>& tape, BackboneParams<T>& p, const Var<T>& image) {
  const Shape& s = image.shape();
  if (s.size() != 4 || s[1] != 3 || s[2] % 16 != 0 || s[3] % 16 != 0 || s[2] == 0 || s[3] == 0) {
    throw ShapeError("backbone: expected [B,3,H,W] with H, W divisible by 16, got " + shape_str(s));
  }
  auto x = relu(apply_conv(tape, p.stem, image));
  auto c4 = relu(apply_conv(tape, p.refine4, relu(apply_conv(tape, p.down4, x))));
  auto c8 = relu(apply_conv(tape, p.down8, c4));
  auto c16 = relu(apply_conv(tape, p.down16, c8));
  neck::FeaturePyramid<T> out;
  out.levels = {apply_conv(tape, p.lateral[0], c4), apply_conv(tape, p.lateral[1], c8),
                apply_conv(tape, p.lateral[2], c16)};
  out.strides = {4, 8, 16};
  return out;
}

#define SDA_INSTANTIATE_BACKBONE(T)                                                                       \
  template ConvLayer<T> make_conv<T>(std::size_t, std::size_t, std::size_t, std::size_t, std::size_t,     \
                                     std::mt19937_64&);                                                   \
  template Var<T> apply_conv<T>(Tape<T>&, ConvLayer<T>&, const Var<T>&);                                  \
  template BackboneParams<T> init_backbone<T>(const BackboneConfig&, std::mt19937_64&);                  \
  template void visit_params<T>(BackboneParams<T>&, const ParamVisitor<T>&);                              \
  template neck::FeaturePyramid<T> backbone_forward<T>(Tape<T>&, BackboneParams<T>&, const Var<T>&);

SDA_INSTANTIATE_BACKBONE(float)
SDA_INSTANTIATE_BACKBONE(double)

}  // namespace sda::detector
