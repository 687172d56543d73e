#pragma once

#include <array>
#include <functional>
#include <random>
#include <string>

#include "sda/neck/neck.hpp"

namespace sda::detector {

template <typename T>
using ParamVisitor = std::function<void(const std::string& name, Parameter<T>& p)>;

template <typename T>
struct ConvLayer {
  Parameter<T> weight;  // [out, in, k, k]
  Parameter<T> bias;    // [out]
  std::size_t stride = 1, padding = 0;

  template <typename U>
  ConvLayer<U> cast() const {
    return {weight.template cast<U>(), bias.template cast<U>(), stride, padding};
  }
};

/// Kaiming-uniform weights over fan_in = in * k * k, zero bias.
template <typename T>
ConvLayer<T> make_conv(std::size_t out, std::size_t in, std::size_t k, std::size_t stride, std::size_t padding,
                       std::mt19937_64& rng);

template <typename T>
Var<T> apply_conv(Tape<T>& tape, ConvLayer<T>& layer, const Var<T>& x);

struct BackboneConfig {
  std::array<std::size_t, 4> widths{16, 32, 48, 64};  // stem, stride 4, 8, 16
  std::size_t channels = 32;                          // pyramid width after projection

  void validate() const;
};

/// Stride-2 4x4 convs halve the extent exactly; a 3x3 conv refines the
/// stride-4 stage; 1x1 laterals project every level to `channels`.
template <typename T>
struct BackboneParams {
  ConvLayer<T> stem, down4, refine4, down8, down16;
  std::array<ConvLayer<T>, 3> lateral;

  template <typename U>
  BackboneParams<U> cast() const {
    return {stem.template cast<U>(),
            down4.template cast<U>(),
            refine4.template cast<U>(),
            down8.template cast<U>(),
            down16.template cast<U>(),
            {lateral[0].template cast<U>(), lateral[1].template cast<U>(), lateral[2].template cast<U>()}};
  }
};

template <typename T>
BackboneParams<T> init_backbone(const BackboneConfig& cfg, std::mt19937_64& rng);

template <typename T>
void visit_params(BackboneParams<T>& p, const ParamVisitor<T>& fn);

/// [B,3,H,W] with H, W divisible by 16 -> levels at strides 4, 8, 16.
template <typename T>
neck::FeaturePyramid<T> backbone_forward(Tape<T>& tape, BackboneParams<T>& p, const Var<T>& image);

}  // namespace sda::detector
