#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <type_traits>
#include <vector>

#include "sda/tensor/tape.hpp"

namespace sda {

// Element-wise ops take the output shape from `a`. `b` may be a rank-0/size-1
// scalar or broadcast along extents of 1 (right-aligned, numpy style).
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> add(const Var<T>& a, std::type_identity_t<T> c);
template <typename T>
Var<T> mul(const Var<T>& a, std::type_identity_t<T> c);
template <typename T>
Var<T> scale(const Var<T>& a, std::type_identity_t<T> s);

/// [M,K] x [K,N] -> [M,N].
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Cross-correlation. x: [B,C,H,W], w: [O,C,kh,kw], bias: [O].
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const std::optional<std::type_identity_t<Var<T>>>& bias,
              Conv2dOptions opt = {});

/// [B,C,H,W] -> [B,C,1,1].
template <typename T>
Var<T> global_avg_pool(const Var<T>& x);

enum class PoolKind { avg, max };

/// Reduction across channels: [B,C,H,W] -> [B,1,H,W]. Max routes the gradient
/// to the lowest channel index among ties.
template <typename T>
Var<T> channel_pool(const Var<T>& x, PoolKind kind);

/// Max-subtracted softmax along `axis`. Rejects non-finite inputs with ValueError.
template <typename T>
Var<T> softmax(const Var<T>& x, std::size_t axis);

/// Half-pixel-centre bilinear resize with edge clamping. Same-size is a copy.
template <typename T>
Var<T> bilinear_resize(const Var<T>& x, std::size_t out_h, std::size_t out_w);

template <typename T>
Var<T> relu(const Var<T>& x);
template <typename T>
Var<T> sigmoid(const Var<T>& x);

template <typename T>
Var<T> concat(std::span<const Var<T>> xs, std::size_t axis);

/// Full reduction to a rank-0 scalar.
template <typename T>
Var<T> reduce_sum(const Var<T>& x);
template <typename T>
Var<T> reduce_mean(const Var<T>& x);
/// Reduction over `axes`, keeping them as extents of 1.
template <typename T>
Var<T> reduce_sum(const Var<T>& x, const std::vector<std::size_t>& axes);
template <typename T>
Var<T> reduce_mean(const Var<T>& x, const std::vector<std::size_t>& axes);

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);
/// Half-open range [begin, end) along `axis`.
template <typename T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t begin, std::size_t end);

/// Per-sample normalisation over every non-batch element followed by an
/// element-wise scale and shift. gamma/beta have x's shape without the batch axis.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

}  // namespace sda
