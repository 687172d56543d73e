#pragma once

#include <cstddef>

namespace sda::kernels {

/// C[M,N] = op(A) * op(B) (or += when accumulate). Row-major storage; op(A) is
/// [M,K], stored as [K,M] when trans_a.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b,
          T* c, bool accumulate);

struct ConvGeometry {
  std::size_t channels, height, width;
  std::size_t kh, kw, stride, padding;
  std::size_t out_h, out_w;
  std::size_t col_rows() const { return channels * kh * kw; }
  std::size_t col_cols() const { return out_h * out_w; }
  bool is_pointwise() const { return kh == 1 && kw == 1 && stride == 1 && padding == 0; }
};

/// Unfold one image [C,H,W] into [C*kh*kw, out_h*out_w].
template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* col);
/// Adjoint of im2col, accumulating into x.
template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* x);

}  // namespace sda::kernels
