#include "sda/tensor/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "kernels.hpp"
#include "sda/errors.hpp"

namespace sda {
namespace {

template <typename T>
using Slots = typename Tape<T>::GradSlots;

template <typename T>
Tape<T>& same_tape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw UsageError(std::string(op) + ": inputs must live on the same tape");
  }
  return *a.tape();
}

template <typename T>
Tape<T>& tape_of(const Var<T>& a, const char* op) {
  if (a.tape() == nullptr) throw UsageError(std::string(op) + ": input is not on a tape");
  return *a.tape();
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
  }
}

// Maps each element of a `full`-shaped tensor onto a `small` tensor whose
// extents are either equal or 1 (right-aligned).
struct BroadcastMap {
  Shape full;
  std::vector<std::size_t> small_strides;
};

BroadcastMap make_broadcast(const Shape& full, Shape small, const char* op) {
  const Shape original = small;
  auto fail = [&] {
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(original) + " to " + shape_str(full));
  };
  while (small.size() > full.size()) {
    if (small.front() != 1) fail();
    small.erase(small.begin());
  }
  BroadcastMap m{full, std::vector<std::size_t>(full.size(), 0)};
  const std::size_t offset = full.size() - small.size();
  std::size_t stride = 1;
  for (std::size_t d = full.size(); d-- > offset;) {
    const std::size_t e = small[d - offset];
    if (e == full[d]) {
      m.small_strides[d] = stride;
    } else if (e != 1) {
      fail();
    }
    stride *= e;
  }
  return m;
}

template <typename F>
void for_each_broadcast(const BroadcastMap& m, F&& f) {
  const std::size_t r = m.full.size();
  if (r == 0) {
    f(std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t n = m.full[r - 1];
  const std::size_t s = m.small_strides[r - 1];
  const std::size_t outer = shape_numel(m.full) / n;
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  std::size_t i = 0;
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < n; ++k) f(i + k, off + k * s);
    i += n;
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      off += m.small_strides[d];
      if (idx[d] < m.full[d]) break;
      off -= m.small_strides[d] * m.full[d];
      idx[d] = 0;
    }
  }
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

struct AxisSplit {
  std::size_t outer, extent, inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r{1, s[axis], 1};
  for (std::size_t d = 0; d < axis; ++d) r.outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) r.inner *= s[d];
  return r;
}

// Source index pair and weight for one output coordinate of a bilinear resize.
struct LerpTap {
  std::size_t i0, i1;
  double w1;
};

std::vector<LerpTap> lerp_taps(std::size_t in, std::size_t out) {
  std::vector<LerpTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[d] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  auto& tape = same_tape(a, b, "add");
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor<T> out = av;
  const bool same = av.shape() == bv.shape();
  BroadcastMap map;
  if (same) {
    accumulate(out, bv);
  } else {
    map = make_broadcast(av.shape(), bv.shape(), "add");
    auto o = out.data();
    auto bd = bv.data();
    for_each_broadcast(map, [&](std::size_t i, std::size_t j) { o[i] += bd[j]; });
  }
  return tape.record(std::move(out), {a, b}, [same, map](const Tensor<T>&, const Tensor<T>& g, Slots<T> s) {
    if (s[0]) accumulate(*s[0], g);
    if (s[1]) {
      if (same) {
        accumulate(*s[1], g);
      } else {
        auto gb = s[1]->data();
        auto gd = g.data();
        for_each_broadcast(map, [&](std::size_t i, std::size_t j) { gb[j] += gd[i]; });
      }
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  auto& tape = same_tape(a, b, "mul");
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor<T> out = av;
  const bool same = av.shape() == bv.shape();
  BroadcastMap map;
  auto o = out.data();
  auto bd = bv.data();
  if (same) {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bd[i];
  } else {
    map = make_broadcast(av.shape(), bv.shape(), "mul");
    for_each_broadcast(map, [&](std::size_t i, std::size_t j) { o[i] *= bd[j]; });
  }
  return tape.record(std::move(out), {a, b}, [a, b, same, map](const Tensor<T>&, const Tensor<T>& g, Slots<T> s) {
    auto gd = g.data();
    auto ad = a.value().data();
    auto bd = b.value().data();
    if (same) {
      if (s[0]) {
        auto ga = s[0]->data();
        for (std::size_t i = 0; i < gd.size(); ++i) ga[i] += gd[i] * bd[i];
      }
      if (s[1]) {
        auto gb = s[1]->data();
        for (std::size_t i = 0; i < gd.size(); ++i) gb[i] += gd[i] * ad[i];
      }
      return;
    }
    if (s[0]) {
      auto ga = s[0]->data();
      for_each_broadcast(map, [&](std::size_t i, std::size_t j) { ga[i] += gd[i] * bd[j]; });
    }
    if (s[1]) {
      auto gb = s[1]->data();
      for_each_broadcast(map, [&](std::size_t i, std::size_t j) { gb[j] += gd[i] * ad[i]; });
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, std::type_identity_t<T> c) {
  auto& tape = tape_of(a, "scale");
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= c;
  return tape.record(std::move(out), {a}, [c](const Tensor<T>&, const Tensor<T>& g, Slots<T> s) {
    auto ga = s[0]->data();
    auto gd = g.data();
    for (std::size_t i = 0; i < gd.size(); ++i) ga[i] += gd[i] * c;
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, std::type_identity_t<T> c) {
  return scale(a, c);
}

template <typename T>
Var<T> add(const Var<T>& a, std::type_identity_t<T> c) {
  auto& tape = tape_of(a, "add");
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v += c;
  return tape.record(std::move(out), {a}, [](const Tensor<T>&, const Tensor<T>& g, Slots<T> s) {
    accumulate(*s[0], g);
  });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  auto& tape = same_tape(a, b, "matmul");
  const auto& av = a.value();
  const auto& bv = b.value();
  require_rank(av.shape(), 2, "matmul");
  require_rank(bv.shape(), 2, "matmul");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  }
  Tensor<T> out(Shape{m, n});
  kernels::gemm(false, false, m, n, k, av.data().data(), bv.data().data(), out.data().data(), false);
  return tape.record(std::move(out), {a, b}, [a, b, m, n, k](const Tensor<T>&, const Tensor<T>& g, Slots<T> s) {
    // dA = dC * B^T, dB = A^T * dC
    if (s[0]) kernels::gemm(false, true, m, k, n, g.data().data(), b.value().data().data(), s[0]->data().data(), true);
    if (s[1]) kernels::gemm(true, false, k, n, m, a.value().data().data(), g.data().data(), s[1]->data().data(), true);
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const std::optional<std::type_identity_t<Var<T>>>& bias,
              Conv2dOptions opt) {
  auto& tape = same_tape(x, w, "conv2d");
  const auto& xv = x.value();
  const auto& wv = w.value();
  require_rank(xv.shape(), 4, "conv2d");
  require_rank(wv.shape(), 4, "conv2d");
  if (opt.stride == 0) throw ShapeError("conv2d: stride must be >= 1");
  const std::size_t batch = xv.dim(0), out_c = wv.dim(0);
  kernels::ConvGeometry geo{xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(2), wv.dim(3), opt.stride, opt.padding, 0, 0};
  if (wv.dim(1) != geo.channels) {
    throw ShapeError("conv2d: input " + shape_str(xv.shape()) + " does not match weight " + shape_str(wv.shape()));
  }
  const std::size_t ph = geo.height + 2 * geo.padding, pw = geo.width + 2 * geo.padding;
  if (ph < geo.kh || pw < geo.kw || (ph - geo.kh) % geo.stride != 0 || (pw - geo.kw) % geo.stride != 0) {
    throw ShapeError("conv2d: non-integral output extent for input " + shape_str(xv.shape()) + ", kernel " +
                     shape_str(wv.shape()) + ", stride " + std::to_string(geo.stride) + ", padding " +
                     std::to_string(geo.padding));
  }
  geo.out_h = (ph - geo.kh) / geo.stride + 1;
  geo.out_w = (pw - geo.kw) / geo.stride + 1;
  std::vector<Var<T>> inputs{x, w};
  if (bias) {
    if (bias->tape() != &tape) throw UsageError("conv2d: bias lives on a different tape");
    if (bias->value().size() != out_c) {
      throw ShapeError("conv2d: bias " + shape_str(bias->value().shape()) + " does not match " +
                       std::to_string(out_c) + " output channels");
    }
    inputs.push_back(*bias);
  }

  const std::size_t rows = geo.col_rows(), cols = geo.col_cols();
  const std::size_t in_plane = geo.channels * geo.height * geo.width;
  Tensor<T> out(Shape{batch, out_c, geo.out_h, geo.out_w});
  std::vector<T> col(geo.is_pointwise() ? 0 : rows * cols);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* xb = xv.data().data() + b * in_plane;
    const T* src = xb;
    if (!geo.is_pointwise()) {
      kernels::im2col(geo, xb, col.data());
      src = col.data();
    }
    T* yb = out.data().data() + b * out_c * cols;
    kernels::gemm(false, false, out_c, cols, rows, wv.data().data(), src, yb, false);
    if (bias) {
      auto bd = bias->value().data();
      for (std::size_t o = 0; o < out_c; ++o) {
        for (std::size_t p = 0; p < cols; ++p) yb[o * cols + p] += bd[o];
      }
    }
  }

  return tape.record(std::move(out), std::move(inputs),
                     [x, w, geo, batch, out_c](const Tensor<T>&, const Tensor<T>& g, Slots<T> s) {
    const std::size_t rows = geo.col_rows(), cols = geo.col_cols();
    const std::size_t in_plane = geo.channels * geo.height * geo.width;
    const auto& xv = x.value();
    const auto& wv = w.value();
    std::vector<T> col(geo.is_pointwise() ? 0 : rows * cols);
    for (std::size_t b = 0; b < batch; ++b) {
      const T* gy = g.data().data() + b * out_c * cols;
      if (s[1]) {
        const T* src = xv.data().data() + b * in_plane;
        if (!geo.is_pointwise()) {
          kernels::im2col(geo, src, col.data());
          src = col.data();
        }
        kernels::gemm(false, true, out_c, rows, cols, gy, src, s[1]->data().data(), true);
      }
      if (s[0]) {
        T* gx = s[0]->data().data() + b * in_plane;
        if (geo.is_pointwise()) {
          kernels::gemm(true, false, rows, cols, out_c, wv.data().data(), gy, gx, true);
        } else {
          kernels::gemm(true, false, rows, cols, out_c, wv.data().data(), gy, col.data(), false);
          kernels::col2im(geo, col.data(), gx);
        }
      }
      if (s.size() > 2 && s[2]) {
        auto gb = s[2]->data();
        for (std::size_t o = 0; o < out_c; ++o) {
          T acc{0};
          for (std::size_t p = 0; p < cols; ++p) acc += gy[o * cols + p];
          gb[o] += acc;
        }
      }
    }
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  auto& tape = tape_of(x, "global_avg_pool");
  const auto& xv = x.value();
  require_rank(xv.shape(), 4, "global_avg_pool");
  const std::size_t bc = xv.dim(0) * xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  Tensor<T> out(Shape{xv.dim(0), xv.dim(1), 1, 1});
  auto xd = xv.data();
  for (std::size_t i = 0; i < bc; ++i) {
    T acc{0};
    for (std::size_t p = 0; p < hw; ++p) acc += xd[i * hw + p];
    out[i] = acc / static_cast<T>(hw);
  }
  return tape.record(std::move(out), {x}, [bc, hw](const Tensor<T>&, const Tensor<T>& g, Slots<T> s) {
    auto gx = s[0]->data();
    for (std::size_t i = 0; i < bc; ++i) {
      const T v = g[i] / static_cast<T>(hw);
      for (std::size_t p = 0; p < hw; ++p) gx[i * hw + p] += v;
    }
  });
}

template <typename T>
Var<T> channel_pool(const Var<T>& x, PoolKind kind) {
  auto& tape = tape_of(x, "channel_pool");
  const auto& xv = x.value();
  require_rank(xv.shape(), 4, "channel_pool");
  const std::size_t batch = xv.dim(0), ch = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  Tensor<T> out(Shape{batch, 1, xv.dim(2), xv.dim(3)});
  auto xd = xv.data();
  if (kind == PoolKind::avg) {
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t p = 0; p < hw; ++p) {
        T acc{0};
        for (std::size_t c = 0; c < ch; ++c) acc += xd[(b * ch + c) * hw + p];
        out[b * hw + p] = acc / static_cast<T>(ch);
      }
    }
    return tape.record(std::move(out), {x}, [batch, ch, hw](const Tensor<T>&, const Tensor<T>& g, Slots<T> s) {
      auto gx = s[0]->data();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t p = 0; p < hw; ++p) {
          const T v = g[b * hw + p] / static_cast<T>(ch);
          for (std::size_t c = 0; c < ch; ++c) gx[(b * ch + c) * hw + p] += v;
        }
      }
    });
  }
  std::vector<std::uint32_t> argmax(batch * hw, 0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t p = 0; p < hw; ++p) {
      std::uint32_t best = 0;
      T best_v = xd[b * ch * hw + p];
      for (std::size_t c = 1; c < ch; ++c) {
        const T v = xd[(b * ch + c) * hw + p];
        if (v > best_v) {
          best_v = v;
          best = static_cast<std::uint32_t>(c);
        }
      }
      out[b * hw + p] = best_v;
      argmax[b * hw + p] = best;
    }
  }
  return tape.record(std::move(out), {x},
                     [batch, ch, hw, argmax = std::move(argmax)](const Tensor<T>&, const Tensor<T>& g, Slots<T> s) {
    auto gx = s[0]->data();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t p = 0; p < hw; ++p) gx[(b * ch + argmax[b * hw + p]) * hw + p] += g[b * hw + p];
    }
  });
}

template <typename T>
Var<T> softmax(const Var<T>& x, std::size_t axis) {
  auto& tape = tape_of(x, "softmax");
  const auto& xv = x.value();
  if (axis >= xv.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(xv.shape()));
  }
  for (T v : xv.data()) {
    if (!std::isfinite(v)) throw ValueError("softmax: non-finite input value");
  }
  const AxisSplit sp = split_axis(xv.shape(), axis);
  Tensor<T> out(xv.shape());
  auto xd = xv.data();
  auto od = out.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.extent * sp.inner + i;
      T mx = xd[base];
      for (std::size_t k = 1; k < sp.extent; ++k) mx = std::max(mx, xd[base + k * sp.inner]);
      T sum{0};
      for (std::size_t k = 0; k < sp.extent; ++k) {
        const T e = std::exp(xd[base + k * sp.inner] - mx);
        od[base + k * sp.inner] = e;
        sum += e;
      }
      for (std::size_t k = 0; k < sp.extent; ++k) od[base + k * sp.inner] /= sum;
    }
  }
  return tape.record(std::move(out), {x}, [sp](const Tensor<T>& y, const Tensor<T>& g, Slots<T> s) {
    auto gx = s[0]->data();
    auto yd = y.data();
    auto gd = g.data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = o * sp.extent * sp.inner + i;
        T dot{0};
        for (std::size_t k = 0; k < sp.extent; ++k) dot += gd[base + k * sp.inner] * yd[base + k * sp.inner];
        for (std::size_t k = 0; k < sp.extent; ++k) {
          const std::size_t j = base + k * sp.inner;
          gx[j] += yd[j] * (gd[j] - dot);
        }
      }
    }
  });
}

template <typename T>
Var<T> bilinear_resize(const Var<T>& x, std::size_t out_h, std::size_t out_w) {
  auto& tape = tape_of(x, "bilinear_resize");
  const auto& xv = x.value();
  require_rank(xv.shape(), 4, "bilinear_resize");
  if (out_h == 0 || out_w == 0) throw ShapeError("bilinear_resize: output extents must be >= 1");
  const std::size_t planes = xv.dim(0) * xv.dim(1), in_h = xv.dim(2), in_w = xv.dim(3);
  if (in_h == out_h && in_w == out_w) {
    return tape.record(xv, {x}, [](const Tensor<T>&, const Tensor<T>& g, Slots<T> s) { accumulate(*s[0], g); });
  }
  auto ty = lerp_taps(in_h, out_h);
  auto tx = lerp_taps(in_w, out_w);
  Tensor<T> out(Shape{xv.dim(0), xv.dim(1), out_h, out_w});
  auto xd = xv.data();
  auto od = out.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = xd.data() + p * in_h * in_w;
    T* dst = od.data() + p * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto& a = ty[oy];
      const T wy1 = static_cast<T>(a.w1), wy0 = T{1} - wy1;
      const T* r0 = src + a.i0 * in_w;
      const T* r1 = src + a.i1 * in_w;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto& b = tx[ox];
        const T wx1 = static_cast<T>(b.w1), wx0 = T{1} - wx1;
        dst[oy * out_w + ox] = wy0 * (wx0 * r0[b.i0] + wx1 * r0[b.i1]) + wy1 * (wx0 * r1[b.i0] + wx1 * r1[b.i1]);
      }
    }
  }
  return tape.record(std::move(out), {x},
                     [planes, in_h, in_w, out_h, out_w, ty = std::move(ty), tx = std::move(tx)](
                         const Tensor<T>&, const Tensor<T>& g, Slots<T> s) {
    auto gx = s[0]->data();
    auto gd = g.data();
    for (std::size_t p = 0; p < planes; ++p) {
      T* dst = gx.data() + p * in_h * in_w;
      const T* src = gd.data() + p * out_h * out_w;
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        const auto& a = ty[oy];
        const T wy1 = static_cast<T>(a.w1), wy0 = T{1} - wy1;
        T* r0 = dst + a.i0 * in_w;
        T* r1 = dst + a.i1 * in_w;
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const auto& b = tx[ox];
          const T wx1 = static_cast<T>(b.w1), wx0 = T{1} - wx1;
          const T v = src[oy * out_w + ox];
          r0[b.i0] += wy0 * wx0 * v;
          r0[b.i1] += wy0 * wx1 * v;
          r1[b.i0] += wy1 * wx0 * v;
          r1[b.i1] += wy1 * wx1 * v;
        }
      }
    }
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  auto& tape = tape_of(x, "relu");
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = v > T{0} ? v : T{0};
  return tape.record(std::move(out), {x}, [](const Tensor<T>& y, const Tensor<T>& g, Slots<T> s) {
    auto gx = s[0]->data();
    auto yd = y.data();
    auto gd = g.data();
    for (std::size_t i = 0; i < gd.size(); ++i) {
      if (yd[i] > T{0}) gx[i] += gd[i];
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  auto& tape = tape_of(x, "sigmoid");
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = T{1} / (T{1} + std::exp(-v));
  return tape.record(std::move(out), {x}, [](const Tensor<T>& y, const Tensor<T>& g, Slots<T> s) {
    auto gx = s[0]->data();
    auto yd = y.data();
    auto gd = g.data();
    for (std::size_t i = 0; i < gd.size(); ++i) gx[i] += gd[i] * yd[i] * (T{1} - yd[i]);
  });
}

template <typename T>
Var<T> concat(std::span<const Var<T>> xs, std::size_t axis) {
  if (xs.empty()) throw UsageError("concat: no inputs");
  auto& tape = tape_of(xs[0], "concat");
  const Shape& first = xs[0].value().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& x : xs) {
    if (x.tape() != &tape) throw UsageError("concat: inputs live on different tapes");
    const Shape& s = x.value().shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) throw ShapeError("concat: " + shape_str(s) + " does not agree with " + shape_str(first));
    out_shape[axis] += s[axis];
    extents.push_back(s[axis]);
  }
  const AxisSplit sp = split_axis(out_shape, axis);
  Tensor<T> out(out_shape);
  auto od = out.data();
  std::size_t offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    auto xd = xs[k].value().data();
    const std::size_t chunk = extents[k] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(xd.data() + o * chunk, chunk, od.data() + o * sp.extent * sp.inner + offset);
    }
    offset += chunk;
  }
  std::vector<Var<T>> inputs(xs.begin(), xs.end());
  return tape.record(std::move(out), std::move(inputs),
                     [sp, extents = std::move(extents)](const Tensor<T>&, const Tensor<T>& g, Slots<T> s) {
    auto gd = g.data();
    std::size_t offset = 0;
    for (std::size_t k = 0; k < extents.size(); ++k) {
      const std::size_t chunk = extents[k] * sp.inner;
      if (s[k]) {
        auto gx = s[k]->data();
        for (std::size_t o = 0; o < sp.outer; ++o) {
          const T* src = gd.data() + o * sp.extent * sp.inner + offset;
          for (std::size_t i = 0; i < chunk; ++i) gx[o * chunk + i] += src[i];
        }
      }
      offset += chunk;
    }
  });
}

template <typename T>
Var<T> reduce_sum(const Var<T>& x) {
  auto& tape = tape_of(x, "reduce_sum");
  T acc{0};
  for (T v : x.value().data()) acc += v;
  return tape.record(Tensor<T>::scalar(acc), {x}, [](const Tensor<T>&, const Tensor<T>& g, Slots<T> s) {
    const T v = g[0];
    for (auto& e : s[0]->data()) e += v;
  });
}

template <typename T>
Var<T> reduce_mean(const Var<T>& x) {
  return scale(reduce_sum(x), T{1} / static_cast<T>(x.value().size()));
}

template <typename T>
Var<T> reduce_sum(const Var<T>& x, const std::vector<std::size_t>& axes) {
  auto& tape = tape_of(x, "reduce_sum");
  const auto& xv = x.value();
  Shape out_shape = xv.shape();
  for (auto a : axes) {
    if (a >= out_shape.size()) throw ShapeError("reduce_sum: axis out of range for " + shape_str(xv.shape()));
    out_shape[a] = 1;
  }
  const BroadcastMap map = make_broadcast(xv.shape(), out_shape, "reduce_sum");
  Tensor<T> out(out_shape);
  auto od = out.data();
  auto xd = xv.data();
  for_each_broadcast(map, [&](std::size_t i, std::size_t j) { od[j] += xd[i]; });
  return tape.record(std::move(out), {x}, [map](const Tensor<T>&, const Tensor<T>& g, Slots<T> s) {
    auto gx = s[0]->data();
    auto gd = g.data();
    for_each_broadcast(map, [&](std::size_t i, std::size_t j) { gx[i] += gd[j]; });
  });
}

template <typename T>
Var<T> reduce_mean(const Var<T>& x, const std::vector<std::size_t>& axes) {
  auto sum = reduce_sum(x, axes);
  return scale(sum, static_cast<T>(sum.value().size()) / static_cast<T>(x.value().size()));
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  auto& tape = tape_of(x, "reshape");
  return tape.record(x.value().reshaped(std::move(shape)), {x},
                     [](const Tensor<T>&, const Tensor<T>& g, Slots<T> s) {
    auto gx = s[0]->data();
    auto gd = g.data();
    for (std::size_t i = 0; i < gd.size(); ++i) gx[i] += gd[i];
  });
}

template <typename T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  auto& tape = tape_of(x, "slice");
  const auto& xv = x.value();
  if (axis >= xv.rank() || begin >= end || end > xv.dim(axis)) {
    throw ShapeError("slice: invalid range [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " of " + shape_str(xv.shape()));
  }
  const AxisSplit sp = split_axis(xv.shape(), axis);
  Shape out_shape = xv.shape();
  out_shape[axis] = end - begin;
  Tensor<T> out(out_shape);
  const std::size_t chunk = (end - begin) * sp.inner;
  auto xd = xv.data();
  auto od = out.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(xd.data() + o * sp.extent * sp.inner + begin * sp.inner, chunk, od.data() + o * chunk);
  }
  return tape.record(std::move(out), {x}, [sp, begin, chunk](const Tensor<T>&, const Tensor<T>& g, Slots<T> s) {
    auto gx = s[0]->data();
    auto gd = g.data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      T* dst = gx.data() + o * sp.extent * sp.inner + begin * sp.inner;
      for (std::size_t i = 0; i < chunk; ++i) dst[i] += gd[o * chunk + i];
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  auto& tape = same_tape(x, gamma, "layer_norm");
  same_tape(x, beta, "layer_norm");
  const auto& xv = x.value();
  if (xv.rank() < 2) throw ShapeError("layer_norm: expected a batch axis, got " + shape_str(xv.shape()));
  const std::size_t batch = xv.dim(0), n = xv.size() / batch;
  if (gamma.value().size() != n || beta.value().size() != n) {
    throw ShapeError("layer_norm: scale/shift " + shape_str(gamma.value().shape()) + " do not match " +
                     shape_str(xv.shape()));
  }
  Tensor<T> out(xv.shape());
  Tensor<T> xhat(xv.shape());
  std::vector<T> inv_std(batch);
  auto xd = xv.data();
  auto gd = gamma.value().data();
  auto bd = beta.value().data();
  for (std::size_t b = 0; b < batch; ++b) {
    const T* row = xd.data() + b * n;
    T mean{0};
    for (std::size_t i = 0; i < n; ++i) mean += row[i];
    mean /= static_cast<T>(n);
    T var{0};
    for (std::size_t i = 0; i < n; ++i) var += (row[i] - mean) * (row[i] - mean);
    var /= static_cast<T>(n);
    inv_std[b] = T{1} / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) {
      const T h = (row[i] - mean) * inv_std[b];
      xhat[b * n + i] = h;
      out[b * n + i] = h * gd[i] + bd[i];
    }
  }
  return tape.record(std::move(out), {x, gamma, beta},
                     [gamma, batch, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                         const Tensor<T>&, const Tensor<T>& g, Slots<T> s) {
    auto gd = g.data();
    auto gam = gamma.value().data();
    for (std::size_t b = 0; b < batch; ++b) {
      const T* gy = gd.data() + b * n;
      const T* h = xhat.data().data() + b * n;
      if (s[1]) {
        auto gg = s[1]->data();
        for (std::size_t i = 0; i < n; ++i) gg[i] += gy[i] * h[i];
      }
      if (s[2]) {
        auto gb = s[2]->data();
        for (std::size_t i = 0; i < n; ++i) gb[i] += gy[i];
      }
      if (s[0]) {
        T sum_g{0}, sum_gh{0};
        for (std::size_t i = 0; i < n; ++i) {
          const T gh = gy[i] * gam[i];
          sum_g += gh;
          sum_gh += gh * h[i];
        }
        auto gx = s[0]->data();
        const T k = inv_std[b] / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) {
          const T gh = gy[i] * gam[i];
          gx[b * n + i] += k * (static_cast<T>(n) * gh - sum_g - h[i] * sum_gh);
        }
      }
    }
  });
}

#define SDA_INSTANTIATE_OPS(T)                                                                          \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                    \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                    \
  template Var<T> add(const Var<T>&, std::type_identity_t<T>);                                          \
  template Var<T> mul(const Var<T>&, std::type_identity_t<T>);                                          \
  template Var<T> scale(const Var<T>&, std::type_identity_t<T>);                                        \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                                 \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const std::optional<Var<T>>&, Conv2dOptions); \
  template Var<T> global_avg_pool(const Var<T>&);                                                       \
  template Var<T> channel_pool(const Var<T>&, PoolKind);                                                \
  template Var<T> softmax(const Var<T>&, std::size_t);                                                  \
  template Var<T> bilinear_resize(const Var<T>&, std::size_t, std::size_t);                             \
  template Var<T> relu(const Var<T>&);                                                                  \
  template Var<T> sigmoid(const Var<T>&);                                                               \
  template Var<T> concat(std::span<const Var<T>>, std::size_t);                                         \
  template Var<T> reduce_sum(const Var<T>&);                                                            \
  template Var<T> reduce_mean(const Var<T>&);                                                           \
  template Var<T> reduce_sum(const Var<T>&, const std::vector<std::size_t>&);                           \
  template Var<T> reduce_mean(const Var<T>&, const std::vector<std::size_t>&);                          \
  template Var<T> reshape(const Var<T>&, Shape);                                                        \
  template Var<T> slice(const Var<T>&, std::size_t, std::size_t, std::size_t);                          \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);

SDA_INSTANTIATE_OPS(float)
SDA_INSTANTIATE_OPS(double)

}  // namespace sda
