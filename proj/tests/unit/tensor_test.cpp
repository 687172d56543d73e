#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "sda/errors.hpp"
#include "sda/tensor/grad_check.hpp"
#include "sda/tensor/ops.hpp"
#include "sda/tensor/sdat.hpp"
#include "test_util.hpp"

using namespace sda;
using sda::testing::max_abs_diff;
using sda::testing::random_away_from_zero;
using sda::testing::random_tensor;

namespace {

Tensor<double> naive_matmul(const Tensor<double>& a, const Tensor<double>& b) {
  Tensor<double> c(Shape{a.dim(0), b.dim(1)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < b.dim(1); ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < a.dim(1); ++k) acc += a[i * a.dim(1) + k] * b[k * b.dim(1) + j];
      c[i * b.dim(1) + j] = acc;
    }
  return c;
}

Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& bias,
                          std::size_t stride, std::size_t pad) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
  Tensor<double> y(Shape{B, O, Ho, Wo});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t oh = 0; oh < Ho; ++oh)
        for (std::size_t ow = 0; ow < Wo; ++ow) {
          double acc = bias[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long ih = long(oh * stride + i) - long(pad), iw = long(ow * stride + j) - long(pad);
                if (ih < 0 || iw < 0 || ih >= long(H) || iw >= long(W)) continue;
                acc += x.at(b, c, ih, iw) * w.at(o, c, i, j);
              }
          y.at(b, o, oh, ow) = acc;
        }
  return y;
}

// Per-output-pixel interpolation written out directly from the half-pixel rule.
double bilinear_pixel(const Tensor<double>& x, std::size_t oy, std::size_t ox, std::size_t out_h,
                      std::size_t out_w) {
  const double H = double(x.dim(2)), W = double(x.dim(3));
  double sy = (oy + 0.5) * H / double(out_h) - 0.5;
  double sx = (ox + 0.5) * W / double(out_w) - 0.5;
  sy = std::min(std::max(sy, 0.0), H - 1);
  sx = std::min(std::max(sx, 0.0), W - 1);
  const int y0 = int(std::floor(sy)), x0 = int(std::floor(sx));
  const int y1 = std::min(y0 + 1, int(H) - 1), x1 = std::min(x0 + 1, int(W) - 1);
  const double fy = sy - y0, fx = sx - x0;
  return (1 - fy) * ((1 - fx) * x.at(0, 0, y0, x0) + fx * x.at(0, 0, y0, x1)) +
         fy * ((1 - fx) * x.at(0, 0, y1, x0) + fx * x.at(0, 0, y1, x1));
}

// Random projection loss so every output element influences the check.
Var<double> project(Tape<double>& tape, const Var<double>& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return reduce_sum(mul(y, tape.constant(random_tensor<double>(y.shape(), rng))));
}

}  // namespace

TEST(TensorOps, AddAndScale) {
  Tape<double> tape;
  auto a = tape.constant(Tensor<double>(Shape{2}, {1, 2}));
  auto b = tape.constant(Tensor<double>(Shape{2}, {3, 4}));
  EXPECT_EQ(add(a, b).value(), Tensor<double>(Shape{2}, {4, 6}));
  EXPECT_EQ(scale(a, 3.0).value(), Tensor<double>(Shape{2}, {3, 6}));
  EXPECT_EQ(add(a, 1.0).value(), Tensor<double>(Shape{2}, {2, 3}));
}

TEST(TensorOps, MulByOneIsExact) {
  std::mt19937_64 rng(7);
  Tape<float> tape;
  auto x = tape.constant(random_tensor<float>({2, 3, 4, 5}, rng));
  auto one = tape.constant(Tensor<float>::scalar(1.0f));
  EXPECT_EQ(mul(x, one).value(), x.value());
  EXPECT_EQ(mul(x, 1.0f).value(), x.value());
}

TEST(TensorOps, BroadcastAlongUnitExtents) {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>(Shape{1, 2, 1, 2}, {1, 2, 3, 4}));
  auto w = tape.constant(Tensor<double>(Shape{1, 2, 1, 1}, {10, 100}));
  EXPECT_EQ(mul(x, w).value(), Tensor<double>(Shape{1, 2, 1, 2}, {10, 20, 300, 400}));
  EXPECT_EQ(add(x, w).value(), Tensor<double>(Shape{1, 2, 1, 2}, {11, 12, 103, 104}));
}

TEST(TensorOps, IncompatibleShapesNameBoth) {
  Tape<double> tape;
  auto a = tape.constant(Tensor<double>(Shape{2, 3}));
  auto b = tape.constant(Tensor<double>(Shape{2, 4}));
  try {
    add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
    EXPECT_NE(msg.find("[2,4]"), std::string::npos);
  }
}

TEST(TensorOps, GradOfSumMulIsOtherOperand) {
  std::mt19937_64 rng(1);
  Parameter<double> a(random_tensor<double>({3, 4}, rng));
  Parameter<double> b(random_tensor<double>({3, 4}, rng));
  {
    Tape<double> tape;
    tape.backward(reduce_sum(mul(tape.param(a), tape.param(b))));
  }
  EXPECT_EQ(a.grad, b.value);
  std::vector<GradTarget<double>> targets{{"a", &a}, {"b", &b}};
  auto report = grad_check<double>(
      [&](Tape<double>& t) { return reduce_sum(mul(t.param(a), t.param(b))); }, targets, 1e-4, 1e-6);
  EXPECT_TRUE(report.passed()) << report.max_rel_error();
}

TEST(TensorOps, MatmulCases) {
  Tape<double> tape;
  auto m = tape.constant(Tensor<double>(Shape{2, 2}, {1, 2, 3, 4}));
  auto v = tape.constant(Tensor<double>(Shape{2, 1}, {1, 1}));
  EXPECT_EQ(matmul(m, v).value(), Tensor<double>(Shape{2, 1}, {3, 7}));

  std::mt19937_64 rng(3);
  auto x = random_tensor<double>({3, 5}, rng);
  Tensor<double> eye(Shape{3, 3});
  for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1;
  EXPECT_EQ(matmul(tape.constant(eye), tape.constant(x)).value(), x);

  auto a = random_tensor<double>({5, 4}, rng);
  auto b = random_tensor<double>({4, 3}, rng);
  EXPECT_LT(max_abs_diff(matmul(tape.constant(a), tape.constant(b)).value(), naive_matmul(a, b)), 1e-12);
  EXPECT_THROW(matmul(tape.constant(a), tape.constant(a)), ShapeError);
}

TEST(TensorOps, ConvIdentityAndOnesKernel) {
  std::mt19937_64 rng(5);
  Tape<double> tape;
  auto x = random_tensor<double>({2, 3, 4, 5}, rng);
  Tensor<double> eye(Shape{3, 3, 1, 1});
  for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1;
  EXPECT_EQ(conv2d(tape.constant(x), tape.constant(eye), std::nullopt).value(), x);

  auto ones = tape.constant(Tensor<double>(Shape{1, 1, 3, 3}, 1.0));
  auto k = tape.constant(Tensor<double>(Shape{1, 1, 3, 3}, 1.0));
  auto y = conv2d(ones, k, std::nullopt, {1, 1}).value();
  // Hand-unrolled: centre sees 9 ones, edges 6, corners 4.
  EXPECT_EQ(y, Tensor<double>(Shape{1, 1, 3, 3}, {4, 6, 4, 6, 9, 6, 4, 6, 4}));
}

TEST(TensorOps, ConvMatchesDirectOracle) {
  std::mt19937_64 rng(11);
  for (auto [stride, pad, k] : {std::tuple{1, 1, 3}, {2, 1, 3}, {1, 3, 7}, {2, 0, 1}, {1, 0, 1}}) {
    auto x = random_tensor<double>({2, 3, 9, 7}, rng);
    if ((9 + 2 * pad - k) % stride || (7 + 2 * pad - k) % stride) x = random_tensor<double>({2, 3, 9, 9}, rng);
    auto w = random_tensor<double>({4, 3, std::size_t(k), std::size_t(k)}, rng);
    auto bias = random_tensor<double>({4}, rng);
    Tape<double> tape;
    auto y = conv2d(tape.constant(x), tape.constant(w), tape.constant(bias), {std::size_t(stride), std::size_t(pad)});
    EXPECT_LT(max_abs_diff(y.value(), naive_conv(x, w, bias, stride, pad)), 1e-12);
  }
}

TEST(TensorOps, ConvRejectsNonIntegralExtent) {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>(Shape{1, 1, 4, 4}));
  auto w = tape.constant(Tensor<double>(Shape{1, 1, 3, 3}));
  EXPECT_THROW(conv2d(x, w, std::nullopt, {2, 0}), ShapeError);
  auto w2 = tape.constant(Tensor<double>(Shape{1, 2, 3, 3}));
  EXPECT_THROW(conv2d(x, w2, std::nullopt, {1, 1}), ShapeError);
}

TEST(TensorOps, ConvGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(13);
  for (auto [stride, pad] : {std::pair{1, 1}, {2, 1}}) {
    Parameter<double> x(random_tensor<double>({2, 2, 5, 5}, rng));
    Parameter<double> w(random_tensor<double>({3, 2, 3, 3}, rng));
    Parameter<double> b(random_tensor<double>({3}, rng));
    std::vector<GradTarget<double>> targets{{"x", &x}, {"w", &w}, {"b", &b}};
    auto report = grad_check<double>(
        [&](Tape<double>& t) {
          return project(t, conv2d(t.param(x), t.param(w), t.param(b), {std::size_t(stride), std::size_t(pad)}), 9);
        },
        targets, 1e-4, 1e-6);
    EXPECT_TRUE(report.passed()) << report.max_rel_error();
  }
}

TEST(TensorOps, GlobalAvgPool) {
  Tape<double> tape;
  auto c = tape.constant(Tensor<double>(Shape{1, 2, 3, 3}, 0.75));
  auto y = global_avg_pool(c).value();
  EXPECT_EQ(y.shape(), (Shape{1, 2, 1, 1}));
  EXPECT_DOUBLE_EQ(y[0], 0.75);
  auto x = tape.constant(Tensor<double>(Shape{1, 1, 2, 2}, {1, 2, 3, 4}));
  EXPECT_DOUBLE_EQ(global_avg_pool(x).value().item(), 2.5);

  Tape<double> t2;
  auto leaf = t2.leaf(Tensor<double>(Shape{1, 1, 2, 3}, 1.0));
  t2.backward(reduce_sum(global_avg_pool(leaf)));
  for (double g : t2.grad(leaf)->data()) EXPECT_DOUBLE_EQ(g, 1.0 / 6.0);
}

TEST(TensorOps, ChannelPool) {
  Tape<double> tape;
  std::mt19937_64 rng(2);
  auto one = tape.constant(random_tensor<double>({2, 1, 3, 3}, rng));
  EXPECT_EQ(channel_pool(one, PoolKind::avg).value(), one.value());
  EXPECT_EQ(channel_pool(one, PoolKind::max).value(), one.value());

  auto leaf = tape.leaf(Tensor<double>(Shape{1, 3, 1, 1}, {1, 5, 3}));
  EXPECT_DOUBLE_EQ(channel_pool(leaf, PoolKind::avg).value().item(), 3.0);
  auto mx = channel_pool(leaf, PoolKind::max);
  EXPECT_DOUBLE_EQ(mx.value().item(), 5.0);
  tape.backward(reduce_sum(mx));
  EXPECT_EQ(*tape.grad(leaf), Tensor<double>(Shape{1, 3, 1, 1}, {0, 1, 0}));

  Tape<double> ties;
  auto tied = ties.leaf(Tensor<double>(Shape{1, 3, 1, 1}, {4, 4, 1}));
  ties.backward(reduce_sum(channel_pool(tied, PoolKind::max)));
  EXPECT_EQ(*ties.grad(tied), Tensor<double>(Shape{1, 3, 1, 1}, {1, 0, 0}));
}

TEST(TensorOps, SoftmaxBasics) {
  Tape<double> tape;
  auto z = softmax(tape.constant(Tensor<double>(Shape{2}, {0, 0})), 0).value();
  EXPECT_DOUBLE_EQ(z[0], 0.5);
  EXPECT_DOUBLE_EQ(z[1], 0.5);

  std::mt19937_64 rng(4);
  auto x = random_tensor<double>({3, 4, 5}, rng, -5, 5);
  auto shifted = x;
  for (auto& v : shifted.data()) v += 17.25;
  for (std::size_t axis = 0; axis < 3; ++axis) {
    auto a = softmax(tape.constant(x), axis).value();
    auto b = softmax(tape.constant(shifted), axis).value();
    EXPECT_LT(max_abs_diff(a, b), 1e-12);
    auto sums = reduce_sum(tape.constant(a), {axis}).value();
    for (double s : sums.data()) EXPECT_NEAR(s, 1.0, 1e-12);
    for (double v : a.data()) EXPECT_GE(v, 0.0);
  }
  Tensor<double> bad(Shape{2}, {0, std::numeric_limits<double>::infinity()});
  EXPECT_THROW(softmax(tape.constant(bad), 0), ValueError);
  EXPECT_THROW(softmax(tape.constant(x), 3), ShapeError);
}

TEST(TensorOps, SoftmaxFloatSumsWithinTolerance) {
  std::mt19937_64 rng(8);
  Tape<float> tape;
  auto y = softmax(tape.constant(random_tensor<float>({4, 6, 3}, rng, -8, 8)), 1).value();
  auto sums = reduce_sum(tape.constant(y), {1}).value();
  for (float s : sums.data()) EXPECT_NEAR(s, 1.0f, 1e-6f);
}

TEST(TensorOps, BilinearResize) {
  std::mt19937_64 rng(6);
  Tape<float> tf;
  auto x = tf.constant(random_tensor<float>({2, 3, 5, 7}, rng));
  EXPECT_EQ(bilinear_resize(x, 5, 7).value(), x.value());

  Tape<double> tape;
  auto c = tape.constant(Tensor<double>(Shape{1, 2, 3, 4}, 0.3));
  for (auto [h, w] : {std::pair{1, 1}, {6, 8}, {7, 2}, {13, 5}}) {
    for (double v : bilinear_resize(c, h, w).value().data()) EXPECT_DOUBLE_EQ(v, 0.3);
  }

  Tensor<double> src(Shape{1, 1, 2, 2}, {0, 1, 2, 3});
  auto up = bilinear_resize(tape.constant(src), 4, 4).value();
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t xx = 0; xx < 4; ++xx) EXPECT_NEAR(up.at(0, 0, y, xx), bilinear_pixel(src, y, xx, 4, 4), 1e-12);
  // Corner clamps to the source value; interior pixel (1,1) blends to 0.75.
  EXPECT_DOUBLE_EQ(up.at(0, 0, 0, 0), 0.0);
  EXPECT_DOUBLE_EQ(up.at(0, 0, 1, 1), 0.75);

  auto big = random_tensor<double>({1, 1, 8, 6}, rng);
  auto down = bilinear_resize(tape.constant(big), 3, 4).value();
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t xx = 0; xx < 4; ++xx) EXPECT_NEAR(down.at(0, 0, y, xx), bilinear_pixel(big, y, xx, 3, 4), 1e-12);
}

TEST(TensorOps, ReluSigmoidConcat) {
  Tape<double> tape;
  auto r = tape.leaf(Tensor<double>(Shape{3}, {-1, 0, 2}));
  auto y = relu(r);
  EXPECT_EQ(y.value(), Tensor<double>(Shape{3}, {0, 0, 2}));
  tape.backward(reduce_sum(y));
  EXPECT_EQ(*tape.grad(r), Tensor<double>(Shape{3}, {0, 0, 1}));
  EXPECT_DOUBLE_EQ(sigmoid(tape.constant(Tensor<double>::scalar(0))).value().item(), 0.5);

  std::vector<Var<double>> parts{tape.constant(Tensor<double>(Shape{1, 2, 4, 4})),
                                 tape.constant(Tensor<double>(Shape{1, 3, 4, 4}))};
  EXPECT_EQ(concat<double>(parts, 1).shape(), (Shape{1, 5, 4, 4}));
  std::vector<Var<double>> bad{parts[0], tape.constant(Tensor<double>(Shape{1, 2, 4, 5}))};
  EXPECT_THROW(concat<double>(bad, 1), ShapeError);
}

TEST(TensorOps, ReshapeSliceReduce) {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>(Shape{2, 3}, {1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(slice(x, 1, 1, 3).value(), Tensor<double>(Shape{2, 2}, {2, 3, 5, 6}));
  EXPECT_EQ(reduce_sum(x, {0}).value(), Tensor<double>(Shape{1, 3}, {5, 7, 9}));
  EXPECT_EQ(reduce_mean(x, {1}).value(), Tensor<double>(Shape{2, 1}, {2, 5}));
  EXPECT_DOUBLE_EQ(reduce_mean(x).value().item(), 3.5);
  EXPECT_EQ(reshape(x, {3, 2}).shape(), (Shape{3, 2}));
  EXPECT_THROW(reshape(x, {4, 2}), ShapeError);
  EXPECT_THROW(slice(x, 1, 2, 2), ShapeError);
}

TEST(Tape, BackwardBasics) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>(Shape{2, 3}, 0.5));
  auto unused = tape.leaf(Tensor<double>(Shape{2}, 1.0));
  auto loss = reduce_sum(x);
  tape.backward(loss);
  for (double g : tape.grad(x)->data()) EXPECT_EQ(g, 1.0);
  EXPECT_EQ(tape.grad(unused), nullptr);

  tape.backward(loss);
  for (double g : tape.grad(x)->data()) EXPECT_EQ(g, 2.0);

  EXPECT_THROW(tape.backward(x), UsageError);
  Tape<double> other;
  EXPECT_THROW(other.backward(loss), UsageError);
}

TEST(Tape, ConstantsAreNotRecorded) {
  Tape<double> tape;
  auto a = tape.constant(Tensor<double>(Shape{4}, 1.0));
  relu(scale(a, 2.0));
  EXPECT_EQ(tape.num_ops(), 0u);
  auto b = tape.leaf(Tensor<double>(Shape{4}, 1.0));
  add(a, b);
  EXPECT_EQ(tape.num_ops(), 1u);
}

TEST(Tape, ParameterGradientsAccumulate) {
  Parameter<double> p(Tensor<double>(Shape{3}, 2.0));
  for (int i = 0; i < 2; ++i) {
    Tape<double> tape;
    tape.backward(reduce_sum(mul(tape.param(p), tape.param(p))));
  }
  for (double g : p.grad.data()) EXPECT_DOUBLE_EQ(g, 8.0);
}

TEST(Tape, GradDisabledBindsParametersAsConstants) {
  Parameter<double> p(Tensor<double>(Shape{3}, 2.0));
  Tape<double> tape;
  tape.set_grad_enabled(false);
  auto y = reduce_sum(mul(tape.param(p), tape.param(p)));
  EXPECT_EQ(tape.num_ops(), 0u);
  EXPECT_DOUBLE_EQ(y.value().item(), 12.0);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Tape, BackwardHookSeesOpsInReverseOrder) {
  Parameter<double> p(Tensor<double>(Shape{2}, 1.0));
  Tape<double> tape;
  std::vector<std::size_t> seen;
  tape.set_backward_hook([&](std::size_t op, Tape<double>::GradSlots slots) {
    seen.push_back(op);
    if (op == 0) {
      for (auto& v : slots[0]->data()) v *= 3.0;
    }
  });
  tape.backward(reduce_sum(scale(tape.param(p), 2.0)));
  EXPECT_EQ(seen, (std::vector<std::size_t>{1, 0}));
  for (double g : p.grad.data()) EXPECT_DOUBLE_EQ(g, 6.0);
}

TEST(GradCheck, LinearFunctionIsExact) {
  std::mt19937_64 rng(21);
  Parameter<double> x(random_tensor<double>({4, 3}, rng));
  std::vector<GradTarget<double>> targets{{"x", &x}};
  auto report = grad_check<double>([&](Tape<double>& t) { return project(t, scale(t.param(x), 3.0), 2); }, targets,
                                   1e-4, 1e-6);
  ASSERT_EQ(report.entries.size(), 1u);
  EXPECT_LE(report.entries[0].rel_error, 1e-10);
}

TEST(GradCheck, NonFiniteIsFlagged) {
  Parameter<double> x(Tensor<double>(Shape{2}, {1.0, std::numeric_limits<double>::quiet_NaN()}));
  std::vector<GradTarget<double>> targets{{"x", &x}};
  auto report = grad_check<double>([&](Tape<double>& t) { return reduce_sum(t.param(x)); }, targets, 1e-4, 1e-6);
  ASSERT_EQ(report.entries.size(), 1u);
  EXPECT_FALSE(report.entries[0].finite);
  EXPECT_FALSE(report.passed());
}

// Every differentiable op against central differences over ten seeds.
TEST(GradCheck, EveryOpOverTenSeeds) {
  using Fn = std::function<Var<double>(Tape<double>&, Parameter<double>&, Parameter<double>&)>;
  struct Case {
    const char* name;
    Shape a, b;
    Fn fn;
  };
  const std::vector<Case> cases{
      {"add", {2, 3, 4}, {1, 3, 1}, [](auto& t, auto& a, auto& b) { return add(t.param(a), t.param(b)); }},
      {"mul", {2, 3, 4}, {2, 1, 4}, [](auto& t, auto& a, auto& b) { return mul(t.param(a), t.param(b)); }},
      {"scale", {5}, {1}, [](auto& t, auto& a, auto&) { return scale(t.param(a), -1.5); }},
      {"matmul", {3, 4}, {4, 2}, [](auto& t, auto& a, auto& b) { return matmul(t.param(a), t.param(b)); }},
      {"conv2d", {1, 2, 7, 7}, {2, 2, 3, 3},
       [](auto& t, auto& a, auto& b) { return conv2d(t.param(a), t.param(b), std::nullopt, {2, 1}); }},
      {"global_avg_pool", {2, 3, 3, 2}, {1}, [](auto& t, auto& a, auto&) { return global_avg_pool(t.param(a)); }},
      {"channel_pool_avg", {2, 3, 3, 2}, {1},
       [](auto& t, auto& a, auto&) { return channel_pool(t.param(a), PoolKind::avg); }},
      {"channel_pool_max", {2, 3, 3, 2}, {1},
       [](auto& t, auto& a, auto&) { return channel_pool(t.param(a), PoolKind::max); }},
      {"softmax", {3, 4, 2}, {1}, [](auto& t, auto& a, auto&) { return softmax(t.param(a), 1); }},
      {"bilinear_up", {1, 2, 3, 4}, {1}, [](auto& t, auto& a, auto&) { return bilinear_resize(t.param(a), 7, 5); }},
      {"bilinear_down", {1, 2, 8, 6}, {1}, [](auto& t, auto& a, auto&) { return bilinear_resize(t.param(a), 3, 4); }},
      {"relu", {4, 5}, {1}, [](auto& t, auto& a, auto&) { return relu(t.param(a)); }},
      {"sigmoid", {4, 5}, {1}, [](auto& t, auto& a, auto&) { return sigmoid(t.param(a)); }},
      {"concat", {2, 3, 2}, {2, 1, 2},
       [](auto& t, auto& a, auto& b) {
         std::vector<Var<double>> xs{t.param(a), t.param(b)};
         return concat<double>(xs, 1);
       }},
      {"reduce_sum_axes", {2, 3, 4}, {1}, [](auto& t, auto& a, auto&) { return reduce_sum(t.param(a), {0, 2}); }},
      {"reduce_mean_axes", {2, 3, 4}, {1}, [](auto& t, auto& a, auto&) { return reduce_mean(t.param(a), {1}); }},
      {"slice", {2, 5, 3}, {1}, [](auto& t, auto& a, auto&) { return slice(t.param(a), 1, 1, 4); }},
      {"reshape", {2, 6}, {1}, [](auto& t, auto& a, auto&) { return reshape(t.param(a), {3, 4}); }},
      {"layer_norm", {3, 4, 1, 1}, {4, 1, 1},
       [](auto& t, auto& a, auto& b) { return layer_norm(t.param(a), t.param(b), t.param(b)); }},
  };
  for (const auto& c : cases) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      std::mt19937_64 rng(seed * 7919 + 17);
      Parameter<double> a(random_away_from_zero<double>(c.a, rng, 0.05));
      Parameter<double> b(random_away_from_zero<double>(c.b, rng, 0.05));
      std::vector<GradTarget<double>> targets{{"a", &a}, {"b", &b}};
      auto report = grad_check<double>([&](Tape<double>& t) { return project(t, c.fn(t, a, b), seed + 100); },
                                       targets, 1e-4, 1e-6, c.name);
      for (const auto& e : report.entries) {
        // b is unused by unary ops; its gradient is zero on both sides.
        EXPECT_TRUE(e.passed) << c.name << " seed " << seed << " " << e.name << " rel " << e.rel_error;
      }
    }
  }
}

TEST(Tape, DeterministicForwardAndBackward) {
  auto run = [] {
    std::mt19937_64 rng(99);
    Parameter<float> w(random_tensor<float>({4, 3, 3, 3}, rng));
    Parameter<float> x(random_tensor<float>({2, 3, 8, 8}, rng));
    Tape<float> tape;
    auto y = softmax(relu(conv2d(tape.param(x), tape.param(w), std::nullopt, {1, 1})), 1);
    auto loss = reduce_sum(mul(y, bilinear_resize(y, 8, 8)));
    tape.backward(loss);
    return std::tuple{y.value(), w.grad, x.grad};
  };
  EXPECT_EQ(run(), run());
}

TEST(Sdat, HeaderLayoutAndRoundTrip) {
  Tensor<float> t(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  const std::string bytes = encode_sdat(t);
  ASSERT_EQ(bytes.size(), 4u + 3u + 2 * 8u + 6 * 4u);
  EXPECT_EQ(bytes.substr(0, 4), "SDAT");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(bytes[6], 2);
  EXPECT_EQ(static_cast<unsigned char>(bytes[7]), 2u);
  for (int i = 8; i < 15; ++i) EXPECT_EQ(bytes[i], 0);
  EXPECT_EQ(static_cast<unsigned char>(bytes[15]), 3u);
  EXPECT_EQ(std::get<Tensor<float>>(decode_sdat(bytes)), t);

  std::mt19937_64 rng(1);
  auto d = random_tensor<double>({3, 1, 2, 5}, rng);
  const auto db = encode_sdat(d);
  EXPECT_EQ(db[5], 1);
  EXPECT_EQ(std::get<Tensor<double>>(decode_sdat(db)), d);
  EXPECT_EQ(std::get<Tensor<double>>(decode_sdat(encode_sdat(Tensor<double>::scalar(2.5)))).item(), 2.5);
  EXPECT_THROW(decode_sdat("SDAX"), IoError);
  EXPECT_THROW(decode_sdat(bytes.substr(0, bytes.size() - 1)), IoError);
}
