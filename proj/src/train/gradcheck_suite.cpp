#include "sda/train/gradcheck_suite.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <memory>
#include <random>

#include "sda/detector/model.hpp"
#include "sda/errors.hpp"
#include "sda/neck/neck.hpp"
#include "sda/tensor/grad_check.hpp"

namespace sda::train {

namespace {

using D = double;
using Clock = std::chrono::steady_clock;

Tensor<D> uniform(const Shape& shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<D> t(shape);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

// |v| in [margin, 1] keeps ReLU, max and L1 kinks out of the difference stencil.
Tensor<D> off_zero(const Shape& shape, std::mt19937_64& rng, double margin = 0.05) {
  std::uniform_real_distribution<double> mag(margin, 1.0);
  std::bernoulli_distribution sign(0.5);
  Tensor<D> t(shape);
  for (auto& v : t.data()) v = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

Var<D> project(Tape<D>& tape, const Var<D>& y, std::mt19937_64& rng) {
  return reduce_sum(mul(y, tape.constant(uniform(y.shape(), rng, -1, 1))));
}

// One seeded instance: parameters to perturb plus the graph reading them.
struct Instance {
  std::vector<std::unique_ptr<Parameter<D>>> owned;
  std::vector<GradTarget<D>> targets;
  std::function<Var<D>(Tape<D>&)> build;

  Parameter<D>& add(const std::string& name, Tensor<D> value) {
    owned.push_back(std::make_unique<Parameter<D>>(std::move(value)));
    targets.push_back({name, owned.back().get()});
    return *owned.back();
  }
};

using Factory = std::function<void(Instance&, std::mt19937_64&)>;

struct CaseDef {
  std::string name;
  bool composite;
  Factory make;
  double step = 0.0;  // 0 uses the suite step
};

using UnaryFn = std::function<Var<D>(const Var<D>&)>;
using BinaryFn = std::function<Var<D>(const Var<D>&, const Var<D>&)>;

CaseDef unary(std::string name, Shape shape, UnaryFn fn) {
  return {name, false, [shape, fn](Instance& in, std::mt19937_64& rng) {
            auto& a = in.add("a", off_zero(shape, rng));
            const std::uint64_t proj = rng();
            in.build = [&a, fn, proj](Tape<D>& t) {
              std::mt19937_64 prng(proj);
              return project(t, fn(t.param(a)), prng);
            };
          }};
}

CaseDef binary(std::string name, Shape sa, Shape sb, BinaryFn fn) {
  return {name, false, [sa, sb, fn](Instance& in, std::mt19937_64& rng) {
            auto& a = in.add("a", off_zero(sa, rng));
            auto& b = in.add("b", off_zero(sb, rng));
            const std::uint64_t proj = rng();
            in.build = [&a, &b, fn, proj](Tape<D>& t) {
              std::mt19937_64 prng(proj);
              return project(t, fn(t.param(a), t.param(b)), prng);
            };
          }};
}

template <typename P>
void jitter_neck(neck::NeckParams<P>& p, std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  neck::visit_params<P>(p, [&](const std::string&, Parameter<P>& x) {
    for (auto& v : x.value.data()) v += u(rng);
  });
}

neck::NeckConfig small_neck(bool sca, bool ssa, bool dr) {
  neck::NeckConfig c;
  c.n_levels = 3;
  c.channels = 8;
  c.ssa_kernel = 3;
  c.dr_ratio = 2;  // a bottleneck of 4 keeps the layer norm well conditioned
  c.use_sca = sca;
  c.use_ssa = ssa;
  c.use_dr = dr;
  return c;
}

void add_neck_params(Instance& in, neck::NeckParams<D>& p) {
  neck::visit_params<D>(p, [&](const std::string& n, Parameter<D>& x) { in.targets.push_back({n, &x}); });
}

// Pyramid leaves at 8x8, 4x4, 2x2 with 8 channels.
std::vector<Parameter<D>*> add_pyramid(Instance& in, std::mt19937_64& rng) {
  std::vector<Parameter<D>*> out;
  for (std::size_t l = 0; l < 3; ++l) {
    const std::size_t e = std::size_t(8) >> l;
    out.push_back(&in.add("x" + std::to_string(l), uniform({2, 8, e, e}, rng, -1, 1)));
  }
  return out;
}

neck::FeaturePyramid<D> bind_pyramid(Tape<D>& t, const std::vector<Parameter<D>*>& xs) {
  neck::FeaturePyramid<D> p;
  for (std::size_t l = 0; l < xs.size(); ++l) {
    p.levels.push_back(t.param(*xs[l]));
    p.strides.push_back(std::size_t(4) << l);
  }
  return p;
}

CaseDef attention_case(std::string name, bool sca) {
  return {name, true, [sca](Instance& in, std::mt19937_64& rng) {
            auto cfg = small_neck(sca, !sca, false);
            auto params = std::make_shared<neck::NeckParams<D>>(neck::init_neck_params<D>(cfg, rng));
            jitter_neck(*params, rng, 0.3);
            std::vector<Parameter<D>*> xs;
            for (std::size_t i = 0; i < 3; ++i) xs.push_back(&in.add("x" + std::to_string(i), uniform({2, 8, 4, 4}, rng, -1, 1)));
            add_neck_params(in, *params);
            const std::uint64_t proj = rng();
            in.build = [params, xs, sca, proj](Tape<D>& t) {
              std::vector<Var<D>> v;
              for (auto* x : xs) v.push_back(t.param(*x));
              auto& lp = params->levels[0];
              auto out = sca ? neck::sca_forward<D>(v, *lp.sca) : neck::ssa_forward<D>(v, *lp.ssa);
              std::mt19937_64 prng(proj);
              return project(t, out.fused, prng);
            };
          }};
}

std::vector<CaseDef> all_cases() {
  std::vector<CaseDef> c;
  c.push_back(binary("add", {2, 3, 4}, {2, 3, 4}, [](auto& a, auto& b) { return add(a, b); }));
  c.push_back(binary("add_broadcast", {2, 3, 4}, {1, 3, 1}, [](auto& a, auto& b) { return add(a, b); }));
  c.push_back(binary("mul", {2, 3, 4}, {2, 1, 4}, [](auto& a, auto& b) { return mul(a, b); }));
  c.push_back(unary("add_scalar", {3, 4}, [](auto& a) { return add(a, 0.7); }));
  c.push_back(unary("mul_scalar", {3, 4}, [](auto& a) { return mul(a, -1.3); }));
  c.push_back(unary("scale", {5}, [](auto& a) { return scale(a, 2.5); }));
  c.push_back(binary("matmul", {3, 4}, {4, 5}, [](auto& a, auto& b) { return matmul(a, b); }));
  c.push_back(binary("conv2d", {2, 3, 6, 6}, {4, 3, 3, 3},
                     [](auto& a, auto& b) { return conv2d(a, b, std::nullopt, {1, 1}); }));
  c.push_back({"conv2d_stride2_bias", false, [](Instance& in, std::mt19937_64& rng) {
                 auto& x = in.add("x", off_zero({1, 2, 8, 8}, rng));
                 auto& w = in.add("w", off_zero({3, 2, 4, 4}, rng));
                 auto& b = in.add("b", off_zero({3}, rng));
                 const std::uint64_t proj = rng();
                 in.build = [&x, &w, &b, proj](Tape<D>& t) {
                   std::mt19937_64 prng(proj);
                   return project(t, conv2d(t.param(x), t.param(w), t.param(b), {2, 1}), prng);
                 };
               }});
  c.push_back(unary("global_avg_pool", {2, 3, 4, 3}, [](auto& a) { return global_avg_pool(a); }));
  c.push_back(unary("channel_pool_avg", {2, 4, 3, 3}, [](auto& a) { return channel_pool(a, PoolKind::avg); }));
  c.push_back(unary("channel_pool_max", {2, 4, 3, 3}, [](auto& a) { return channel_pool(a, PoolKind::max); }));
  c.push_back(unary("softmax_axis0", {3, 4}, [](auto& a) { return softmax(a, 0); }));
  c.push_back(unary("softmax_axis1", {2, 3, 4}, [](auto& a) { return softmax(a, 1); }));
  c.push_back(unary("bilinear_up", {1, 2, 3, 4}, [](auto& a) { return bilinear_resize(a, 7, 9); }));
  c.push_back(unary("bilinear_down", {1, 2, 8, 6}, [](auto& a) { return bilinear_resize(a, 3, 4); }));
  c.push_back(unary("relu", {4, 5}, [](auto& a) { return relu(a); }));
  c.push_back(unary("sigmoid", {4, 5}, [](auto& a) { return sigmoid(a); }));
  c.push_back(binary("concat", {2, 3, 2}, {2, 2, 2}, [](auto& a, auto& b) {
    std::vector<Var<D>> xs{a, b};
    return concat<D>(xs, 1);
  }));
  c.push_back(unary("reduce_sum", {3, 4}, [](auto& a) { return reduce_sum(a); }));
  c.push_back(unary("reduce_mean", {3, 4}, [](auto& a) { return reduce_mean(a); }));
  c.push_back(unary("reduce_sum_axes", {2, 3, 4}, [](auto& a) { return reduce_sum(a, {0, 2}); }));
  c.push_back(unary("reduce_mean_axes", {2, 3, 4}, [](auto& a) { return reduce_mean(a, {1}); }));
  c.push_back(unary("reshape", {2, 6}, [](auto& a) { return reshape(a, {3, 4}); }));
  c.push_back(unary("slice", {2, 5, 3}, [](auto& a) { return slice(a, 1, 1, 4); }));
  c.push_back({"layer_norm", false, [](Instance& in, std::mt19937_64& rng) {
                 auto& x = in.add("x", off_zero({2, 5, 2, 2}, rng));
                 auto& g = in.add("gamma", off_zero({5, 2, 2}, rng));
                 auto& b = in.add("beta", off_zero({5, 2, 2}, rng));
                 const std::uint64_t proj = rng();
                 in.build = [&x, &g, &b, proj](Tape<D>& t) {
                   std::mt19937_64 prng(proj);
                   return project(t, layer_norm(t.param(x), t.param(g), t.param(b)), prng);
                 };
               }});
  c.push_back({"quality_focal", false, [](Instance& in, std::mt19937_64& rng) {
                 auto& x = in.add("logits", uniform({2, 3, 4, 4}, rng, -4, 4));
                 const Tensor<D> y = uniform({2, 3, 4, 4}, rng, 0, 1);
                 in.build = [&x, y](Tape<D>& t) { return detector::quality_focal_sum(t.param(x), y, 2.0); };
               }});
  c.push_back({"masked_l1", false, [](Instance& in, std::mt19937_64& rng) {
                 const Tensor<D> target = uniform({2, 2, 3, 3}, rng, -2, 2);
                 Tensor<D> pred = off_zero({2, 2, 3, 3}, rng);
                 for (std::size_t i = 0; i < pred.size(); ++i) pred[i] += target[i];
                 auto& p = in.add("pred", pred);
                 Tensor<D> mask(Shape{2, 1, 3, 3});
                 std::bernoulli_distribution on(0.5);
                 for (auto& m : mask.data()) m = on(rng) ? 1.0 : 0.0;
                 in.build = [&p, target, mask](Tape<D>& t) { return detector::masked_l1_sum(t.param(p), target, mask); };
               }});

  c.push_back(attention_case("sca", true));
  c.push_back(attention_case("ssa", false));
  c.push_back({"dr", true, [](Instance& in, std::mt19937_64& rng) {
                 auto cfg = small_neck(false, false, true);
                 auto params = std::make_shared<neck::NeckParams<D>>(neck::init_neck_params<D>(cfg, rng));
                 jitter_neck(*params, rng, 0.3);
                 auto& x = in.add("x", uniform({2, 8, 4, 4}, rng, -1, 1));
                 add_neck_params(in, *params);
                 const std::uint64_t proj = rng();
                 in.build = [params, &x, proj](Tape<D>& t) {
                   std::mt19937_64 prng(proj);
                   return project(t, neck::dr_forward(t.param(x), *params->levels[0].dr), prng);
                 };
               }});
  c.push_back({"neck", true, [](Instance& in, std::mt19937_64& rng) {
                 auto cfg = small_neck(true, true, true);
                 auto params = std::make_shared<neck::NeckParams<D>>(neck::init_neck_params<D>(cfg, rng));
                 jitter_neck(*params, rng, 0.3);
                 auto xs = add_pyramid(in, rng);
                 add_neck_params(in, *params);
                 const std::uint64_t proj = rng();
                 in.build = [params, xs, cfg, proj](Tape<D>& t) {
                   auto out = neck::neck_forward(bind_pyramid(t, xs), *params, cfg);
                   std::mt19937_64 prng(proj);
                   Var<D> loss;
                   for (std::size_t l = 0; l < out.size(); ++l) {
                     auto term = project(t, out.levels[l], prng);
                     loss = l == 0 ? term : add(loss, term);
                   }
                   return loss;
                 };
               }});
  c.push_back({"detection_loss", true, [](Instance& in, std::mt19937_64& rng) {
                 detector::TargetConfig tcfg;
                 std::uniform_real_distribution<double> pos(0, 20), ext(4, 14);
                 std::vector<std::vector<detector::GtBox>> boxes(2);
                 for (auto& img : boxes) {
                   img.push_back({0, {pos(rng), pos(rng), ext(rng), ext(rng)}});
                   img.push_back({1, {pos(rng), pos(rng), ext(rng), ext(rng)}});
                 }
                 boxes[0].push_back({1, {0, 0, 34, 34}});
                 auto targets = std::make_shared<std::vector<detector::LevelTargets<D>>>(
                     detector::render_targets<D>(boxes, {{{8, 8}}, {{4, 4}}, {{2, 2}}}, 2, tcfg));
                 std::vector<std::array<Parameter<D>*, 3>> outs;
                 for (std::size_t l = 0; l < targets->size(); ++l) {
                   const auto& tl = (*targets)[l];
                   Tensor<D> size = off_zero(tl.size.shape(), rng), off = off_zero(tl.offset.shape(), rng);
                   for (std::size_t i = 0; i < size.size(); ++i) size[i] += tl.size[i];
                   for (std::size_t i = 0; i < off.size(); ++i) off[i] += tl.offset[i];
                   const auto L = std::to_string(l);
                   outs.push_back({&in.add("heat" + L, uniform(tl.heatmap.shape(), rng, -3, 3)),
                                   &in.add("size" + L, size), &in.add("offset" + L, off)});
                 }
                 in.build = [targets, outs](Tape<D>& t) {
                   std::vector<detector::LevelOutput<D>> o;
                   for (const auto& p : outs) o.push_back({t.param(*p[0]), t.param(*p[1]), t.param(*p[2])});
                   return detector::detection_loss(o, *targets, detector::LossConfig{});
                 };
               }});
  c.push_back({"detector", true, [](Instance& in, std::mt19937_64& rng) {
                 detector::DetectorConfig cfg;
                 cfg.image_size = 32;
                 cfg.backbone.widths = {3, 4, 4, 4};
                 cfg.backbone.channels = 8;
                 cfg.head.hidden = 4;
                 cfg.neck.ssa_kernel = 3;
                 cfg.neck.dr_ratio = 2;
                 cfg.targets.area_limits = {64.0, 144.0};  // every level receives objects
                 auto model = std::make_shared<detector::Detector<D>>(detector::Detector<D>::init(cfg, rng()));
                 std::uniform_real_distribution<double> u(-0.05, 0.05);
                 model->visit_params([&](const std::string& n, Parameter<D>& p) {
                   for (auto& v : p.value.data()) v += u(rng);
                   in.targets.push_back({n, &p});
                 });
                 const Tensor<D> img = uniform({1, 3, 32, 32}, rng, 0, 1);
                 std::uniform_real_distribution<double> pos(0, 18);
                 std::vector<std::vector<detector::GtBox>> boxes{{{0, {pos(rng), pos(rng), 6, 6}},
                                                                  {1, {pos(rng), pos(rng), 10, 11}},
                                                                  {2, {pos(rng), pos(rng), 13, 14}}}};
                 in.build = [model, img, boxes](Tape<D>& t) { return model->loss(t, t.constant(img), boxes); };
               },
               1e-5});
  return c;
}

}  // namespace

bool SuiteReport::passed() const {
  return std::all_of(cases.begin(), cases.end(), [](const SuiteCase& c) { return c.passed; });
}

std::string SuiteReport::text() const {
  std::string out;
  char buf[256];
  for (const auto& c : cases) {
    std::snprintf(buf, sizeof buf, "%s %-20s %-9s max_rel_err %.3e  tol %.0e  seeds %zu  %.2fs%s%s\n",
                  c.passed ? "PASS" : "FAIL", c.name.c_str(), c.composite ? "composite" : "op", c.max_rel_error,
                  c.tolerance, c.seeds, c.seconds, c.worst.empty() ? "" : "  worst ", c.worst.c_str());
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "%s: %zu cases in %.1fs\n", passed() ? "PASS" : "FAIL", cases.size(), seconds);
  return out + buf;
}

std::vector<std::string> gradcheck_case_names() {
  std::vector<std::string> out;
  for (const auto& c : all_cases()) out.push_back(c.name);
  return out;
}

SuiteReport run_gradcheck_suite(const SuiteOptions& opts) {
  if (opts.seeds == 0) throw ConfigError("gradcheck: seeds must be >= 1");
  const auto cases = all_cases();
  for (const auto& name : opts.only) {
    if (std::none_of(cases.begin(), cases.end(), [&](const CaseDef& c) { return c.name == name; })) {
      throw ConfigError("gradcheck: unknown case \"" + name + "\"");
    }
  }
  SuiteReport report;
  const auto t_all = Clock::now();
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    const auto& def = cases[ci];
    if (!opts.only.empty() && std::find(opts.only.begin(), opts.only.end(), def.name) == opts.only.end()) continue;
    SuiteCase res;
    res.name = def.name;
    res.composite = def.composite;
    res.seeds = opts.seeds;
    res.tolerance = def.composite ? opts.composite_tolerance : opts.op_tolerance;
    const auto t0 = Clock::now();
    const bool corrupt = def.name == opts.fault;
    for (std::size_t s = 0; s < opts.seeds; ++s) {
      std::mt19937_64 rng(0x9E37 + ci * 1000003 + s * 7919);
      Instance in;
      def.make(in, rng);
      const double fs = opts.fault_scale;
      auto build = [&](Tape<D>& t) {
        if (corrupt) {
          t.set_backward_hook([fs](std::size_t op, Tape<D>::GradSlots slots) {
            if (op != 0) return;
            for (auto* g : slots) {
              if (g) {
                for (auto& v : g->data()) v *= fs;
              }
            }
          });
        }
        return in.build(t);
      };
      const auto r = grad_check<D>(build, in.targets, def.step > 0 ? def.step : opts.step, res.tolerance, def.name);
      for (const auto& e : r.entries) {
        if (!e.finite && res.finite) res.worst = "seed " + std::to_string(s) + ": " + e.name + " non-finite";
        res.finite = res.finite && e.finite;
        if (e.rel_error > res.max_rel_error) {
          res.max_rel_error = e.rel_error;
          if (res.finite) res.worst = "seed " + std::to_string(s) + ": " + e.name;
        }
        res.passed = res.passed && e.passed;
      }
    }
    res.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    report.cases.push_back(std::move(res));
  }
  report.seconds = std::chrono::duration<double>(Clock::now() - t_all).count();
  return report;
}

}  // namespace sda::train
