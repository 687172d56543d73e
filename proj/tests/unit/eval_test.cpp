#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "sda/errors.hpp"
#include "sda/eval/coco_eval.hpp"
#include "sda/eval/report.hpp"

using namespace sda;
using namespace sda::eval;
using sda::xray::DatasetManifest;

namespace {

// Unit-cell counting over integer boxes.
double counted_box_iou(const BBox& a, const BBox& b) {
  long inter = 0, uni = 0;
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 40; ++x) {
      const bool ia = x >= a[0] && x < a[0] + a[2] && y >= a[1] && y < a[1] + a[3];
      const bool ib = x >= b[0] && x < b[0] + b[2] && y >= b[1] && y < b[1] + b[3];
      inter += ia && ib;
      uni += ia || ib;
    }
  return uni ? double(inter) / double(uni) : 0.0;
}

DatasetManifest random_manifest(std::mt19937_64& rng, std::size_t n_images, int n_cats) {
  DatasetManifest m;
  for (int c = 0; c < n_cats; ++c) m.categories.push_back({c, "c" + std::to_string(c)});
  std::uniform_real_distribution<double> pos(0, 80), size(4, 50);
  std::int64_t id = 1;
  for (std::size_t i = 0; i < n_images; ++i) {
    m.images.push_back({std::int64_t(i + 1), "x", 128, 128, xray::Mode::easy, 0, {}});
    const int n = std::uniform_int_distribution<int>(0, 4)(rng);
    for (int k = 0; k < n; ++k) {
      const BBox b{pos(rng), pos(rng), size(rng), size(rng)};
      m.annotations.push_back({id++, std::int64_t(i + 1), std::uniform_int_distribution<int>(0, n_cats - 1)(rng), b,
                               {}, b[2] * b[3], 0});
    }
  }
  return m;
}

std::vector<EvalDetection> noisy_detections(const DatasetManifest& m, std::mt19937_64& rng) {
  std::vector<EvalDetection> dets;
  std::normal_distribution<double> jitter(0, 3);
  std::uniform_real_distribution<double> u(0, 1), pos(0, 80), size(4, 50);
  for (const auto& a : m.annotations) {
    if (u(rng) < 0.2) continue;
    BBox b = a.bbox;
    b[0] += jitter(rng);
    b[1] += jitter(rng);
    dets.push_back({a.image_id, a.category_id, b, u(rng), std::nullopt});
  }
  for (const auto& im : m.images) {
    const int n = std::uniform_int_distribution<int>(0, 3)(rng);
    for (int k = 0; k < n; ++k) {
      dets.push_back({im.id, std::uniform_int_distribution<int>(0, int(m.categories.size()) - 1)(rng),
                      {pos(rng), pos(rng), size(rng), size(rng)}, u(rng), std::nullopt});
    }
  }
  return dets;
}

}  // namespace

TEST(BoxIou, HandCases) {
  EXPECT_DOUBLE_EQ(box_iou({0, 0, 2, 2}, {0, 0, 2, 2}), 1.0);
  EXPECT_DOUBLE_EQ(box_iou({0, 0, 2, 2}, {5, 5, 2, 2}), 0.0);
  EXPECT_DOUBLE_EQ(box_iou({0, 0, 2, 2}, {1, 1, 2, 2}), 1.0 / 7.0);
  EXPECT_DOUBLE_EQ(box_iou({0, 0, 0, 0}, {0, 0, 0, 0}), 0.0);
}

TEST(BoxIou, MatchesCellCountingOracle) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> p(0, 25), s(0, 14);
  for (int i = 0; i < 1000; ++i) {
    const BBox a{double(p(rng)), double(p(rng)), double(s(rng)), double(s(rng))};
    const BBox b{double(p(rng)), double(p(rng)), double(s(rng)), double(s(rng))};
    EXPECT_NEAR(box_iou(a, b), counted_box_iou(a, b), 1e-12);
  }
}

TEST(MaskIou, HandCasesAndOracle) {
  Mask a(16, 16), b(16, 16);
  for (std::size_t i = 0; i < 256; ++i) a.bits[i] = i % 2, b.bits[i] = 1 - i % 2;
  EXPECT_DOUBLE_EQ(mask_iou(a, a).value, 1.0);
  EXPECT_DOUBLE_EQ(mask_iou(a, b).value, 0.0);
  const auto empty = mask_iou(Mask(4, 4), Mask(4, 4));
  EXPECT_TRUE(empty.both_empty);
  EXPECT_EQ(empty.value, 0.0);
  EXPECT_THROW(mask_iou(Mask(4, 4), Mask(4, 5)), ShapeError);

  std::mt19937_64 rng(2);
  for (int n = 0; n < 1000; ++n) {
    Mask x(16, 16), y(16, 16);
    const double px = std::uniform_real_distribution<double>(0, 1)(rng);
    std::bernoulli_distribution bx(px), by(0.5);
    int inter = 0, uni = 0;
    for (std::size_t r = 0; r < 16; ++r)
      for (std::size_t c = 0; c < 16; ++c) {
        const bool vx = bx(rng), vy = by(rng);
        x.set(r, c, vx);
        y.set(r, c, vy);
        inter += vx && vy;
        uni += vx || vy;
      }
    EXPECT_NEAR(mask_iou(x, y).value, uni ? double(inter) / uni : 0.0, 1e-12);
  }
}

TEST(Match, SingleAndDuplicate) {
  const std::vector<double> one{0.8};
  auto r = match_greedy(one, 1, 1, std::vector<bool>{false}, 0.5);
  EXPECT_EQ(r.det_to_gt[0], 0);
  const std::vector<double> dup{0.9, 0.9};
  r = match_greedy(dup, 2, 1, std::vector<bool>{false}, 0.5);
  EXPECT_EQ(r.det_to_gt[0], 0);
  EXPECT_EQ(r.det_to_gt[1], -1);
  EXPECT_EQ(r.gt_to_det[0], 0);
}

TEST(Match, RandomCasesMatchStepwiseSimulation) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (int n = 0; n < 500; ++n) {
    std::vector<double> iou(12);
    for (auto& v : iou) v = std::round(u(rng) * 10) / 10;  // ties are common
    const double thr = 0.3 + 0.1 * (n % 5);
    const auto r = match_greedy(iou, 4, 3, std::vector<bool>(3, false), thr);
    // Simulation: each det in turn takes the best remaining GT, the last one on ties.
    std::vector<bool> taken(3, false);
    for (int d = 0; d < 4; ++d) {
      int want = -1;
      double best = -1;
      for (int g = 0; g < 3; ++g) {
        const double v = iou[d * 3 + g];
        if (taken[g] || v < thr) continue;
        if (v >= best) best = v, want = g;
      }
      if (want >= 0) taken[want] = true;
      EXPECT_EQ(r.det_to_gt[d], want) << "case " << n << " det " << d;
    }
  }
}

TEST(Match, IgnoredGtOnlyTakenAsFallback) {
  // det overlaps an ignored GT better than a regular one; the regular one wins.
  const std::vector<double> iou{0.9, 0.6};
  const auto r = match_greedy(iou, 1, 2, std::vector<bool>{true, false}, 0.5);
  EXPECT_EQ(r.det_to_gt[0], 1);
  EXPECT_FALSE(r.det_ignored[0]);
  const auto r2 = match_greedy(std::vector<double>{0.9, 0.2}, 1, 2, std::vector<bool>{true, false}, 0.5);
  EXPECT_EQ(r2.det_to_gt[0], 0);
  EXPECT_TRUE(r2.det_ignored[0]);
}

TEST(PrCurve, EnvelopeAndAp) {
  std::vector<double> p{1.0, 0.5, 0.67};
  precision_envelope(p);
  EXPECT_EQ(p, (std::vector<double>{1.0, 0.67, 0.67}));

  const auto pts = EvalConfig::standard().recall_points;
  const auto perfect = pr_curve(std::vector<bool>{true, true, true, true}, 4);
  for (double v : perfect.precision) EXPECT_EQ(v, 1.0);
  EXPECT_DOUBLE_EQ(average_precision(perfect, pts), 1.0);

  const auto half = pr_curve(std::vector<bool>{true, true}, 4);
  EXPECT_DOUBLE_EQ(average_precision(half, pts), 51.0 / 101.0);

  EXPECT_EQ(average_precision(pr_curve({}, 3), pts), 0.0);
  EXPECT_THROW(pr_curve(std::vector<bool>{true}, 0), ValueError);
}

TEST(Config, StandardGrid) {
  const auto c = EvalConfig::standard();
  ASSERT_EQ(c.iou_thresholds.size(), 10u);
  EXPECT_DOUBLE_EQ(c.iou_thresholds.front(), 0.5);
  EXPECT_DOUBLE_EQ(c.iou_thresholds.back(), 0.95);
  ASSERT_EQ(c.recall_points.size(), 101u);
  EXPECT_EQ(c.recall_points.back(), 1.0);
  EXPECT_EQ(c.max_dets, (std::vector<std::size_t>{1, 10, 100}));
  EXPECT_EQ(c.area_ranges[1].hi, 1024.0);
}

TEST(Summarize, HandTracedFixture) {
  const std::string dir = std::string(SDA_FIXTURE_DIR) + "/eval_fixture/";
  const auto gt = xray::load_manifest(dir + "annotations.json");
  const auto dets = load_detections(dir + "detections.json");
  const auto expected = xray::load_json(dir + "expected_summary.json").at("box");
  const auto res = evaluate(gt, dets, Task::box);
  const auto got = summary_json(res.summary);
  for (const auto& key : summary_keys()) {
    EXPECT_EQ(got.at(key).get<double>(), expected.at(key).get<double>()) << key;
  }
}

TEST(Summarize, GroundTruthReplayIsPerfect) {
  std::mt19937_64 rng(4);
  auto gt = random_manifest(rng, 10, 3);
  const auto res = evaluate(gt, replay_ground_truth(gt), Task::box);
  EXPECT_EQ(res.summary.AP, 1.0);
  EXPECT_EQ(res.summary.AP50, 1.0);
  EXPECT_EQ(res.summary.AP75, 1.0);
  EXPECT_EQ(res.summary.AR_100, 1.0);
}

TEST(Summarize, MaskReplayIsPerfect) {
  const auto cfg = xray::GeneratorConfig::defaults();
  const auto records = xray::generate_split("hard", 4, 9, cfg);
  const auto gt = xray::build_manifest(records, cfg.classes);
  const auto dets = replay_ground_truth(gt);
  ASSERT_TRUE(has_segmentations(dets));
  const auto res = evaluate(gt, dets, Task::mask);
  EXPECT_EQ(res.summary.AP, 1.0);
  auto no_seg = dets;
  no_seg[0].segmentation.reset();
  EXPECT_THROW(evaluate(gt, no_seg, Task::mask), UsageError);
}

TEST(Summarize, EmptyDetectionsAndEmptyGt) {
  std::mt19937_64 rng(5);
  auto gt = random_manifest(rng, 6, 2);
  const auto res = evaluate(gt, {}, Task::box);
  EXPECT_EQ(res.summary.AP, 0.0);
  EXPECT_EQ(res.summary.AR_100, 0.0);
  DatasetManifest empty;
  empty.categories = {{0, "a"}};
  empty.images = {{1, "x", 64, 64, xray::Mode::easy, 0, {}}};
  const auto none = evaluate(empty, {}, Task::box);
  for (double v : summary_values(none.summary)) EXPECT_EQ(v, kUndefined);
}

TEST(Summarize, TwoGtsPerImageCapOneDet) {
  DatasetManifest gt;
  gt.categories = {{0, "a"}};
  std::vector<EvalDetection> dets;
  for (int i = 1; i <= 3; ++i) {
    gt.images.push_back({i, "x", 100, 100, xray::Mode::hard, 0, {}});
    gt.annotations.push_back({2 * i, i, 0, {0, 0, 40, 40}, {}, 1600, 0});
    gt.annotations.push_back({2 * i + 1, i, 0, {50, 50, 40, 40}, {}, 1600, 0});
    dets.push_back({i, 0, {0, 0, 40, 40}, 0.9, std::nullopt});
    dets.push_back({i, 0, {50, 50, 40, 40}, 0.8, std::nullopt});
  }
  const auto res = evaluate(gt, dets, Task::box);
  EXPECT_DOUBLE_EQ(res.summary.AR_1, 0.5);
  EXPECT_DOUBLE_EQ(res.summary.AR_10, 1.0);
}

TEST(Summarize, PropertiesOnRandomRuns) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    std::mt19937_64 rng(seed);
    const auto gt = random_manifest(rng, 8, 3);
    const auto dets = noisy_detections(gt, rng);
    const auto res = evaluate(gt, dets, Task::box);
    const auto& s = res.summary;
    if (s.AP == kUndefined) continue;
    EXPECT_LE(s.AR_1, s.AR_10 + 1e-15);
    EXPECT_LE(s.AR_10, s.AR_100 + 1e-15);
    EXPECT_GE(s.AP50, s.AP75);
    EXPECT_GE(s.AP75, 0.0);
    EXPECT_LE(s.AP, s.AP50 + 1e-15);
    double mean = 0;
    for (double v : res.ap_per_threshold) mean += v / double(res.ap_per_threshold.size());
    EXPECT_NEAR(s.AP, mean, 1e-9);
    for (std::size_t t = 1; t < res.ap_per_threshold.size(); ++t) {
      EXPECT_LE(res.ap_per_threshold[t], res.ap_per_threshold[t - 1] + 1e-15);
    }
    for (double v : summary_values(s)) EXPECT_TRUE(v == kUndefined || (v >= 0.0 && v <= 1.0));
  }
}

TEST(Summarize, AddingATruePositiveNeverLowersAp) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    std::mt19937_64 rng(seed + 100);
    const auto gt = random_manifest(rng, 6, 2);
    if (gt.annotations.empty()) continue;
    auto dets = noisy_detections(gt, rng);
    const double before = evaluate(gt, dets, Task::box).summary.AP;
    // An exact copy of a GT box with a score above every other detection.
    const auto& a = gt.annotations[seed % gt.annotations.size()];
    dets.push_back({a.image_id, a.category_id, a.bbox, 2.0, std::nullopt});
    EXPECT_GE(evaluate(gt, dets, Task::box).summary.AP, before - 1e-15) << "seed " << seed;
  }
}

TEST(Summarize, AverageRecallMatchesDirectRecount) {
  // One category, IoU either 1 or 0, so recall at every threshold is the
  // fraction of GTs hit by one of each image's top-k detections.
  std::mt19937_64 rng(6);
  DatasetManifest gt;
  gt.categories = {{0, "a"}};
  std::vector<EvalDetection> dets;
  std::size_t total = 0, hit1 = 0, hit10 = 0;
  for (int i = 1; i <= 20; ++i) {
    gt.images.push_back({i, "x", 200, 200, xray::Mode::hard, 0, {}});
    const int n = std::uniform_int_distribution<int>(1, 4)(rng);
    std::vector<std::pair<double, bool>> ranked;  // (score, hits a GT)
    for (int k = 0; k < n; ++k) {
      const BBox b{double(45 * k), 0, 40, 40};
      gt.annotations.push_back({i * 10 + k, i, 0, b, {}, 1600, 0});
      ++total;
      if (std::bernoulli_distribution(0.7)(rng)) {
        const double sc = std::uniform_real_distribution<double>(0, 1)(rng);
        dets.push_back({i, 0, b, sc, std::nullopt});
        ranked.push_back({sc, true});
      }
    }
    const double fp_score = std::uniform_real_distribution<double>(0, 1)(rng);
    dets.push_back({i, 0, {0, 100, 40, 40}, fp_score, std::nullopt});
    ranked.push_back({fp_score, false});
    std::sort(ranked.begin(), ranked.end(), [](auto& a, auto& b) { return a.first > b.first; });
    hit1 += ranked[0].second ? 1 : 0;
    for (std::size_t k = 0; k < std::min<std::size_t>(10, ranked.size()); ++k) hit10 += ranked[k].second ? 1 : 0;
  }
  const auto res = evaluate(gt, dets, Task::box);
  EXPECT_NEAR(res.summary.AR_1, double(hit1) / double(total), 1e-12);
  EXPECT_NEAR(res.summary.AR_10, double(hit10) / double(total), 1e-12);
}

TEST(Summarize, TiedScoresFollowInputOrder) {
  DatasetManifest gt;
  gt.categories = {{0, "a"}};
  gt.images = {{1, "x", 100, 100, xray::Mode::easy, 0, {}}, {2, "x", 100, 100, xray::Mode::easy, 0, {}}};
  gt.annotations = {{1, 1, 0, {0, 0, 20, 20}, {}, 400, 0}, {2, 2, 0, {0, 0, 20, 20}, {}, 400, 0}};
  const EvalDetection tp{1, 0, {0, 0, 20, 20}, 0.5, std::nullopt};
  const EvalDetection fp{1, 0, {60, 60, 20, 20}, 0.5, std::nullopt};
  // Within one image the stable order decides whether the hit ranks first.
  const double tp_first = evaluate(gt, std::vector{tp, fp}, Task::box).summary.AP;
  const double fp_first = evaluate(gt, std::vector{fp, tp}, Task::box).summary.AP;
  EXPECT_DOUBLE_EQ(tp_first, 51.0 / 101.0);
  EXPECT_DOUBLE_EQ(fp_first, 0.5 * 51.0 / 101.0);
  EXPECT_EQ(evaluate(gt, std::vector{tp, fp}, Task::box).summary.AP, tp_first);
}

TEST(Report, CsvAndJsonShape) {
  std::mt19937_64 rng(7);
  const auto gt = random_manifest(rng, 4, 2);
  const auto res = evaluate(gt, replay_ground_truth(gt), Task::box);
  const auto csv = metrics_csv("hidden", {res});
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "split,task,AP,AP50,AP75,AP_S,AR_1,AR_10,AR_100,AR_S");
  const auto j = report_json("hidden", {res});
  EXPECT_TRUE(j.at("mask").is_null());
  EXPECT_EQ(j.at("box").at("AP").get<double>(), 1.0);
  EXPECT_EQ(j.at("per_category").at("box").size(), 2u);
  EXPECT_EQ(format_metric(kUndefined), "-1");
  EXPECT_EQ(format_metric(0.5), "0.500000");
}
