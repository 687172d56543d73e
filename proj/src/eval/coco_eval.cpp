#include "sda/eval/coco_eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "sda/errors.hpp"

namespace sda::eval {

using xray::DatasetManifest;

EvalConfig EvalConfig::standard() {
  EvalConfig c;
  // Same arithmetic as an evenly spaced grid: start + i * step, exact endpoint.
  const double iou_step = (0.95 - 0.5) / 9.0;
  for (int i = 0; i < 10; ++i) c.iou_thresholds.push_back(i == 9 ? 0.95 : double(i) * iou_step + 0.5);
  const double rec_step = 1.0 / 100.0;
  for (int i = 0; i <= 100; ++i) c.recall_points.push_back(i == 100 ? 1.0 : double(i) * rec_step);
  c.max_dets = {1, 10, 100};
  c.area_ranges = {{"all", 0.0, 1e10}, {"small", 0.0, 32.0 * 32.0}};
  return c;
}

void EvalConfig::validate() const {
  if (iou_thresholds.empty() || recall_points.empty() || max_dets.empty() || area_ranges.empty()) {
    throw ConfigError("eval config: empty grid");
  }
  for (std::size_t i = 1; i < iou_thresholds.size(); ++i) {
    if (!(iou_thresholds[i] > iou_thresholds[i - 1])) throw ConfigError("eval config: IoU thresholds must ascend");
  }
  for (std::size_t i = 1; i < max_dets.size(); ++i) {
    if (!(max_dets[i] > max_dets[i - 1])) throw ConfigError("eval config: max_dets must ascend");
  }
}

std::string to_string(Task t) { return t == Task::box ? "box" : "mask"; }

MatchResult match_greedy(std::span<const double> iou, std::size_t n_dets, std::size_t n_gts,
                         const std::vector<bool>& gt_ignore, double thresh) {
  if (iou.size() != n_dets * n_gts || gt_ignore.size() != n_gts) throw ShapeError("match_greedy: size mismatch");
  // Visit non-ignored GTs first so an ignored GT is only taken when no
  // regular one qualifies.
  std::vector<std::size_t> order(n_gts);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return !gt_ignore[a] && gt_ignore[b];
  });
  MatchResult r{std::vector<long>(n_dets, -1), std::vector<long>(n_gts, -1), std::vector<bool>(n_dets, false)};
  const double floor = std::min(thresh, 1.0 - 1e-10);
  for (std::size_t d = 0; d < n_dets; ++d) {
    double best = floor;
    long m = -1;
    for (std::size_t g : order) {
      if (r.gt_to_det[g] >= 0) continue;
      if (m >= 0 && !gt_ignore[std::size_t(m)] && gt_ignore[g]) break;
      const double v = iou[d * n_gts + g];
      if (v < best) continue;
      best = v;
      m = long(g);
    }
    if (m < 0) continue;
    r.det_to_gt[d] = m;
    r.gt_to_det[std::size_t(m)] = long(d);
    r.det_ignored[d] = gt_ignore[std::size_t(m)];
  }
  return r;
}

void precision_envelope(std::vector<double>& precision) {
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
}

namespace {

// Cumulative curve over scored detections; a detection that is neither tp
// nor fp (ignored) advances neither count.
PrCurve curve_from_flags(const std::vector<bool>& tp, const std::vector<bool>& fp, std::size_t n_gt) {
  PrCurve c;
  double tps = 0, fps = 0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    tps += tp[i] ? 1 : 0;
    fps += fp[i] ? 1 : 0;
    c.recall.push_back(tps / double(n_gt));
    c.precision.push_back(tps + fps > 0 ? tps / (tps + fps) : 0.0);
  }
  precision_envelope(c.precision);
  return c;
}

}  // namespace

PrCurve pr_curve(const std::vector<bool>& tp, std::size_t n_gt) {
  if (n_gt == 0) throw ValueError("pr_curve: undefined without ground truth");
  std::vector<bool> fp(tp.size());
  for (std::size_t i = 0; i < tp.size(); ++i) fp[i] = !tp[i];
  return curve_from_flags(tp, fp, n_gt);
}

double average_precision(const PrCurve& curve, std::span<const double> recall_points) {
  double sum = 0.0;
  for (double r : recall_points) {
    const auto it = std::lower_bound(curve.recall.begin(), curve.recall.end(), r);
    if (it != curve.recall.end()) sum += curve.precision[std::size_t(it - curve.recall.begin())];
  }
  return sum / double(recall_points.size());
}

bool has_segmentations(std::span<const EvalDetection> dets) {
  return std::all_of(dets.begin(), dets.end(), [](const EvalDetection& d) { return d.segmentation.has_value(); });
}

std::vector<EvalDetection> replay_ground_truth(const DatasetManifest& gt) {
  std::vector<EvalDetection> out;
  for (const auto& a : gt.annotations) {
    EvalDetection d{a.image_id, a.category_id, a.bbox, 1.0, std::nullopt};
    if (!a.segmentation.empty()) d.segmentation = xray::unflatten(a.segmentation.front());
    out.push_back(std::move(d));
  }
  return out;
}

namespace {

struct ImageEval {
  std::vector<double> scores;               // kept dets, descending score
  std::vector<std::vector<bool>> matched;   // [threshold][det]
  std::vector<std::vector<bool>> ignored;   // [threshold][det]
  std::vector<bool> gt_ignored;
};

struct Evaluator {
  const DatasetManifest& gt;
  std::span<const EvalDetection> dets;
  Task task;
  const EvalConfig& cfg;

  std::map<std::int64_t, std::pair<std::size_t, std::size_t>> image_extent;  // id -> (H, W)
  std::map<std::pair<std::int64_t, int>, std::vector<std::size_t>> gt_index, det_index;
  std::map<std::size_t, Mask> gt_masks, det_masks;

  Mask rasterize_rings(const std::vector<std::vector<double>>& rings, std::int64_t image_id) {
    const auto [H, W] = image_extent.at(image_id);
    std::vector<Mask> parts;
    for (const auto& r : rings) parts.push_back(xray::rasterize_mask(xray::unflatten(r), H, W));
    return xray::mask_union(parts, H, W);
  }

  const Mask& gt_mask(std::size_t i) {
    auto it = gt_masks.find(i);
    if (it == gt_masks.end()) {
      const auto& a = gt.annotations[i];
      it = gt_masks.emplace(i, rasterize_rings(a.segmentation, a.image_id)).first;
    }
    return it->second;
  }

  const Mask& det_mask(std::size_t i) {
    auto it = det_masks.find(i);
    if (it == det_masks.end()) {
      const auto& d = dets[i];
      it = det_masks.emplace(i, rasterize_rings({xray::flatten(*d.segmentation)}, d.image_id)).first;
    }
    return it->second;
  }

  double gt_area(std::size_t i) const {
    const auto& a = gt.annotations[i];
    return a.segmentation.empty() ? a.bbox[2] * a.bbox[3] : a.area;
  }

  double det_area(std::size_t i) {
    if (task == Task::mask) return double(det_mask(i).count());
    return dets[i].bbox[2] * dets[i].bbox[3];
  }

  double iou(std::size_t d, std::size_t g) {
    if (task == Task::box) return box_iou(dets[d].bbox, gt.annotations[g].bbox);
    return mask_iou(det_mask(d), gt_mask(g)).value;
  }

  std::optional<ImageEval> evaluate_image(std::int64_t image, int cat, const AreaRange& area) {
    const auto gi = gt_index.find({image, cat});
    const auto di = det_index.find({image, cat});
    const std::vector<std::size_t> none;
    const auto& g = gi == gt_index.end() ? none : gi->second;
    std::vector<std::size_t> d = di == det_index.end() ? none : di->second;
    if (g.empty() && d.empty()) return std::nullopt;
    std::stable_sort(d.begin(), d.end(), [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
    if (d.size() > cfg.max_dets.back()) d.resize(cfg.max_dets.back());

    auto outside = [&](double a) { return a < area.lo || a >= area.hi; };
    ImageEval e;
    std::vector<bool> g_ig;
    for (std::size_t i : g) g_ig.push_back(outside(gt_area(i)));
    std::vector<double> ious(d.size() * g.size());
    for (std::size_t r = 0; r < d.size(); ++r)
      for (std::size_t c = 0; c < g.size(); ++c) ious[r * g.size() + c] = iou(d[r], g[c]);

    for (double t : cfg.iou_thresholds) {
      const auto m = match_greedy(ious, d.size(), g.size(), g_ig, t);
      std::vector<bool> matched(d.size()), ignored(d.size());
      for (std::size_t r = 0; r < d.size(); ++r) {
        matched[r] = m.det_to_gt[r] >= 0;
        ignored[r] = matched[r] ? m.det_ignored[r] : outside(det_area(d[r]));
      }
      e.matched.push_back(std::move(matched));
      e.ignored.push_back(std::move(ignored));
    }
    for (std::size_t i : d) e.scores.push_back(dets[i].score);
    e.gt_ignored = std::move(g_ig);
    return e;
  }
};

double mean_defined(const std::vector<double>& v) {
  double s = 0;
  std::size_t n = 0;
  for (double x : v) {
    if (x > kUndefined) {
      s += x;
      ++n;
    }
  }
  return n ? s / double(n) : kUndefined;
}

}  // namespace

EvalResult evaluate(const DatasetManifest& gt, std::span<const EvalDetection> dets, Task task, const EvalConfig& cfg) {
  cfg.validate();
  if (task == Task::mask && !has_segmentations(dets)) {
    throw UsageError("mask evaluation needs a segmentation on every detection");
  }
  Evaluator ev{gt, dets, task, cfg, {}, {}, {}, {}, {}};
  for (const auto& im : gt.images) ev.image_extent[im.id] = {im.height, im.width};
  for (std::size_t i = 0; i < gt.annotations.size(); ++i) {
    const auto& a = gt.annotations[i];
    ev.gt_index[{a.image_id, a.category_id}].push_back(i);
  }
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (!std::isfinite(dets[i].score)) throw ValueError("detection score is not finite");
    if (!ev.image_extent.count(dets[i].image_id)) continue;  // not part of this split
    ev.det_index[{dets[i].image_id, dets[i].category_id}].push_back(i);
  }
  std::vector<std::int64_t> image_ids;
  for (const auto& im : gt.images) image_ids.push_back(im.id);
  std::sort(image_ids.begin(), image_ids.end());
  std::vector<xray::Category> cats = gt.categories;
  std::sort(cats.begin(), cats.end(), [](const auto& a, const auto& b) { return a.id < b.id; });

  const std::size_t T = cfg.iou_thresholds.size(), R = cfg.recall_points.size(), K = cats.size();
  const std::size_t A = cfg.area_ranges.size(), M = cfg.max_dets.size();
  // precision[t][r][k][a][m] and recall[t][k][a][m], flattened.
  std::vector<double> precision(T * R * K * A * M, kUndefined), recall(T * K * A * M, kUndefined);
  auto pidx = [&](std::size_t t, std::size_t r, std::size_t k, std::size_t a, std::size_t m) {
    return (((t * R + r) * K + k) * A + a) * M + m;
  };
  auto ridx = [&](std::size_t t, std::size_t k, std::size_t a, std::size_t m) { return ((t * K + k) * A + a) * M + m; };

  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t a = 0; a < A; ++a) {
      std::vector<ImageEval> per_image;
      for (auto id : image_ids) {
        if (auto e = ev.evaluate_image(id, cats[k].id, cfg.area_ranges[a])) per_image.push_back(std::move(*e));
      }
      std::size_t npig = 0;
      for (const auto& e : per_image) npig += std::size_t(std::count(e.gt_ignored.begin(), e.gt_ignored.end(), false));
      if (npig == 0) continue;
      for (std::size_t m = 0; m < M; ++m) {
        const std::size_t cap = cfg.max_dets[m];
        std::vector<double> scores;
        std::vector<std::pair<std::size_t, std::size_t>> ref;  // (image slot, det)
        for (std::size_t s = 0; s < per_image.size(); ++s) {
          const auto& e = per_image[s];
          for (std::size_t d = 0; d < std::min(cap, e.scores.size()); ++d) {
            scores.push_back(e.scores[d]);
            ref.push_back({s, d});
          }
        }
        std::vector<std::size_t> order(scores.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return scores[x] > scores[y]; });
        std::vector<bool> tp(order.size()), fp(order.size());
        for (std::size_t t = 0; t < T; ++t) {
          for (std::size_t i = 0; i < order.size(); ++i) {
            const auto [s, d] = ref[order[i]];
            const bool matched = per_image[s].matched[t][d], ignored = per_image[s].ignored[t][d];
            tp[i] = matched && !ignored;
            fp[i] = !matched && !ignored;
          }
          const PrCurve c = curve_from_flags(tp, fp, npig);
          recall[ridx(t, k, a, m)] = c.recall.empty() ? 0.0 : c.recall.back();
          for (std::size_t r = 0; r < R; ++r) {
            const auto it = std::lower_bound(c.recall.begin(), c.recall.end(), cfg.recall_points[r]);
            precision[pidx(t, r, k, a, m)] = it == c.recall.end() ? 0.0 : c.precision[std::size_t(it - c.recall.begin())];
          }
        }
      }
    }
  }

  auto area_index = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t a = 0; a < A; ++a)
      if (cfg.area_ranges[a].name == name) return a;
    return std::nullopt;
  };
  auto det_index = [&](std::size_t n) -> std::optional<std::size_t> {
    for (std::size_t m = 0; m < M; ++m)
      if (cfg.max_dets[m] == n) return m;
    return std::nullopt;
  };
  auto thr_index = [&](double v) -> std::optional<std::size_t> {
    for (std::size_t t = 0; t < T; ++t)
      if (std::abs(cfg.iou_thresholds[t] - v) < 1e-12) return t;
    return std::nullopt;
  };
  // Mean over defined precision entries, optionally restricted to one
  // threshold and/or one category.
  auto mean_precision = [&](std::optional<std::size_t> t_only, std::optional<std::size_t> k_only, std::size_t a,
                            std::size_t m) {
    std::vector<double> v;
    for (std::size_t t = 0; t < T; ++t) {
      if (t_only && t != *t_only) continue;
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t k = 0; k < K; ++k) {
          if (k_only && k != *k_only) continue;
          v.push_back(precision[pidx(t, r, k, a, m)]);
        }
    }
    return mean_defined(v);
  };
  auto mean_recall = [&](std::optional<std::size_t> k_only, std::size_t a, std::size_t m) {
    std::vector<double> v;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t k = 0; k < K; ++k) {
        if (k_only && k != *k_only) continue;
        v.push_back(recall[ridx(t, k, a, m)]);
      }
    return mean_defined(v);
  };

  EvalResult res;
  res.task = task;
  const auto all = area_index("all"), small = area_index("small");
  const auto m100 = det_index(100), m10 = det_index(10), m1 = det_index(1);
  auto& s = res.summary;
  if (all && m100) {
    s.AP = mean_precision(std::nullopt, std::nullopt, *all, *m100);
    if (auto t = thr_index(0.5)) s.AP50 = mean_precision(t, std::nullopt, *all, *m100);
    if (auto t = thr_index(0.75)) s.AP75 = mean_precision(t, std::nullopt, *all, *m100);
    s.AR_100 = mean_recall(std::nullopt, *all, *m100);
    for (std::size_t t = 0; t < T; ++t) res.ap_per_threshold.push_back(mean_precision(t, std::nullopt, *all, *m100));
  }
  if (all && m1) s.AR_1 = mean_recall(std::nullopt, *all, *m1);
  if (all && m10) s.AR_10 = mean_recall(std::nullopt, *all, *m10);
  if (small && m100) {
    s.AP_S = mean_precision(std::nullopt, std::nullopt, *small, *m100);
    s.AR_S = mean_recall(std::nullopt, *small, *m100);
  }
  for (std::size_t k = 0; k < K; ++k) {
    CategoryResult c;
    c.category_id = cats[k].id;
    c.name = cats[k].name;
    for (const auto& a : gt.annotations) c.n_gt += a.category_id == cats[k].id ? 1 : 0;
    if (all && m100) {
      c.AP = mean_precision(std::nullopt, k, *all, *m100);
      if (auto t = thr_index(0.5)) c.AP50 = mean_precision(t, k, *all, *m100);
      if (auto t = thr_index(0.75)) c.AP75 = mean_precision(t, k, *all, *m100);
      c.AR_100 = mean_recall(k, *all, *m100);
    }
    res.per_category.push_back(std::move(c));
  }
  return res;
}

std::vector<EvalDetection> load_detections(const std::filesystem::path& file) {
  const auto j = xray::load_json(file);
  std::vector<EvalDetection> out;
  try {
    for (const auto& d : j) {
      EvalDetection e;
      e.image_id = d.at("image_id").get<std::int64_t>();
      e.category_id = d.at("category_id").get<int>();
      e.bbox = d.at("bbox").get<BBox>();
      e.score = d.at("score").get<double>();
      if (d.contains("segmentation")) {
        const auto rings = d.at("segmentation").get<std::vector<std::vector<double>>>();
        if (!rings.empty()) e.segmentation = xray::unflatten(rings.front());
      }
      out.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("invalid detections file " + file.string() + ": " + e.what());
  }
  return out;
}

void save_detections(const std::filesystem::path& file, std::span<const EvalDetection> dets) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& d : dets) {
    nlohmann::json e = {{"image_id", d.image_id}, {"category_id", d.category_id}, {"bbox", d.bbox}, {"score", d.score}};
    if (d.segmentation) e["segmentation"] = std::vector<std::vector<double>>{xray::flatten(*d.segmentation)};
    j.push_back(std::move(e));
  }
  xray::save_json(file, j);
}

}  // namespace sda::eval
