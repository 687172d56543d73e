#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sda/eval/iou.hpp"
#include "sda/xray/dataset.hpp"

namespace sda::eval {

/// Marks a metric with no defined value (no ground truth in scope).
inline constexpr double kUndefined = -1.0;

struct AreaRange {
  std::string name;
  double lo, hi;  // half-open [lo, hi)
};

struct EvalConfig {
  std::vector<double> iou_thresholds;  // 0.50:0.05:0.95
  std::vector<std::size_t> max_dets;   // {1, 10, 100}
  std::vector<AreaRange> area_ranges;  // all, small
  std::vector<double> recall_points;   // 0.00:0.01:1.00

  static EvalConfig standard();
  void validate() const;
};

enum class Task { box, mask };
std::string to_string(Task t);

struct EvalDetection {
  std::int64_t image_id = 0;
  int category_id = 0;
  BBox bbox{};
  double score = 0.0;
  std::optional<xray::Polygon> segmentation;
};

struct EvalSummary {
  double AP = kUndefined, AP50 = kUndefined, AP75 = kUndefined, AP_S = kUndefined;
  double AR_1 = kUndefined, AR_10 = kUndefined, AR_100 = kUndefined, AR_S = kUndefined;
};

struct CategoryResult {
  int category_id = 0;
  std::string name;
  std::size_t n_gt = 0;
  double AP = kUndefined, AP50 = kUndefined, AP75 = kUndefined, AR_100 = kUndefined;
};

struct EvalResult {
  Task task = Task::box;
  EvalSummary summary;
  std::vector<double> ap_per_threshold;  // area all, 100 dets, category mean
  std::vector<CategoryResult> per_category;
};

/// Greedy assignment for one image and category at one IoU threshold.
/// `iou` is row-major [n_dets x n_gts]; dets are in descending score order.
/// A det takes the unmatched GT with the highest IoU >= thresh, preferring
/// non-ignored GTs; on equal IoU the later GT wins. A det matched to an
/// ignored GT is itself ignored.
struct MatchResult {
  std::vector<long> det_to_gt;  // -1 when unmatched
  std::vector<long> gt_to_det;
  std::vector<bool> det_ignored;
};
MatchResult match_greedy(std::span<const double> iou, std::size_t n_dets, std::size_t n_gts,
                         const std::vector<bool>& gt_ignore, double thresh);

struct PrCurve {
  std::vector<double> precision;  // after the right-to-left max envelope
  std::vector<double> recall;
};

/// `tp` holds one flag per scored detection in descending score order.
PrCurve pr_curve(const std::vector<bool>& tp, std::size_t n_gt);

/// In-place running maximum from the right.
void precision_envelope(std::vector<double>& precision);

/// Mean interpolated precision at `recall_points`; precision is 0 past the
/// curve's final recall.
double average_precision(const PrCurve& curve, std::span<const double> recall_points);

/// Evaluates `dets` against the manifest's annotations. Mask evaluation
/// rasterises GT and detection polygons at each image's extent; every
/// detection must then carry a segmentation.
EvalResult evaluate(const xray::DatasetManifest& gt, std::span<const EvalDetection> dets, Task task,
                    const EvalConfig& cfg = EvalConfig::standard());

/// True when every detection carries a segmentation polygon.
bool has_segmentations(std::span<const EvalDetection> dets);

/// Each GT annotation as a detection with score 1.
std::vector<EvalDetection> replay_ground_truth(const xray::DatasetManifest& gt);

std::vector<EvalDetection> load_detections(const std::filesystem::path& file);
void save_detections(const std::filesystem::path& file, std::span<const EvalDetection> dets);

}  // namespace sda::eval
