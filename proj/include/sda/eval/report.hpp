#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sda/eval/coco_eval.hpp"

namespace sda::eval {

/// Fixed six-decimal rendering; undefined values print as -1.
std::string format_metric(double v);

/// The eight summary keys, in column order.
const std::vector<std::string>& summary_keys();
std::vector<double> summary_values(const EvalSummary& s);

nlohmann::json summary_json(const EvalSummary& s);

/// {"split", "box": {...}, "mask": {...} | null, "per_category": {task: [...]},
///  "ap_per_threshold": {task: [...]}}
nlohmann::json report_json(const std::string& split, const std::vector<EvalResult>& results);

/// "split,task,AP,AP50,AP75,AP_S,AR_1,AR_10,AR_100,AR_S" plus one row per result.
std::string metrics_csv(const std::string& split, const std::vector<EvalResult>& results);

void write_text(const std::filesystem::path& file, const std::string& text);

}  // namespace sda::eval
