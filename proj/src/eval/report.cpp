#include "sda/eval/report.hpp"

#include <cstdio>
#include <fstream>

#include "sda/errors.hpp"

namespace sda::eval {

std::string format_metric(double v) {
  if (v == kUndefined) return "-1";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

const std::vector<std::string>& summary_keys() {
  static const std::vector<std::string> keys{"AP", "AP50", "AP75", "AP_S", "AR_1", "AR_10", "AR_100", "AR_S"};
  return keys;
}

std::vector<double> summary_values(const EvalSummary& s) {
  return {s.AP, s.AP50, s.AP75, s.AP_S, s.AR_1, s.AR_10, s.AR_100, s.AR_S};
}

nlohmann::json summary_json(const EvalSummary& s) {
  nlohmann::json j = nlohmann::json::object();
  const auto values = summary_values(s);
  for (std::size_t i = 0; i < values.size(); ++i) j[summary_keys()[i]] = values[i];
  return j;
}

nlohmann::json report_json(const std::string& split, const std::vector<EvalResult>& results) {
  nlohmann::json j = {{"split", split}, {"box", nullptr}, {"mask", nullptr}};
  nlohmann::json per_cat = nlohmann::json::object(), per_thr = nlohmann::json::object();
  for (const auto& r : results) {
    const std::string task = to_string(r.task);
    j[task] = summary_json(r.summary);
    nlohmann::json cats = nlohmann::json::array();
    for (const auto& c : r.per_category) {
      cats.push_back({{"category_id", c.category_id},
                      {"name", c.name},
                      {"n_gt", c.n_gt},
                      {"AP", c.AP},
                      {"AP50", c.AP50},
                      {"AP75", c.AP75},
                      {"AR_100", c.AR_100}});
    }
    per_cat[task] = cats;
    per_thr[task] = r.ap_per_threshold;
  }
  j["per_category"] = per_cat;
  j["ap_per_threshold"] = per_thr;
  return j;
}

std::string metrics_csv(const std::string& split, const std::vector<EvalResult>& results) {
  std::string out = "split,task";
  for (const auto& k : summary_keys()) out += "," + k;
  out += "\n";
  for (const auto& r : results) {
    out += split + "," + to_string(r.task);
    for (double v : summary_values(r.summary)) out += "," + format_metric(v);
    out += "\n";
  }
  return out;
}

void write_text(const std::filesystem::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  out << text;
  if (!out) throw IoError("write failed: " + file.string());
}

}  // namespace sda::eval
