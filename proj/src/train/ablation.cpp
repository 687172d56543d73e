#include "sda/train/ablation.hpp"

#include <algorithm>
#include <cstdio>

#include "sda/eval/report.hpp"

namespace sda::train {

std::vector<neck::AblationRow> selected_rows(const TrainConfig& cfg) {
  std::vector<neck::AblationRow> out;
  for (const auto& r : neck::ablation_rows()) {
    const auto& want = cfg.ablation.rows;
    if (want.empty() || std::find(want.begin(), want.end(), r.name) != want.end()) out.push_back(r);
  }
  return out;
}

TrainConfig row_config(const TrainConfig& base, const neck::AblationRow& row, std::uint64_t seed) {
  TrainConfig c = base;
  c.neck.use_sca = row.use_sca;
  c.neck.use_ssa = row.use_ssa;
  c.neck.use_dr = row.use_dr;
  c.neck.plain_pyramid = false;
  c.seed = seed;
  if (std::find(c.data.eval_splits.begin(), c.data.eval_splits.end(), c.ablation.split) == c.data.eval_splits.end()) {
    c.data.eval_splits.push_back(c.ablation.split);
  }
  return c;
}

std::vector<AblationRecord> run_ablation(const TrainConfig& base, const TrainData& data,
                                         const std::filesystem::path& run_root,
                                         const std::function<void(const AblationRecord&)>& on_row) {
  base.validate();
  const auto seeds = base.ablation.seeds.empty() ? std::vector<std::uint64_t>{base.seed} : base.ablation.seeds;
  std::vector<AblationRecord> out;
  for (const auto& row : selected_rows(base)) {
    for (auto seed : seeds) {
      const TrainConfig cfg = row_config(base, row, seed);
      data.split(cfg.ablation.split);
      auto res = train(cfg, data, run_root / row.name / ("seed" + std::to_string(seed)));
      AblationRecord rec{row, seed, res.history.back().train_loss, {}};
      for (const auto& e : res.history.back().evals) {
        if (e.split == cfg.ablation.split) rec.box = e.box;
      }
      if (on_row) on_row(rec);
      out.push_back(rec);
    }
  }
  return out;
}

std::string ablation_csv(const std::vector<AblationRecord>& records) {
  std::string out = "row,use_sca,use_ssa,use_dr,seed,final_loss";
  for (const auto& k : eval::summary_keys()) out += "," + k;
  out += "\n";
  for (const auto& r : records) {
    char loss[32];
    std::snprintf(loss, sizeof loss, "%.6f", r.final_loss);
    out += r.row.name + "," + (r.row.use_sca ? "1" : "0") + "," + (r.row.use_ssa ? "1" : "0") + "," +
           (r.row.use_dr ? "1" : "0") + "," + std::to_string(r.seed) + "," + loss;
    for (double v : eval::summary_values(r.box)) out += "," + eval::format_metric(v);
    out += "\n";
  }
  return out;
}

}  // namespace sda::train
