#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "sda/eval/coco_eval.hpp"
#include "sda/neck/neck.hpp"
#include "sda/train/trainer.hpp"

namespace sda::train {

struct AblationRecord {
  neck::AblationRow row;
  std::uint64_t seed = 0;
  double final_loss = 0.0;
  eval::EvalSummary box;  // on the ablation split after the final epoch
};

/// Rows selected by the config, in table order.
std::vector<neck::AblationRow> selected_rows(const TrainConfig& cfg);

/// Trains every selected row for every seed into run_root/<row>/seed<k>.
/// `data` must hold the ablation split.
std::vector<AblationRecord> run_ablation(const TrainConfig& base, const TrainData& data,
                                         const std::filesystem::path& run_root,
                                         const std::function<void(const AblationRecord&)>& on_row = {});

/// "row,use_sca,use_ssa,use_dr,seed,final_loss,AP,...,AR_S", one line per record.
std::string ablation_csv(const std::vector<AblationRecord>& records);

/// Config of one ablation cell: toggles from the row, seed replaced.
TrainConfig row_config(const TrainConfig& base, const neck::AblationRow& row, std::uint64_t seed);

}  // namespace sda::train
