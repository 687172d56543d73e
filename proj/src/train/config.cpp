#include "sda/train/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "sda/errors.hpp"
#include "sda/xray/dataset.hpp"

namespace sda::train {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ConfigError(where + ": unknown key \"" + k + "\"");
  }
}

template <typename V>
void read(const json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace

void TrainConfig::validate() const {
  const auto& o = optimizer;
  if (o.name != "sgd") throw ConfigError("optimizer.name: only \"sgd\" is supported, got \"" + o.name + "\"");
  if (!(o.lr > 0) || !std::isfinite(o.lr)) throw ConfigError("optimizer.lr must be > 0");
  if (!(o.momentum >= 0 && o.momentum < 1)) throw ConfigError("optimizer.momentum must lie in [0, 1)");
  if (!(o.weight_decay >= 0)) throw ConfigError("optimizer.weight_decay must be >= 0");
  if (o.batch_size == 0) throw ConfigError("optimizer.batch_size must be >= 1");
  if (!(o.grad_clip_norm >= 0)) throw ConfigError("optimizer.grad_clip_norm must be >= 0");
  if (schedule.epochs == 0) throw ConfigError("schedule.epochs must be >= 1");
  if (!(schedule.lr_decay_factor > 0)) throw ConfigError("schedule.lr_decay_factor must be > 0");
  if (image_size == 0 || image_size % 16 != 0) throw ConfigError("image_size must be a positive multiple of 16");
  if (num_classes == 0) throw ConfigError("num_classes must be >= 1");
  if (!(score_thresh >= 0 && score_thresh <= 1)) throw ConfigError("score_thresh must lie in [0, 1]");
  for (const auto& s : data.eval_splits) {
    if (s != "easy" && s != "hard" && s != "hidden" && s != "overall") {
      throw ConfigError("data.eval_splits: unknown split \"" + s + "\"");
    }
  }
  for (const auto& r : ablation.rows) {
    const auto& rows = neck::ablation_rows();
    if (std::none_of(rows.begin(), rows.end(), [&](const auto& a) { return a.name == r; })) {
      throw ConfigError("ablation.rows: unknown row \"" + r + "\"");
    }
  }
}

double TrainConfig::lr_at(std::size_t epoch, std::size_t step) const {
  double lr = optimizer.lr;
  for (auto e : schedule.lr_decay_steps) {
    if (epoch > e) lr *= schedule.lr_decay_factor;
  }
  if (schedule.warmup_steps > 0 && step < schedule.warmup_steps) {
    lr *= double(step + 1) / double(schedule.warmup_steps);
  }
  return lr;
}

detector::DetectorConfig TrainConfig::detector_config() const {
  detector::DetectorConfig d;
  d.num_classes = num_classes;
  d.image_size = image_size;
  d.neck.use_sca = neck.use_sca;
  d.neck.use_ssa = neck.use_ssa;
  d.neck.use_dr = neck.use_dr;
  d.neck.share_weights = neck.share_weights;
  d.plain_pyramid = neck.plain_pyramid;
  d.decode.score_thresh = score_thresh;
  d.normalize();
  return d;
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"optimizer",
            {{"name", c.optimizer.name},
             {"lr", c.optimizer.lr},
             {"momentum", c.optimizer.momentum},
             {"weight_decay", c.optimizer.weight_decay},
             {"batch_size", c.optimizer.batch_size},
             {"grad_clip_norm", c.optimizer.grad_clip_norm}}},
           {"schedule",
            {{"epochs", c.schedule.epochs},
             {"lr_decay_steps", c.schedule.lr_decay_steps},
             {"lr_decay_factor", c.schedule.lr_decay_factor},
             {"warmup_steps", c.schedule.warmup_steps},
             {"eval_every", c.schedule.eval_every},
             {"checkpoint_keep", c.schedule.checkpoint_keep}}},
           {"neck",
            {{"use_sca", c.neck.use_sca},
             {"use_ssa", c.neck.use_ssa},
             {"use_dr", c.neck.use_dr},
             {"share_weights", c.neck.share_weights},
             {"plain_pyramid", c.neck.plain_pyramid}}},
           {"data",
            {{"root", c.data.root},
             {"train_split", c.data.train_split},
             {"eval_splits", c.data.eval_splits},
             {"max_train_images", c.data.max_train_images},
             {"max_eval_images", c.data.max_eval_images}}},
           {"ablation", {{"rows", c.ablation.rows}, {"seeds", c.ablation.seeds}, {"split", c.ablation.split}}},
           {"seed", c.seed},
           {"image_size", c.image_size},
           {"num_classes", c.num_classes},
           {"augment_hflip", c.augment_hflip},
           {"score_thresh", c.score_thresh}};
}

void from_json(const json& j, TrainConfig& c) {
  check_keys(j,
             {"optimizer", "schedule", "neck", "data", "ablation", "seed", "image_size", "num_classes",
              "augment_hflip", "score_thresh"},
             "config");
  if (j.contains("optimizer")) {
    const auto& o = j["optimizer"];
    check_keys(o, {"name", "lr", "momentum", "weight_decay", "batch_size", "grad_clip_norm"}, "optimizer");
    read(o, "name", c.optimizer.name, "optimizer");
    read(o, "lr", c.optimizer.lr, "optimizer");
    read(o, "momentum", c.optimizer.momentum, "optimizer");
    read(o, "weight_decay", c.optimizer.weight_decay, "optimizer");
    read(o, "batch_size", c.optimizer.batch_size, "optimizer");
    read(o, "grad_clip_norm", c.optimizer.grad_clip_norm, "optimizer");
  }
  if (j.contains("schedule")) {
    const auto& s = j["schedule"];
    check_keys(s, {"epochs", "lr_decay_steps", "lr_decay_factor", "warmup_steps", "eval_every", "checkpoint_keep"},
               "schedule");
    read(s, "epochs", c.schedule.epochs, "schedule");
    read(s, "lr_decay_steps", c.schedule.lr_decay_steps, "schedule");
    read(s, "lr_decay_factor", c.schedule.lr_decay_factor, "schedule");
    read(s, "warmup_steps", c.schedule.warmup_steps, "schedule");
    read(s, "eval_every", c.schedule.eval_every, "schedule");
    read(s, "checkpoint_keep", c.schedule.checkpoint_keep, "schedule");
  }
  if (j.contains("neck")) {
    const auto& n = j["neck"];
    check_keys(n, {"use_sca", "use_ssa", "use_dr", "share_weights", "plain_pyramid"}, "neck");
    read(n, "use_sca", c.neck.use_sca, "neck");
    read(n, "use_ssa", c.neck.use_ssa, "neck");
    read(n, "use_dr", c.neck.use_dr, "neck");
    read(n, "share_weights", c.neck.share_weights, "neck");
    read(n, "plain_pyramid", c.neck.plain_pyramid, "neck");
  }
  if (j.contains("data")) {
    const auto& d = j["data"];
    check_keys(d, {"root", "train_split", "eval_splits", "max_train_images", "max_eval_images"}, "data");
    read(d, "root", c.data.root, "data");
    read(d, "train_split", c.data.train_split, "data");
    read(d, "eval_splits", c.data.eval_splits, "data");
    read(d, "max_train_images", c.data.max_train_images, "data");
    read(d, "max_eval_images", c.data.max_eval_images, "data");
  }
  if (j.contains("ablation")) {
    const auto& a = j["ablation"];
    check_keys(a, {"rows", "seeds", "split"}, "ablation");
    read(a, "rows", c.ablation.rows, "ablation");
    read(a, "seeds", c.ablation.seeds, "ablation");
    read(a, "split", c.ablation.split, "ablation");
  }
  read(j, "seed", c.seed, "config");
  read(j, "image_size", c.image_size, "config");
  read(j, "num_classes", c.num_classes, "config");
  read(j, "augment_hflip", c.augment_hflip, "config");
  read(j, "score_thresh", c.score_thresh, "config");
}

TrainConfig load_train_config(const std::string& path) {
  TrainConfig c = xray::load_json(path).get<TrainConfig>();
  c.validate();
  return c;
}

}  // namespace sda::train
