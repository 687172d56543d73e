#include "sda/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <regex>
#include <sstream>

#include "sda/eval/report.hpp"
#include "sda/log.hpp"
#include "sda/train/checkpoint.hpp"
#include "sda/train/evaluate.hpp"
#include "sda/train/sgd.hpp"

namespace sda::train {

namespace fs = std::filesystem;

namespace {

std::string checkpoint_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%03zu.sdck", epoch);
  return buf;
}

std::vector<std::pair<std::size_t, fs::path>> list_checkpoints(const fs::path& dir) {
  std::vector<std::pair<std::size_t, fs::path>> out;
  if (!fs::is_directory(dir)) return out;
  static const std::regex re(R"(epoch_(\d+)\.sdck)");
  for (const auto& e : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (std::regex_match(name, m, re)) out.emplace_back(std::stoul(m[1].str()), e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

nlohmann::json without_epochs(const TrainConfig& c) {
  nlohmann::json j = c;
  j["schedule"].erase("epochs");
  return j;
}

std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void keep_last_rows(const fs::path& csv, std::size_t max_epoch) {
  std::ifstream in(csv);
  std::string line, kept;
  bool header = true;
  while (std::getline(in, line)) {
    if (header || std::stoul(line.substr(0, line.find(','))) <= max_epoch) kept += line + "\n";
    header = false;
  }
  in.close();
  eval::write_text(csv, kept);
}

}  // namespace

const xray::LoadedDataset& TrainData::split(const std::string& name) const {
  for (const auto& s : eval) {
    if (s.name == name) return s.data;
  }
  throw UsageError("split \"" + name + "\" was not loaded");
}

TrainData load_train_data(const TrainConfig& cfg, const std::vector<std::string>& extra) {
  const fs::path root = cfg.data.root;
  TrainData d;
  d.train = take_first(xray::import_dataset(root / cfg.data.train_split), cfg.data.max_train_images);
  auto names = cfg.data.eval_splits;
  for (const auto& e : extra) {
    if (std::find(names.begin(), names.end(), e) == names.end()) names.push_back(e);
  }
  for (const auto& n : names) d.eval.push_back({n, take_first(load_split(root, n), cfg.data.max_eval_images)});
  return d;
}

const std::string& metrics_header() {
  static const std::string h = [] {
    std::string s = "epoch,train_loss,lr,split";
    for (const auto& k : eval::summary_keys()) s += "," + k;
    return s;
  }();
  return h;
}

std::string metrics_rows(const EpochRecord& r) {
  const std::string prefix = std::to_string(r.epoch) + "," + fmt("%.6f", r.train_loss) + "," + fmt("%.6g", r.lr);
  if (r.evals.empty()) return prefix + ",-" + std::string(eval::summary_keys().size(), ',') + "\n";
  std::string out;
  for (const auto& e : r.evals) {
    out += prefix + "," + e.split;
    for (double v : eval::summary_values(e.box)) out += "," + eval::format_metric(v);
    out += "\n";
  }
  return out;
}

void flip_horizontal(Tensor<float>& images, std::size_t b, std::vector<detector::GtBox>& boxes) {
  const std::size_t C = images.dim(1), H = images.dim(2), W = images.dim(3);
  auto data = images.data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y) {
      auto row = data.begin() + std::ptrdiff_t(((b * C + c) * H + y) * W);
      std::reverse(row, row + std::ptrdiff_t(W));
    }
  for (auto& g : boxes) g.bbox[0] = double(W) - g.bbox[0] - g.bbox[2];
}

TrainResult train(const TrainConfig& cfg, const TrainData& data, const fs::path& run_dir, const TrainOptions& opts) {
  cfg.validate();
  if (data.train.records.empty()) throw ConfigError("train: training split is empty");
  for (const auto& r : data.train.records) {
    if (r.image.dim(1) != cfg.image_size || r.image.dim(2) != cfg.image_size) {
      throw ConfigError("train: image " + shape_str(r.image.shape()) + " does not match image_size " +
                        std::to_string(cfg.image_size));
    }
  }
  fs::create_directories(run_dir / "checkpoints");

  TrainResult result{{}, detector::Detector<float>::init(cfg.detector_config(), cfg.seed)};
  auto& model = result.model;
  NamedParams<float> params;
  model.visit_params([&](const std::string& n, Parameter<float>& p) { params.emplace_back(n, &p); });
  Sgd<float> opt(cfg.optimizer.momentum, cfg.optimizer.weight_decay);
  std::mt19937_64 rng(cfg.seed ^ 0x5DA7'7A1Bull);

  const fs::path csv = run_dir / "metrics.csv";
  std::size_t start_epoch = 1;
  const auto existing = list_checkpoints(run_dir / "checkpoints");
  if (opts.resume && !existing.empty()) {
    const auto ck = load_checkpoint(existing.back().second);
    if (without_epochs(checkpoint_config(ck)) != without_epochs(cfg)) {
      throw ConfigError("train: resume config differs from " + existing.back().second.string());
    }
    load_parameters(model, ck);
    restore_optimizer(opt, model, ck);
    std::istringstream is(ck.meta.at("rng_state").get<std::string>());
    is >> rng;
    start_epoch = ck.meta.at("epoch").get<std::size_t>() + 1;
    keep_last_rows(csv, start_epoch - 1);
  } else {
    eval::write_text(csv, metrics_header() + "\n");
  }
  xray::save_json(run_dir / "config.json", cfg);

  const std::size_t n = data.train.records.size(), bs = cfg.optimizer.batch_size;
  const std::size_t steps_per_epoch = (n + bs - 1) / bs;
  std::size_t step = (start_epoch - 1) * steps_per_epoch;
  std::vector<std::size_t> order(n);

  for (std::size_t epoch = start_epoch; epoch <= cfg.schedule.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    double lr = cfg.lr_at(epoch, step);
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      const std::uint64_t batch_seed = rng();
      std::mt19937_64 brng(batch_seed);
      std::bernoulli_distribution coin(0.5);
      std::vector<const xray::SceneRecord*> batch;
      std::vector<std::int64_t> ids;
      for (std::size_t i = s * bs; i < std::min(n, (s + 1) * bs); ++i) {
        batch.push_back(&data.train.records[order[i]]);
        ids.push_back(data.train.manifest.images[order[i]].id);
      }
      Tensor<float> images = detector::stack_images<float>(batch);
      std::vector<std::vector<detector::GtBox>> boxes;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        boxes.push_back(detector::gt_boxes(*batch[b]));
        if (cfg.augment_hflip && coin(brng)) flip_horizontal(images, b, boxes.back());
      }

      Tape<float> tape;
      detector::LossParts parts;
      auto loss = model.loss(tape, tape.constant(std::move(images)), boxes, &parts);
      double value = double(loss.value().item());
      if (opts.loss_filter) value = opts.loss_filter(epoch, s, value);
      if (!std::isfinite(value)) {
        nlohmann::json dump{{"epoch", epoch},         {"step", s},
                            {"batch_seed", batch_seed}, {"image_ids", ids},
                            {"loss", std::isnan(value) ? "nan" : "inf"},
                            {"parts", {{"heatmap", parts.heatmap}, {"size", parts.size}, {"offset", parts.offset}}}};
        xray::save_json(run_dir / "divergence.json", dump);
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(s) +
                                  " (batch seed " + std::to_string(batch_seed) + ")",
                              batch_seed);
      }
      loss_sum += value;
      tape.backward(loss);
      lr = cfg.lr_at(epoch, step);
      if (cfg.optimizer.grad_clip_norm > 0) clip_grad_norm(params, cfg.optimizer.grad_clip_norm);
      opt.step(params, lr);
    }

    EpochRecord rec{epoch, loss_sum / double(steps_per_epoch), lr, {}};
    const bool eval_now = epoch == cfg.schedule.epochs ||
                          (cfg.schedule.eval_every > 0 && epoch % cfg.schedule.eval_every == 0);
    if (eval_now) {
      for (const auto& sp : data.eval) rec.evals.push_back({sp.name, evaluate_model(model, sp.data).summary});
    }
    {
      std::ofstream os(csv, std::ios::app);
      os << metrics_rows(rec);
      if (!os) throw IoError("cannot append to " + csv.string());
    }
    save_checkpoint(run_dir / "checkpoints" / checkpoint_name(epoch),
                    make_checkpoint(model, cfg, epoch, &opt, rng_state(rng)));
    if (cfg.schedule.checkpoint_keep > 0) {
      auto all = list_checkpoints(run_dir / "checkpoints");
      while (all.size() > cfg.schedule.checkpoint_keep) {
        fs::remove(all.front().second);
        all.erase(all.begin());
      }
    }
    if (opts.on_epoch) opts.on_epoch(rec);
    result.history.push_back(std::move(rec));
  }
  save_checkpoint(run_dir / "final.sdck", make_checkpoint(model, cfg, cfg.schedule.epochs, &opt, rng_state(rng)));
  return result;
}

}  // namespace sda::train
