// sdanet: dataset generation, training, evaluation, ablation and gradient checks.
//
// Exit codes: 0 success, 1 usage or configuration, 2 numeric failure, 3 I/O.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "sda/errors.hpp"
#include "sda/eval/coco_eval.hpp"
#include "sda/eval/report.hpp"
#include "sda/train/ablation.hpp"
#include "sda/train/checkpoint.hpp"
#include "sda/train/config.hpp"
#include "sda/train/evaluate.hpp"
#include "sda/train/gradcheck_suite.hpp"
#include "sda/train/trainer.hpp"
#include "sda/xray/dataset.hpp"
#include "sda/xray/scene.hpp"

namespace fs = std::filesystem;
using namespace sda;

namespace {

enum Exit { kOk = 0, kUsage = 1, kNumeric = 2, kIo = 3 };

struct GenerateArgs {
  std::string mode = "all";
  std::size_t count = 0;
  std::uint64_t seed = 0;
  std::string out;
  std::string config;
};

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  bool resume = false;
};

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::vector<std::string> splits;
  std::string report;
  std::string detections;
  bool gt_replay = false;
};

struct AblateArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string runs;
};

struct GradcheckArgs {
  double tolerance = 1e-6;
  double composite_tolerance = 1e-4;
  std::size_t seeds = 10;
  std::vector<std::string> only;
  std::string fault;
};

std::size_t default_count(const xray::SplitCounts& c, const std::string& split) {
  if (split == "easy") return c.easy;
  if (split == "hard") return c.hard;
  if (split == "hidden") return c.hidden;
  return c.train;
}

int cmd_generate(const GenerateArgs& a) {
  auto cfg = xray::GeneratorConfig::defaults();
  if (!a.config.empty()) cfg = xray::load_json(a.config).get<xray::GeneratorConfig>();
  cfg.validate();
  std::vector<std::string> splits{a.mode};
  if (a.mode == "all") splits = {"train", "easy", "hard", "hidden"};
  for (const auto& split : splits) {
    const std::size_t n = a.count > 0 ? a.count : default_count(cfg.counts, split);
    const auto records = xray::generate_split(split, n, a.seed, cfg);
    const auto m = xray::export_dataset(records, cfg.classes, fs::path(a.out) / split);
    std::printf("%s: %zu images, %zu annotations -> %s\n", split.c_str(), m.images.size(), m.annotations.size(),
                (fs::path(a.out) / split).c_str());
  }
  xray::save_json(fs::path(a.out) / "generator.json", cfg);
  return kOk;
}

train::TrainConfig load_config(const std::string& path, const std::string& data_override) {
  auto cfg = train::load_train_config(path);
  if (!data_override.empty()) cfg.data.root = data_override;
  cfg.validate();
  return cfg;
}

int cmd_train(const TrainArgs& a) {
  const auto cfg = load_config(a.config, a.data);
  const auto data = train::load_train_data(cfg);
  train::TrainOptions opts;
  opts.resume = a.resume;
  opts.on_epoch = [](const train::EpochRecord& r) {
    std::printf("epoch %zu  loss %.6f  lr %g", r.epoch, r.train_loss, r.lr);
    for (const auto& e : r.evals) std::printf("  %s AP %.4f", e.split.c_str(), e.box.AP);
    std::printf("\n");
    std::fflush(stdout);
  };
  train::train(cfg, data, a.out, opts);
  return kOk;
}

int cmd_eval(const EvalArgs& a) {
  if (!a.detections.empty() && a.splits.size() != 1) {
    throw ConfigError("eval: --detections needs exactly one --split");
  }
  std::optional<detector::Detector<float>> model;
  if (!a.gt_replay) {
    if (a.checkpoint.empty()) throw ConfigError("eval: --checkpoint is required unless --gt-replay is given");
    model.emplace(train::restore_detector(train::load_checkpoint(a.checkpoint)));
  }
  nlohmann::json report = nlohmann::json::object();
  std::vector<eval::EvalDetection> all_dets;
  for (const auto& split : a.splits) {
    const auto data = train::load_split(a.data, split);
    const auto dets = a.gt_replay ? eval::replay_ground_truth(data.manifest) : train::predict_dataset(*model, data);
    const auto res = eval::evaluate(data.manifest, dets, eval::Task::box);
    report[split] = eval::report_json(split, {res});
    std::printf("%-8s AP %.4f  AP50 %.4f  AP75 %.4f  AR_100 %.4f\n", split.c_str(), res.summary.AP, res.summary.AP50,
                res.summary.AP75, res.summary.AR_100);
    if (a.splits.size() == 1) all_dets = dets;
  }
  xray::save_json(a.report, report);
  if (!a.detections.empty()) {
    eval::save_detections(a.detections, all_dets);
  }
  return kOk;
}

int cmd_ablate(const AblateArgs& a) {
  auto cfg = load_config(a.config, a.data);
  const auto data = train::load_train_data(cfg, {cfg.ablation.split});
  const fs::path runs = a.runs.empty() ? fs::path(a.out).parent_path() / "ablation_runs" : fs::path(a.runs);
  const auto records = train::run_ablation(cfg, data, runs, [](const train::AblationRecord& r) {
    std::printf("%-11s seed %llu  loss %.6f  AP %.4f\n", r.row.name.c_str(), (unsigned long long)r.seed,
                r.final_loss, r.box.AP);
    std::fflush(stdout);
  });
  eval::write_text(a.out, train::ablation_csv(records));
  return kOk;
}

int cmd_gradcheck(const GradcheckArgs& a) {
  train::SuiteOptions o;
  o.op_tolerance = a.tolerance;
  o.composite_tolerance = a.composite_tolerance;
  o.seeds = a.seeds;
  o.only = a.only;
  o.fault = a.fault;
  const auto report = train::run_gradcheck_suite(o);
  std::cout << report.text();
  return report.passed() ? kOk : kNumeric;
}

// Maps the library's error taxonomy onto exit codes.
int guarded(const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const train::DivergenceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNumeric;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kUsage;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const IoError& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return kIo;
  } catch (const GenerationError& e) {
    std::fprintf(stderr, "generation failed: %s\n", e.what());
    return kNumeric;
  } catch (const ValueError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kNumeric;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "shape error: %s\n", e.what());
    return kNumeric;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kUsage;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sdanet: synthetic X-ray detection with selective dense attention"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Write synthetic splits as images + manifest");
  g->add_option("--mode", gen.mode, "Split to generate")
      ->check(CLI::IsMember({"easy", "hard", "hidden", "train", "all"}))
      ->capture_default_str();
  g->add_option("--count", gen.count, "Images per split (0: counts from the generator config)");
  g->add_option("--seed", gen.seed, "Base seed")->capture_default_str();
  g->add_option("--out", gen.out, "Output root; each split goes to <out>/<split>")->required();
  g->add_option("--config", gen.config, "Generator config JSON");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Seeded SGD training with per-epoch checkpoints");
  t->add_option("--config", tr.config, "TrainConfig JSON")->required()->check(CLI::ExistingFile);
  t->add_option("--data", tr.data, "Dataset root (overrides data.root)");
  t->add_option("--out", tr.out, "Run directory")->required();
  t->add_flag("--resume", tr.resume, "Continue from the newest checkpoint in --out");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "COCO-style box evaluation of a checkpoint");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint (.sdck)");
  e->add_option("--data", ev.data, "Dataset root")->required();
  e->add_option("--split", ev.splits, "easy, hard, hidden or overall; repeatable")
      ->required()
      ->check(CLI::IsMember({"easy", "hard", "hidden", "overall"}));
  e->add_option("--report", ev.report, "Report JSON path")->required();
  e->add_option("--detections", ev.detections, "Also write detections JSON");
  e->add_flag("--gt-replay", ev.gt_replay, "Score ground truth as detections instead of a model");

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "Train the neck toggle rows and write the ablation CSV");
  a->add_option("--config", ab.config, "TrainConfig JSON")->required()->check(CLI::ExistingFile);
  a->add_option("--data", ab.data, "Dataset root (overrides data.root)");
  a->add_option("--out", ab.out, "CSV path")->required();
  a->add_option("--runs", ab.runs, "Directory for per-row runs (default: <out dir>/ablation_runs)");

  GradcheckArgs gc;
  auto* c = app.add_subcommand("gradcheck", "Central finite-difference suite over ops and composites");
  c->add_option("--tolerance", gc.tolerance, "Op tolerance on relative error")->capture_default_str();
  c->add_option("--composite-tolerance", gc.composite_tolerance, "Composite tolerance")->capture_default_str();
  c->add_option("--seeds", gc.seeds, "Seeds per case")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--only", gc.only, "Restrict to these cases")->delimiter(',');
  c->add_option("--fault", gc.fault, "Corrupt the backward rule of this case (self-test)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  if (*g) return guarded([&] { return cmd_generate(gen); });
  if (*t) return guarded([&] { return cmd_train(tr); });
  if (*e) return guarded([&] { return cmd_eval(ev); });
  if (*a) return guarded([&] { return cmd_ablate(ab); });
  return guarded([&] { return cmd_gradcheck(gc); });
}
