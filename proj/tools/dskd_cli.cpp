// SPDX-License-Identifier: Apache-2.0
//
// dskd: train / eval / visualize / synth-data.
//
// Exit status: 0 success, 1 usage or configuration error, 2 data or
// checkpoint-loading error, 3 runtime failure (divergence, I/O, ...).
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "dskd/checkpoint.hpp"
#include "dskd/data.hpp"
#include "dskd/error.hpp"
#include "dskd/heatmap.hpp"
#include "dskd/trainer.hpp"

namespace fs = std::filesystem;
using namespace dskd;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitRuntime = 3;

int exit_code(const Error& e) {
  switch (e.kind()) {
    case Error::Kind::Config:
    case Error::Kind::Input: return kExitUsage;
    case Error::Kind::Data:
    case Error::Kind::Load: return kExitData;
    default: return kExitRuntime;
  }
}

std::string kebab(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

/// Flat `key = value` file; blank lines and '#' comments are ignored.
void apply_config_file(TrainConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t\r"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
      return s;
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    }
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

struct TrainArgs {
  std::string preset = "paper";
  std::string config_file;
  std::map<std::string, std::string> overrides;
  std::string data_root;
  std::string category;
  std::string checkpoint;
  std::string log_file;
};

TrainConfig resolve_config(const TrainArgs& a) {
  TrainConfig cfg = a.preset == "toy" ? TrainConfig::toy() : TrainConfig{};
  if (!a.config_file.empty()) apply_config_file(cfg, a.config_file);
  for (const auto& key : TrainConfig::keys()) {
    const auto it = a.overrides.find(key);
    if (it != a.overrides.end() && !it->second.empty()) cfg.set(key, it->second);
  }
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
  if (!out) throw IoError("cannot write '" + p.string() + "'");
}

int run_train(const TrainArgs& a) {
  const TrainConfig cfg = resolve_config(a);
  const DatasetSplit data = load_loco_layout(a.data_root, a.category, cfg.image_size);
  std::ofstream log_out;
  if (!a.log_file.empty()) {
    log_out.open(a.log_file);
    if (!log_out) throw IoError("cannot write log '" + a.log_file + "'");
  }
  std::ostream& log = a.log_file.empty() ? std::cout : log_out;
  const Checkpoint ckpt = train(data, cfg, [&](const EpochRecord& r) {
    log << r.to_json_line() << std::endl;
  });
  for (const auto& w : ckpt.normalizer.warnings) std::cerr << "warning: " << w << "\n";
  save_checkpoint(ckpt, a.checkpoint);
  std::cerr << "checkpoint written to " << a.checkpoint << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string data_root;
  std::string category;
  std::string checkpoint;
  std::string out;
  std::string mode = "combined";
  double fpr_limit = 0.05;
  int num_thresholds = 512;
  int limit = 0;
};

Evaluation run_evaluation(const EvalArgs& a, Checkpoint& ckpt) {
  ckpt = load_checkpoint(a.checkpoint);
  DatasetSplit data = load_loco_layout(a.data_root, a.category, ckpt.config.image_size);
  if (a.limit > 0 && static_cast<std::size_t>(a.limit) < data.test.size()) {
    data.test.resize(static_cast<std::size_t>(a.limit));
  }
  EvalOptions opt;
  opt.mode = parse_fusion_mode(a.mode);
  opt.fpr_limit = a.fpr_limit;
  opt.num_thresholds = a.num_thresholds;
  return evaluate(ckpt, data, opt);
}

int run_eval(const EvalArgs& a) {
  Checkpoint ckpt;
  const Evaluation ev = run_evaluation(a, ckpt);
  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) throw IoError("cannot create '" + a.out + "': " + ec.message());
  write_text(fs::path(a.out) / "metrics.json", ev.report.to_json() + "\n");
  write_text(fs::path(a.out) / "metrics.csv", ev.report.to_csv());
  std::cout << ev.report.to_json() << "\n";
  for (const auto& w : ev.report.warnings) std::cerr << "warning: " << w << "\n";
  return kExitOk;
}

int run_visualize(const EvalArgs& a) {
  Checkpoint ckpt;
  const Evaluation ev = run_evaluation(a, ckpt);
  const auto files = export_heatmaps(ev.results, a.out);
  std::cerr << files.size() << " files written to " << a.out << "\n";
  return kExitOk;
}

int run_synth(const ToySceneConfig& c, const std::string& out) {
  const DatasetSplit split = synth_toy_dataset(c);
  write_loco_layout(split, out);
  std::cerr << "wrote " << split.train.size() << " train, " << split.validation.size()
            << " validation, " << split.test.size() << " test images to "
            << (fs::path(out) / c.category).string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-student distillation anomaly detector"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train the students and write a checkpoint");
  train_cmd->add_option("--preset", ta.preset, "Base configuration before overrides")
      ->check(CLI::IsMember({"paper", "toy"}));
  train_cmd->add_option("--config", ta.config_file, "key = value file with config fields");
  for (const auto& key : TrainConfig::keys()) {
    train_cmd->add_option("--" + kebab(key), ta.overrides[key], "config field " + key);
  }
  train_cmd->add_option("--data-root", ta.data_root, "Dataset root")->required();
  train_cmd->add_option("--category", ta.category, "Category directory")->required();
  train_cmd->add_option("--checkpoint", ta.checkpoint, "Output checkpoint path")->required();
  train_cmd->add_option("--log", ta.log_file, "Epoch log (JSON lines); stdout by default");

  EvalArgs ea;
  const auto add_eval_options = [](CLI::App* cmd, EvalArgs& a) {
    cmd->add_option("--data-root", a.data_root, "Dataset root")->required();
    cmd->add_option("--category", a.category, "Category directory")->required();
    cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint path")->required();
    cmd->add_option("--out", a.out, "Output directory")->required();
    cmd->add_option("--mode", a.mode, "Fusion mode")
        ->check(CLI::IsMember({"local", "global", "combined"}));
    cmd->add_option("--fpr-limit", a.fpr_limit, "FPR integration limit for AU-sPRO");
    cmd->add_option("--num-thresholds", a.num_thresholds, "Thresholds of the sPRO sweep");
  };
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint; writes metrics.json/csv");
  add_eval_options(eval_cmd, ea);
  EvalArgs va;
  auto* vis_cmd = app.add_subcommand("visualize", "Export colour-mapped anomaly maps");
  add_eval_options(vis_cmd, va);
  vis_cmd->add_option("--limit", va.limit, "Only the first N test images (0 = all)");

  ToySceneConfig tc;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth-data", "Generate the synthetic grid dataset");
  synth_cmd->add_option("--out", synth_out, "Dataset root to write")->required();
  synth_cmd->add_option("--category", tc.category, "Category name");
  synth_cmd->add_option("--seed", tc.seed, "Generator seed");
  synth_cmd->add_option("--grid", tc.grid, "Cells per side");
  synth_cmd->add_option("--image-size", tc.image_size, "Image side in pixels");
  synth_cmd->add_option("--train-count", tc.train_count, "Training images");
  synth_cmd->add_option("--validation-count", tc.validation_count, "Validation images");
  synth_cmd->add_option("--test-count", tc.test_count, "Test images");
  synth_cmd->add_option("--structural-rate", tc.structural_rate, "Share of structural test images");
  synth_cmd->add_option("--logical-rate", tc.logical_rate, "Share of logical test images");
  synth_cmd->add_option("--jitter", tc.jitter, "Max shape offset in pixels");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train_cmd) return run_train(ta);
    if (*eval_cmd) return run_eval(ea);
    if (*vis_cmd) return run_visualize(va);
    if (*synth_cmd) return run_synth(tc, synth_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
