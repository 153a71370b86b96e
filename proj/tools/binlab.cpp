// binlab: train, synthesize, binarize, evaluate, report.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "binlab/commands.hpp"

namespace {

using namespace binlab;

// Builds the effective training config: defaults, then --config file, then
// --set pairs and `--<key> <value>` shorthands, then explicit flags.
TrainConfig effective_config(const std::string& config_path, const std::vector<std::string>& sets,
                             const std::vector<std::string>& extras) {
  TrainConfig cfg;
  if (!config_path.empty()) cfg = load_config(config_path);
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& tok = extras[i];
    if (tok.rfind("--", 0) != 0) throw ConfigError("unexpected argument: " + tok);
    std::string key = tok.substr(2);
    std::string value;
    if (auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key.erase(eq);
    } else {
      if (i + 1 >= extras.size()) throw ConfigError("missing value for --" + key);
      value = extras[++i];
    }
    apply_setting(cfg, key, value);
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"binlab: unsupervised document binarization"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "run the staged training schedule");
  std::string config_path;
  std::vector<std::string> sets;
  std::string stages;
  std::string manifest;
  std::string resume;
  std::string train_out = "run";
  std::string split = "train";
  std::optional<std::uint64_t> seed;
  train->add_option("--config", config_path, "key = value config file");
  train->add_option("--set", sets, "override, key=value (repeatable)");
  train->add_option("--seed", seed, "random seed");
  train->add_option("--stages", stages, "comma-separated stage subset, e.g. 1,2");
  train->add_option("--manifest", manifest, "dataset manifest (default $BINLAB_DATA_ROOT/manifest.json)");
  train->add_option("--resume", resume, "checkpoint directory to continue from");
  train->add_option("--split", split, "manifest split to train on")->capture_default_str();
  train->add_option("--out", train_out, "output directory")->capture_default_str();
  train->allow_extras();

  // schedule
  auto* schedule = app.add_subcommand("schedule", "print stage lengths and step counts");
  std::string schedule_config;
  std::vector<std::string> schedule_sets;
  std::size_t schedule_images = 0;
  schedule->add_option("--config", schedule_config, "key = value config file");
  schedule->add_option("--set", schedule_sets, "override, key=value (repeatable)");
  schedule->add_option("--images", schedule_images, "degraded image count (default: from manifest)");
  schedule->allow_extras();

  // synthesize
  auto* synth = app.add_subcommand("synthesize", "ATANet: render a clean page with a reference texture");
  SynthesizeArgs sa;
  synth->add_option("--checkpoint", sa.checkpoint, "checkpoint directory")->required();
  synth->add_option("--clean", sa.clean, "clean binary image")->required();
  synth->add_option("--reference", sa.reference, "degraded reference image")->required();
  synth->add_option("--out", sa.out, "output image (default: next to the clean input)");
  synth->add_option("--stride", sa.stride, "tile stride (default: patch size)");

  // binarize
  auto* bin = app.add_subcommand("binarize", "binarize an image or a directory of images");
  BinarizeArgs ba;
  bin->add_option("--method", ba.method, "otsu, sauvola or udbnet");
  bin->add_option("--checkpoint", ba.checkpoint, "checkpoint directory (udbnet)");
  bin->add_option("--input", ba.input, "input image or directory")->required();
  bin->add_option("--out", ba.out, "output image or directory")->required();
  bin->add_option("--window", ba.sauvola.window, "Sauvola window")->capture_default_str();
  bin->add_option("--k", ba.sauvola.k, "Sauvola k")->capture_default_str();
  bin->add_option("--range", ba.sauvola.dynamic_range, "Sauvola dynamic range R")->capture_default_str();
  bin->add_option("--stride", ba.stride, "tile stride (default: patch size)");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "score predictions against ground truth");
  EvaluateArgs ea;
  eval->add_option("--pred", ea.pred, "prediction directory")->required();
  eval->add_option("--gt", ea.gt, "ground-truth directory")->required();
  eval->add_option("--out", ea.out, "directory for metrics.csv and table.txt");

  // report
  auto* rep = app.add_subcommand("report", "method table and loss curves");
  ReportArgs ra;
  std::vector<std::string> logs;
  rep->add_option("--log", logs, "loss log (repeatable)");
  rep->add_option("--metrics", ra.metrics, "metrics.csv, optionally NAME=path (repeatable)")->required();
  rep->add_option("--out", ra.out, "output directory")->required();

  // toy-corpus
  auto* toy = app.add_subcommand("toy-corpus", "write a synthetic degraded/clean corpus");
  ToyCorpusArgs ta;
  toy->add_option("--out", ta.out, "output directory")->required();
  toy->add_option("--count", ta.count, "number of pages")->capture_default_str();
  toy->add_option("--seed", ta.seed, "random seed")->capture_default_str();
  toy->add_option("--size", ta.options.size, "page side in pixels")->capture_default_str();
  toy->add_option("--amplitude", ta.options.amplitude, "degradation strength, 0 = none")->capture_default_str();
  toy->add_option("--name", ta.options.name, "dataset directory name")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  return run_guarded([&]() -> int {
    if (*train) {
      TrainArgs ta_;
      ta_.config = effective_config(config_path, sets, train->remaining());
      if (!stages.empty()) apply_setting(ta_.config, "stages", stages);
      if (!manifest.empty()) ta_.config.manifest = manifest;
      if (seed) ta_.config.seed = *seed;
      ta_.out = train_out;
      ta_.split = split;
      if (!resume.empty()) ta_.resume = resume;
      return cmd_train(ta_);
    }
    if (*schedule) {
      TrainConfig cfg = effective_config(schedule_config, schedule_sets, schedule->remaining());
      cfg.validate();
      std::size_t n = schedule_images;
      if (n == 0 && (!cfg.manifest.empty() || std::getenv("BINLAB_DATA_ROOT"))) {
        const auto lm = load_manifest(resolve_manifest(cfg.manifest));
        n = lm.manifest.split("train").degraded.size();
      }
      if (n == 0) throw ConfigError("schedule needs --images or a manifest");
      std::cout << schedule_report(cfg, n);
      return kExitOk;
    }
    if (*synth) return cmd_synthesize(sa);
    if (*bin) return cmd_binarize(ba);
    if (*eval) return cmd_evaluate(ea);
    if (*rep) {
      for (const auto& l : logs) ra.logs.emplace_back(l);
      return cmd_report(ra);
    }
    if (*toy) return cmd_toy_corpus(ta);
    return kExitUsage;
  });
}
