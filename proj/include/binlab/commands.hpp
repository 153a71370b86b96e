#pragma once

// Command implementations behind the `binlab` executable. Each returns the
// process exit code; argument parsing lives in tools/binlab.cpp.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "binlab/classical.hpp"
#include "binlab/config.hpp"
#include "binlab/dataset.hpp"
#include "binlab/error.hpp"
#include "binlab/image_io.hpp"
#include "binlab/inference.hpp"
#include "binlab/metrics.hpp"
#include "binlab/report.hpp"
#include "binlab/trainer.hpp"

namespace binlab {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

/// Maps the library's exception types onto exit codes, printing the message.
template <typename Fn>
int run_guarded(Fn&& fn, std::ostream& err = std::cerr) {
  try {
    return fn();
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

/// Manifest location: explicit path, else $BINLAB_DATA_ROOT/manifest.json.
/// A relative path is looked up under $BINLAB_DATA_ROOT when it is set.
inline std::filesystem::path resolve_manifest(const std::string& configured) {
  namespace fs = std::filesystem;
  const char* env = std::getenv("BINLAB_DATA_ROOT");
  fs::path p = configured;
  if (p.empty()) {
    if (!env || !*env) throw ConfigError("no manifest: set `manifest` or BINLAB_DATA_ROOT");
    p = fs::path(env) / "manifest.json";
  } else if (p.is_relative() && env && *env && !fs::exists(p)) {
    p = fs::path(env) / p;
  }
  if (!fs::exists(p)) throw IoError("manifest not found: " + p.string());
  return p;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  TrainConfig config;
  std::filesystem::path out;
  std::optional<std::filesystem::path> resume;
  std::string split = "train";
};

/// Runs the configured stages. Writes <out>/config.txt, <out>/losses.jsonl and
/// <out>/checkpoints/stage<k> after each completed stage.
inline int cmd_train(const TrainArgs& a, std::ostream& log = std::cout) {
  namespace fs = std::filesystem;
  const TrainConfig& cfg = a.config;
  cfg.validate();
  const fs::path manifest_path = resolve_manifest(cfg.manifest);
  const LoadedManifest lm = load_manifest(manifest_path);
  for (const auto& w : lm.warnings) log << "warning: " << w << '\n';
  const UnpairedSampler data = UnpairedSampler::from_manifest(lm.manifest, a.split, cfg.patch_size);

  fs::create_directories(a.out / "checkpoints");
  write_atomic(a.out / "config.txt", format_config(cfg));

  TrainState state = a.resume ? load_checkpoint(*a.resume) : TrainState::create(cfg);
  LossLog losses(a.out / "losses.jsonl", a.resume.has_value());

  TrainHooks hooks;
  hooks.on_step = [&](const TrainState& s, const std::map<std::string, double>& named) {
    losses.record(s.step, s.stage, named);
    if (cfg.checkpoint_every > 0 && s.step % cfg.checkpoint_every == 0)
      save_checkpoint(a.out / "checkpoints" / "latest", s, cfg);
  };
  hooks.on_epoch = [&](const TrainState& s, const EpochRecord& rec) {
    log << "stage " << rec.stage << " epoch " << rec.epoch + 1 << "/" << cfg.epochs.for_stage(rec.stage)
        << " step " << s.step;
    for (const auto& [k, v] : rec.mean) log << ' ' << k << '=' << detail::fmt("%.5f", v);
    log << '\n';
  };

  for (int stage : cfg.stages) {
    if (stage < state.stage) continue;
    if (stage != state.stage) {
      state.stage = stage;
      state.epoch = 0;
      state.cursor = 0;
      state.order.clear();
      state.running_sum.clear();
      state.running_count = 0;
    }
    if (!run_stage(state, data, cfg, stage, hooks)) break;
    save_checkpoint(a.out / "checkpoints" / ("stage" + std::to_string(stage)), state, cfg);
    log << "stage " << stage << " done; checkpoint " << (a.out / "checkpoints" / ("stage" + std::to_string(stage))).string()
        << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

/// Stage lengths and optimizer-step counts for a dataset of `degraded_count` images.
inline std::string schedule_report(const TrainConfig& cfg, std::size_t degraded_count) {
  std::ostringstream os;
  os << "stage,name,epochs,steps\n";
  const char* names[] = {"", "atanet", "udbnet", "joint", "finetune"};
  long total = 0;
  for (int s = 1; s <= 4; ++s) {
    const long steps = planned_steps(cfg, s, degraded_count);
    total += steps;
    os << s << ',' << names[s] << ',' << cfg.epochs.for_stage(s) << ',' << steps << '\n';
  }
  os << "total,," << cfg.epochs.atanet + cfg.epochs.udbnet + cfg.epochs.joint + cfg.epochs.finetune << ',' << total
     << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------

struct SynthesizeArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path clean;
  std::filesystem::path reference;
  std::filesystem::path out;  // empty: <clean dir>/<clean stem>_synth.png
  int stride = 0;             // 0: patch size
};

inline int cmd_synthesize(const SynthesizeArgs& a) {
  const TextureGenerator t = load_atanet(a.checkpoint);
  const int patch = checkpoint_patch_size(a.checkpoint);
  const Image clean = load_image(a.clean);
  const Image ref = load_image(a.reference);
  const Image g = atanet_infer(t, clean, ref, patch, a.stride > 0 ? a.stride : patch);
  std::filesystem::path out = a.out;
  if (out.empty()) out = a.clean.parent_path() / (a.clean.stem().string() + "_synth.png");
  save_image(out, g);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct BinarizeArgs {
  std::string method;  // otsu, sauvola, udbnet
  std::filesystem::path checkpoint;
  std::filesystem::path input;  // file or directory of rasters
  std::filesystem::path out;    // file, or directory when input is a directory
  SauvolaParams sauvola;
  int stride = 0;
};

inline const std::vector<std::string>& binarize_methods() {
  static const std::vector<std::string> m{"otsu", "sauvola", "udbnet"};
  return m;
}

inline int cmd_binarize(const BinarizeArgs& a) {
  namespace fs = std::filesystem;
  std::string method = a.method.empty() && !a.checkpoint.empty() ? "udbnet" : a.method;
  if (std::find(binarize_methods().begin(), binarize_methods().end(), method) == binarize_methods().end())
    throw ArgumentError("unknown binarization method: '" + method + "' (expected otsu, sauvola or udbnet)");
  a.sauvola.validate();

  std::optional<Network> f;
  int patch = 0;
  if (method == "udbnet") {
    if (a.checkpoint.empty()) throw ArgumentError("udbnet binarization needs --checkpoint");
    f = load_network(a.checkpoint, "udbnet");
    patch = checkpoint_patch_size(a.checkpoint);
  }
  auto run = [&](const Image& img) -> BinaryImage {
    if (method == "otsu") return otsu(to_grayscale(img)).binary;
    if (method == "sauvola") return sauvola(to_grayscale(img), a.sauvola);
    return udbnet_binarize(*f, img, patch, a.stride > 0 ? a.stride : patch);
  };

  if (fs::is_directory(a.input)) {
    fs::create_directories(a.out);
    std::size_t n = 0;
    for (const auto& [stem, path] : rasters_by_stem(a.input)) {
      save_binary(a.out / (stem + ".png"), run(load_image(path)));
      ++n;
    }
    if (n == 0) throw IoError("no raster images in " + a.input.string());
  } else {
    if (!a.out.parent_path().empty()) fs::create_directories(a.out.parent_path());
    save_binary(a.out, run(load_image(a.input)));
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::filesystem::path pred;
  std::filesystem::path gt;
  std::filesystem::path out;  // writes metrics.csv and table.txt; empty: stdout only
};

inline int cmd_evaluate(const EvaluateArgs& a, std::ostream& os = std::cout, std::ostream& err = std::cerr) {
  const MetricsReport r = evaluate_dataset(a.pred, a.gt);
  for (const auto& w : r.warnings) err << "warning: " << w << '\n';
  if (r.images.empty()) throw IoError("no prediction matches a ground-truth file");
  std::vector<ImageMetrics> rows = r.images;
  ImageMetrics mean = r.mean;
  mean.image = "mean";
  rows.push_back(mean);
  const std::string table = metrics_table(rows);
  os << table;
  if (!a.out.empty()) {
    std::filesystem::create_directories(a.out);
    write_atomic(a.out / "metrics.csv", metrics_csv(r.images));
    write_atomic(a.out / "table.txt", table);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct ReportArgs {
  std::vector<std::filesystem::path> logs;
  std::vector<std::string> metrics;  // NAME=path or path
  std::filesystem::path out;
};

inline int cmd_report(const ReportArgs& a, std::ostream& os = std::cout, std::ostream& err = std::cerr) {
  std::vector<MethodMetrics> methods;
  for (const auto& m : a.metrics) methods.push_back(parse_method_arg(m));
  const ReportSummary s = write_report(a.out, a.logs, methods);
  os << s.table;
  if (s.malformed > 0) err << "warning: skipped " << s.malformed << " malformed loss-log line(s)\n";
  if (!a.logs.empty() && s.records == 0) {
    err << "error: loss log contains no records; no curves written\n";
    return kExitData;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct ToyCorpusArgs {
  std::filesystem::path out;
  int count = 8;
  std::uint64_t seed = 0;
  ToyCorpusOptions options;
};

inline int cmd_toy_corpus(const ToyCorpusArgs& a) {
  Rng rng(a.seed);
  synth_toy_corpus(a.out, a.count, rng, a.options);
  return kExitOk;
}

}  // namespace binlab
