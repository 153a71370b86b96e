#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "binlab/error.hpp"
#include "binlab/losses.hpp"

namespace binlab {

enum class Coupling { flipped_label, confusion, gradient_reversal };

inline std::string to_string(Coupling c) {
  switch (c) {
    case Coupling::flipped_label: return "flipped_label";
    case Coupling::confusion: return "confusion";
    case Coupling::gradient_reversal: return "gradient_reversal";
  }
  return "unknown";
}

inline Coupling coupling_from_string(const std::string& s) {
  if (s == "flipped_label") return Coupling::flipped_label;
  if (s == "confusion") return Coupling::confusion;
  if (s == "gradient_reversal") return Coupling::gradient_reversal;
  throw ConfigError("unknown coupling mode: " + s);
}

struct StageEpochs {
  int atanet = 15;
  int udbnet = 20;
  int joint = 10;
  int finetune = 30;

  int for_stage(int stage) const {
    switch (stage) {
      case 1: return atanet;
      case 2: return udbnet;
      case 3: return joint;
      case 4: return finetune;
    }
    throw ConfigError("no such stage: " + std::to_string(stage));
  }
};

/// Training configuration. Keys in the key-value file mirror these field
/// names, nested fields joined with '.' (e.g. `epochs.atanet = 15`).
struct TrainConfig {
  StageEpochs epochs;
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int batch_size = 4;
  Coupling coupling_mode = Coupling::flipped_label;
  LossWeights weights;
  std::uint64_t seed = 0;
  int patch_size = 256;
  int base_channels = 32;
  int depth = 4;
  std::vector<int> stages{1, 2, 3, 4};
  long checkpoint_every = 0;  // steps; 0 = stage boundaries only
  std::string manifest;

  void validate() const {
    for (int e : {epochs.atanet, epochs.udbnet, epochs.joint, epochs.finetune})
      if (e < 0) throw ConfigError("epochs must be >= 0");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0,1)");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (base_channels < 1 || depth < 1) throw ConfigError("network.base_channels and network.depth must be >= 1");
    if (patch_size < 1 || patch_size % (1 << depth) != 0)
      throw ConfigError("patch_size must be a positive multiple of 2^network.depth");
    for (int s : stages)
      if (s < 1 || s > 4) throw ConfigError("stages must be drawn from 1..4");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
    weights.validate();
  }
};

namespace detail {

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size())
    throw ConfigError("invalid value for " + key + ": '" + value + "'");
  return out;
}

template <>
inline double parse_number<double>(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("invalid value for " + key + ": '" + value + "'");
  }
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "epochs.atanet", "epochs.udbnet", "epochs.joint", "epochs.finetune", "learning_rate",
      "beta1", "beta2", "batch_size", "coupling_mode", "weights.lambda_s", "weights.lambda_c",
      "weights.lambda_l2", "seed", "patch_size", "network.base_channels", "network.depth",
      "stages", "checkpoint_every", "manifest"};
  return keys;
}

/// Sets one field; unknown keys are rejected.
inline void apply_setting(TrainConfig& c, const std::string& key, const std::string& raw) {
  using detail::parse_number;
  const std::string v = detail::trim(raw);
  if (key == "epochs.atanet") c.epochs.atanet = parse_number<int>(key, v);
  else if (key == "epochs.udbnet") c.epochs.udbnet = parse_number<int>(key, v);
  else if (key == "epochs.joint") c.epochs.joint = parse_number<int>(key, v);
  else if (key == "epochs.finetune") c.epochs.finetune = parse_number<int>(key, v);
  else if (key == "learning_rate") c.learning_rate = parse_number<double>(key, v);
  else if (key == "beta1") c.beta1 = parse_number<double>(key, v);
  else if (key == "beta2") c.beta2 = parse_number<double>(key, v);
  else if (key == "batch_size") c.batch_size = parse_number<int>(key, v);
  else if (key == "coupling_mode") c.coupling_mode = coupling_from_string(v);
  else if (key == "weights.lambda_s") c.weights.lambda_s = parse_number<double>(key, v);
  else if (key == "weights.lambda_c") c.weights.lambda_c = parse_number<double>(key, v);
  else if (key == "weights.lambda_l2") c.weights.lambda_l2 = parse_number<double>(key, v);
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "patch_size") c.patch_size = parse_number<int>(key, v);
  else if (key == "network.base_channels") c.base_channels = parse_number<int>(key, v);
  else if (key == "network.depth") c.depth = parse_number<int>(key, v);
  else if (key == "checkpoint_every") c.checkpoint_every = parse_number<long>(key, v);
  else if (key == "manifest") c.manifest = v;
  else if (key == "stages") {
    c.stages.clear();
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!detail::trim(item).empty()) c.stages.push_back(parse_number<int>(key, detail::trim(item)));
    if (c.stages.empty()) throw ConfigError("stages must list at least one stage");
  } else {
    throw ConfigError("unknown config key: " + key);
  }
}

/// `key = value` lines; '#' starts a comment.
inline TrainConfig parse_config(std::istream& in, TrainConfig base = {}) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    apply_setting(base, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

inline TrainConfig load_config(const std::string& path, TrainConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  return parse_config(in, base);
}

/// Effective configuration in the same key-value format.
inline std::string format_config(const TrainConfig& c) {
  std::ostringstream os;
  os << "epochs.atanet = " << c.epochs.atanet << '\n'
     << "epochs.udbnet = " << c.epochs.udbnet << '\n'
     << "epochs.joint = " << c.epochs.joint << '\n'
     << "epochs.finetune = " << c.epochs.finetune << '\n'
     << "learning_rate = " << detail::format_double(c.learning_rate) << '\n'
     << "beta1 = " << detail::format_double(c.beta1) << '\n'
     << "beta2 = " << detail::format_double(c.beta2) << '\n'
     << "batch_size = " << c.batch_size << '\n'
     << "coupling_mode = " << to_string(c.coupling_mode) << '\n'
     << "weights.lambda_s = " << detail::format_double(c.weights.lambda_s) << '\n'
     << "weights.lambda_c = " << detail::format_double(c.weights.lambda_c) << '\n'
     << "weights.lambda_l2 = " << detail::format_double(c.weights.lambda_l2) << '\n'
     << "seed = " << c.seed << '\n'
     << "patch_size = " << c.patch_size << '\n'
     << "network.base_channels = " << c.base_channels << '\n'
     << "network.depth = " << c.depth << '\n'
     << "stages = ";
  for (std::size_t i = 0; i < c.stages.size(); ++i) os << (i ? "," : "") << c.stages[i];
  os << '\n'
     << "checkpoint_every = " << c.checkpoint_every << '\n'
     << "manifest = " << c.manifest << '\n';
  return os.str();
}

}  // namespace binlab
