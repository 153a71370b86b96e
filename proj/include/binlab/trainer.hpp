#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "binlab/archive.hpp"
#include "binlab/autograd.hpp"
#include "binlab/config.hpp"
#include "binlab/dataset.hpp"
#include "binlab/error.hpp"
#include "binlab/losses.hpp"
#include "binlab/networks.hpp"
#include "binlab/optim.hpp"
#include "binlab/random.hpp"

namespace binlab {

// Label of the ATANet branch (C, G) for the joint discriminator; the UDBNet
// branch (B', D) gets the opposite label.
inline constexpr double kAtanetBranchLabel = 1.0;

struct CouplingLosses {
  ag::Var generator_T;    // drives T through J_D(C, G)
  ag::Var generator_F;    // drives F through J_D(B', D)
  ag::Var discriminator;  // J_D's own classification loss
};

/// Joint-discriminator losses for a coupling mode. `scores_T` are J_D outputs
/// on ATANet-branch pairs, `scores_F` on UDBNet-branch pairs.
///  - flipped_label: generators minimize the classification loss with inverted labels.
///  - confusion: generators minimize cross-entropy against the uniform target 0.5.
///  - gradient_reversal: generators receive the negated gradient of the
///    classification loss itself.
inline CouplingLosses coupling_signal(Coupling mode, const ag::Var& scores_T, const ag::Var& scores_F,
                                      double reversal_factor = 1.0) {
  CouplingLosses out;
  out.discriminator = ag::add(bce_real(scores_T), bce_fake(scores_F));
  switch (mode) {
    case Coupling::flipped_label:
      out.generator_T = bce_fake(scores_T);
      out.generator_F = bce_real(scores_F);
      break;
    case Coupling::confusion:
      out.generator_T = ag::bce(scores_T, 0.5);
      out.generator_F = ag::bce(scores_F, 0.5);
      break;
    case Coupling::gradient_reversal:
      out.generator_T = bce_real(ag::grad_reverse(scores_T, reversal_factor));
      out.generator_F = bce_fake(ag::grad_reverse(scores_F, reversal_factor));
      break;
    default:
      throw ConfigError("unknown coupling mode");
  }
  return out;
}

inline CouplingLosses coupling_signal(const std::string& mode, const ag::Var& scores_T, const ag::Var& scores_F) {
  return coupling_signal(coupling_from_string(mode), scores_T, scores_F);
}

/// Per-stage loss averages of one finished epoch.
struct EpochRecord {
  int stage = 0;
  int epoch = 0;
  std::map<std::string, double> mean;
};

/// Everything needed to continue training bit-exactly.
struct TrainState {
  int stage = 1;
  int epoch = 0;             // within the stage
  long step = 0;             // global optimizer step counter
  std::size_t cursor = 0;    // position in the current epoch order
  std::vector<std::size_t> order;
  Rng rng;

  TextureGenerator atanet;
  Network udbnet;
  Network disc_T;
  Network disc_F;
  Network joint;

  Adam opt_atanet;
  Adam opt_udbnet;
  Adam opt_disc_T;
  Adam opt_disc_F;
  Adam opt_joint;

  std::map<std::string, double> running_sum;
  long running_count = 0;
  std::vector<EpochRecord> history;

  static TrainState create(const TrainConfig& cfg) {
    cfg.validate();
    TrainState s;
    s.rng = Rng(cfg.seed);
    auto& eng = s.rng.engine();
    s.atanet = TextureGenerator::create(cfg.base_channels, cfg.depth, eng);
    s.udbnet = Network::create({Role::binarizer, cfg.base_channels, cfg.depth, 1}, eng);
    s.disc_T = Network::create({Role::patch_discriminator, cfg.base_channels, cfg.depth, 1}, eng);
    s.disc_F = Network::create({Role::patch_discriminator, cfg.base_channels, cfg.depth, 1}, eng);
    s.joint = Network::create({Role::joint_discriminator, cfg.base_channels, cfg.depth, 2}, eng);
    const AdamConfig ac{cfg.learning_rate, cfg.beta1, cfg.beta2};
    s.opt_atanet = s.opt_udbnet = s.opt_disc_T = s.opt_disc_F = s.opt_joint = Adam(ac);
    s.stage = cfg.stages.empty() ? 1 : cfg.stages.front();
    return s;
  }
};

namespace detail {

inline void require_finite(const LossReport& r, const TrainState& s) {
  for (const auto& [name, v] : r.named())
    if (!std::isfinite(v))
      throw NumericError("non-finite loss '" + name + "' at stage " + std::to_string(s.stage) + ", step " +
                         std::to_string(s.step));
}

inline void update(ParameterSet& ps, Adam& opt, const ag::Var& loss) {
  ps.zero_grad();
  ag::backward(loss);
  opt.step(ps);
}

inline double val(const ag::Var& v) { return v->value.item(); }

}  // namespace detail

/// Loss components that each stage reports.
inline std::vector<std::string> stage_loss_names(int stage) {
  switch (stage) {
    case 1: return {"disc_T", "adv_T", "style", "content", "total_atanet"};
    case 2: return {"disc_F", "adv_F", "l2", "total_udbnet"};
    default:
      return {"disc_T", "disc_F", "disc_joint", "adv_T", "adv_F", "adv_joint_T", "adv_joint_F",
              "style", "content", "l2", "total_atanet", "total_udbnet"};
  }
}

/// LossReport plus discriminator-side losses.
struct StepLosses {
  LossReport report;
  double disc_T = 0.0;
  double disc_F = 0.0;
  double disc_joint = 0.0;

  std::map<std::string, double> named(int stage) const {
    auto all = report.named();
    all["disc_T"] = disc_T;
    all["disc_F"] = disc_F;
    all["disc_joint"] = disc_joint;
    std::map<std::string, double> out;
    for (const auto& n : stage_loss_names(stage)) out[n] = all.at(n);
    return out;
  }
};

/// Stage 1: D_T on real D vs generated G, then T on adversarial + style + content.
inline StepLosses atanet_step(TrainState& s, const Batch& b, const TrainConfig& cfg) {
  auto C = ag::constant(b.clean);
  auto D = ag::constant(b.degraded);
  auto M = ag::constant(text_mask_tensor(b.clean));
  StepLosses out;

  AtanetOutput t = atanet_forward(s.atanet, C, D, Grad::track);
  auto d_loss = ag::add(bce_real(disc_forward(s.disc_T, D)), bce_fake(disc_forward(s.disc_T, ag::detach(t.generated))));
  detail::update(s.disc_T.params, s.opt_disc_T, d_loss);
  out.disc_T = detail::val(d_loss);

  auto adv = bce_real(disc_forward(s.disc_T, t.generated, Grad::frozen));
  auto style = style_loss(t.style_ref, t.style_gen);
  auto content = content_loss(C, t.generated, M);
  auto total = atanet_objective(adv, nullptr, style, content, cfg.weights);
  detail::update(s.atanet.params, s.opt_atanet, total);
  out.report.adv_T = detail::val(adv);
  out.report.style = detail::val(style);
  out.report.content = detail::val(content);
  out.report.total_atanet = detail::val(total);
  return out;
}

/// Stage 2: T frozen; pseudo-pairs (C, T(C, D)) train D_F then F.
inline StepLosses udbnet_step(TrainState& s, const Batch& b, const TrainConfig& cfg) {
  auto C = ag::constant(b.clean);
  auto D = ag::constant(b.degraded);
  StepLosses out;

  auto G = atanet_forward(s.atanet, C, D, Grad::frozen).generated;
  auto B = udbnet_forward(s.udbnet, G, Grad::track);
  auto d_loss = ag::add(bce_real(disc_forward(s.disc_F, C)), bce_fake(disc_forward(s.disc_F, ag::detach(B))));
  detail::update(s.disc_F.params, s.opt_disc_F, d_loss);
  out.disc_F = detail::val(d_loss);

  auto adv = bce_real(disc_forward(s.disc_F, B, Grad::frozen));
  auto l2 = l2_loss(C, B);
  auto total = udbnet_objective(adv, nullptr, l2, cfg.weights);
  detail::update(s.udbnet.params, s.opt_udbnet, total);
  out.report.adv_F = detail::val(adv);
  out.report.l2 = detail::val(l2);
  out.report.total_udbnet = detail::val(total);
  return out;
}

/// Stages 3 and 4: (a) D_T and D_F, (b) J_D on (C, G) vs (B', D), (c) T and F
/// with the coupling mode's generator-side joint terms.
inline StepLosses joint_step(TrainState& s, const Batch& b, const TrainConfig& cfg) {
  auto C = ag::constant(b.clean);
  auto D = ag::constant(b.degraded);
  auto M = ag::constant(text_mask_tensor(b.clean));
  StepLosses out;

  AtanetOutput t = atanet_forward(s.atanet, C, D, Grad::track);
  auto G = t.generated;
  auto G_data = ag::detach(G);
  auto B = udbnet_forward(s.udbnet, G_data, Grad::track);
  auto B_real = udbnet_forward(s.udbnet, D, Grad::track);

  // (a)
  auto dt_loss = ag::add(bce_real(disc_forward(s.disc_T, D)), bce_fake(disc_forward(s.disc_T, G_data)));
  detail::update(s.disc_T.params, s.opt_disc_T, dt_loss);
  auto df_loss = ag::add(bce_real(disc_forward(s.disc_F, C)), bce_fake(disc_forward(s.disc_F, ag::detach(B))));
  detail::update(s.disc_F.params, s.opt_disc_F, df_loss);
  out.disc_T = detail::val(dt_loss);
  out.disc_F = detail::val(df_loss);

  // (b)
  {
    auto sT = joint_disc_forward(s.joint, C, G_data);
    auto sF = joint_disc_forward(s.joint, ag::detach(B_real), D);
    auto j_loss = coupling_signal(cfg.coupling_mode, sT, sF).discriminator;
    detail::update(s.joint.params, s.opt_joint, j_loss);
    out.disc_joint = detail::val(j_loss);
  }

  // (c)
  auto sT = joint_disc_forward(s.joint, C, G, Grad::frozen);
  auto sF = joint_disc_forward(s.joint, B_real, D, Grad::frozen);
  CouplingLosses cl = coupling_signal(cfg.coupling_mode, sT, sF);

  auto adv_T = bce_real(disc_forward(s.disc_T, G, Grad::frozen));
  auto style = style_loss(t.style_ref, t.style_gen);
  auto content = content_loss(C, G, M);
  auto total_T = atanet_objective(adv_T, cl.generator_T, style, content, cfg.weights);

  auto adv_F = bce_real(disc_forward(s.disc_F, B, Grad::frozen));
  auto l2 = l2_loss(C, B);
  auto total_F = udbnet_objective(adv_F, cl.generator_F, l2, cfg.weights);

  // T's and F's graphs share no parameters, so one backward pass serves both.
  s.atanet.params.zero_grad();
  s.udbnet.params.zero_grad();
  ag::backward(ag::add(total_T, total_F));
  s.opt_atanet.step(s.atanet.params);
  s.opt_udbnet.step(s.udbnet.params);

  LossReport& r = out.report;
  r.adv_T = detail::val(adv_T);
  r.adv_F = detail::val(adv_F);
  r.adv_joint_T = detail::val(cl.generator_T);
  r.adv_joint_F = detail::val(cl.generator_F);
  r.style = detail::val(style);
  r.content = detail::val(content);
  r.l2 = detail::val(l2);
  r.total_atanet = detail::val(total_T);
  r.total_udbnet = detail::val(total_F);
  return out;
}

/// Callbacks invoked by the training loop.
struct TrainHooks {
  std::function<void(const TrainState&, const std::map<std::string, double>&)> on_step;
  std::function<void(const TrainState&, const EpochRecord&)> on_epoch;
  std::optional<long> stop_at_step;  // interrupt once state.step reaches this value
};

/// Runs the remaining epochs of `stage`. Returns false if interrupted by
/// `hooks.stop_at_step`, true when the stage completed.
inline bool run_stage(TrainState& s, const UnpairedSampler& data, const TrainConfig& cfg, int stage,
                      const TrainHooks& hooks = {}) {
  if (s.stage != stage)
    throw ConfigError("stage " + std::to_string(stage) + " requested but state is at stage " + std::to_string(s.stage));
  const std::size_t n = data.degraded_count();
  if (n == 0) throw ConfigError("empty dataset");
  const int epochs = cfg.epochs.for_stage(stage);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  while (s.epoch < epochs) {
    if (s.order.empty()) {
      s.order.resize(n);
      std::iota(s.order.begin(), s.order.end(), std::size_t{0});
      for (std::size_t i = n - 1; i > 0; --i) std::swap(s.order[i], s.order[s.rng.index(i + 1)]);
      s.cursor = 0;
    }
    while (s.cursor < n) {
      if (hooks.stop_at_step && s.step >= *hooks.stop_at_step) return false;
      const std::size_t end = std::min(n, s.cursor + batch);
      std::vector<std::size_t> idx(s.order.begin() + static_cast<std::ptrdiff_t>(s.cursor),
                                   s.order.begin() + static_cast<std::ptrdiff_t>(end));
      const Batch b = data.sample_for(idx, s.rng);
      StepLosses losses = stage == 1 ? atanet_step(s, b, cfg) : stage == 2 ? udbnet_step(s, b, cfg) : joint_step(s, b, cfg);
      detail::require_finite(losses.report, s);
      s.cursor = end;
      ++s.step;
      const auto named = losses.named(stage);
      for (const auto& [k, v] : named) s.running_sum[k] += v;
      ++s.running_count;
      if (hooks.on_step) hooks.on_step(s, named);
    }
    EpochRecord rec{stage, s.epoch, {}};
    for (const auto& [k, v] : s.running_sum) rec.mean[k] = v / static_cast<double>(s.running_count);
    s.history.push_back(rec);
    s.running_sum.clear();
    s.running_count = 0;
    ++s.epoch;
    s.cursor = 0;
    s.order.clear();
    if (hooks.on_epoch) hooks.on_epoch(s, rec);
  }
  s.epoch = 0;
  s.stage = stage + 1;
  return true;
}

inline bool stage1_train_atanet(TrainState& s, const UnpairedSampler& d, const TrainConfig& c, const TrainHooks& h = {}) {
  return run_stage(s, d, c, 1, h);
}
inline bool stage2_train_udbnet(TrainState& s, const UnpairedSampler& d, const TrainConfig& c, const TrainHooks& h = {}) {
  return run_stage(s, d, c, 2, h);
}
inline bool stage3_joint_train(TrainState& s, const UnpairedSampler& d, const TrainConfig& c, const TrainHooks& h = {}) {
  return run_stage(s, d, c, 3, h);
}
inline bool stage4_finetune(TrainState& s, const UnpairedSampler& d, const TrainConfig& c, const TrainHooks& h = {}) {
  return run_stage(s, d, c, 4, h);
}

/// Optimizer steps a stage takes: epochs * ceil(N / batch).
inline long planned_steps(const TrainConfig& cfg, int stage, std::size_t degraded_count) {
  const long per_epoch = static_cast<long>((degraded_count + cfg.batch_size - 1) / cfg.batch_size);
  return per_epoch * cfg.epochs.for_stage(stage);
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// <dir>/manifest.json        specs, loss weights, stage/epoch/step, RNG state
// <dir>/<network>.blta       parameters keyed by layer path
// <dir>/optim_<network>.blta Adam moments

inline TensorMap to_tensor_map(const ParameterSet& ps) {
  TensorMap out;
  for (const auto& [name, v] : ps) out.emplace(name, v->value);
  return out;
}

/// Overwrites parameter values; names and shapes must match exactly.
inline void assign_parameters(ParameterSet& ps, const TensorMap& values, const std::string& what) {
  if (values.size() != ps.tensors())
    throw FormatError(what + ": expected " + std::to_string(ps.tensors()) + " tensors, archive has " +
                      std::to_string(values.size()));
  for (const auto& [name, v] : ps) {
    auto it = values.find(name);
    if (it == values.end()) throw FormatError(what + ": archive lacks " + name);
    if (!(it->second.shape() == v->value.shape())) throw FormatError(what + ": shape mismatch for " + name);
    v->value = it->second;
    v->grad = Tensor();
  }
}

inline nlohmann::json spec_json(const NetworkSpec& s) {
  return {{"role", to_string(s.role)}, {"base_channels", s.base_channels}, {"depth", s.depth},
          {"input_channels", s.input_channels}};
}

inline NetworkSpec spec_from_json(const nlohmann::json& j) {
  return {role_from_string(j.at("role").get<std::string>()), j.at("base_channels").get<int>(), j.at("depth").get<int>(),
          j.at("input_channels").get<int>()};
}

inline void save_checkpoint(const std::filesystem::path& dir, const TrainState& s, const TrainConfig& cfg) {
  namespace fs = std::filesystem;
  fs::path tmp = dir;
  tmp += ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);

  save_tensors(tmp / "atanet.blta", to_tensor_map(s.atanet.params));
  save_tensors(tmp / "udbnet.blta", to_tensor_map(s.udbnet.params));
  save_tensors(tmp / "disc_t.blta", to_tensor_map(s.disc_T.params));
  save_tensors(tmp / "disc_f.blta", to_tensor_map(s.disc_F.params));
  save_tensors(tmp / "joint_disc.blta", to_tensor_map(s.joint.params));
  save_tensors(tmp / "optim_atanet.blta", s.opt_atanet.state());
  save_tensors(tmp / "optim_udbnet.blta", s.opt_udbnet.state());
  save_tensors(tmp / "optim_disc_t.blta", s.opt_disc_T.state());
  save_tensors(tmp / "optim_disc_f.blta", s.opt_disc_F.state());
  save_tensors(tmp / "optim_joint_disc.blta", s.opt_joint.state());

  nlohmann::json j;
  j["format"] = "binlab-checkpoint";
  j["version"] = 1;
  j["stage"] = s.stage;
  j["epoch"] = s.epoch;
  j["step"] = s.step;
  j["cursor"] = s.cursor;
  j["order"] = s.order;
  j["rng"] = s.rng.state();
  j["running_sum"] = s.running_sum;
  j["running_count"] = s.running_count;
  j["history"] = nlohmann::json::array();
  for (const auto& h : s.history) j["history"].push_back({{"stage", h.stage}, {"epoch", h.epoch}, {"mean", h.mean}});
  j["weights"] = {{"lambda_s", cfg.weights.lambda_s}, {"lambda_c", cfg.weights.lambda_c},
                  {"lambda_l2", cfg.weights.lambda_l2}};
  j["networks"] = {
      {"atanet", {{"file", "atanet.blta"},
                  {"specs", {spec_json(s.atanet.content), spec_json(s.atanet.style), spec_json(s.atanet.decoder)}}}},
      {"udbnet", {{"file", "udbnet.blta"}, {"spec", spec_json(s.udbnet.spec)}}},
      {"disc_t", {{"file", "disc_t.blta"}, {"spec", spec_json(s.disc_T.spec)}}},
      {"disc_f", {{"file", "disc_f.blta"}, {"spec", spec_json(s.disc_F.spec)}}},
      {"joint_disc", {{"file", "joint_disc.blta"}, {"spec", spec_json(s.joint.spec)}}},
  };
  j["adam"] = {{"learning_rate", cfg.learning_rate}, {"beta1", cfg.beta1}, {"beta2", cfg.beta2}};
  j["patch_size"] = cfg.patch_size;
  j["config"] = format_config(cfg);
  write_atomic(tmp / "manifest.json", j.dump(2) + "\n");

  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

inline nlohmann::json read_checkpoint_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("checkpoint manifest missing: " + (dir / "manifest.json").string());
  try {
    nlohmann::json j;
    in >> j;
    if (j.value("format", "") != "binlab-checkpoint") throw FormatError("not a binlab checkpoint: " + dir.string());
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed checkpoint manifest in " + dir.string() + ": " + e.what());
  }
}

/// Patch size the checkpoint was trained with; inference tiles at this size.
inline int checkpoint_patch_size(const std::filesystem::path& dir) {
  return read_checkpoint_manifest(dir).at("patch_size").get<int>();
}

inline Network load_network(const std::filesystem::path& dir, const std::string& key) {
  const auto j = read_checkpoint_manifest(dir);
  if (!j.at("networks").contains(key)) throw ConfigError("checkpoint " + dir.string() + " has no network '" + key + "'");
  const auto& entry = j["networks"][key];
  const fs::path file = dir / entry.at("file").get<std::string>();
  if (!fs::exists(file)) throw ConfigError("checkpoint " + dir.string() + " is missing " + file.filename().string());
  std::mt19937_64 scratch(0);
  Network n = Network::create(spec_from_json(entry.at("spec")), scratch);
  assign_parameters(n.params, load_tensors(file), key);
  return n;
}

inline TextureGenerator load_atanet(const std::filesystem::path& dir) {
  const auto j = read_checkpoint_manifest(dir);
  if (!j.at("networks").contains("atanet")) throw ConfigError("checkpoint " + dir.string() + " has no ATANet");
  const auto& entry = j["networks"]["atanet"];
  const fs::path file = dir / entry.at("file").get<std::string>();
  if (!fs::exists(file)) throw ConfigError("checkpoint " + dir.string() + " is missing " + file.filename().string());
  const auto& specs = entry.at("specs");
  const NetworkSpec content = spec_from_json(specs.at(0));
  std::mt19937_64 scratch(0);
  TextureGenerator t = TextureGenerator::create(content.base_channels, content.depth, scratch);
  assign_parameters(t.params, load_tensors(file), "atanet");
  return t;
}

inline TrainState load_checkpoint(const std::filesystem::path& dir) {
  const auto j = read_checkpoint_manifest(dir);
  TrainState s;
  s.atanet = load_atanet(dir);
  s.udbnet = load_network(dir, "udbnet");
  s.disc_T = load_network(dir, "disc_t");
  s.disc_F = load_network(dir, "disc_f");
  s.joint = load_network(dir, "joint_disc");
  const auto& adam = j.at("adam");
  const AdamConfig ac{adam.at("learning_rate").get<double>(), adam.at("beta1").get<double>(),
                      adam.at("beta2").get<double>()};
  s.opt_atanet = s.opt_udbnet = s.opt_disc_T = s.opt_disc_F = s.opt_joint = Adam(ac);
  s.opt_atanet.load_state(load_tensors(dir / "optim_atanet.blta"));
  s.opt_udbnet.load_state(load_tensors(dir / "optim_udbnet.blta"));
  s.opt_disc_T.load_state(load_tensors(dir / "optim_disc_t.blta"));
  s.opt_disc_F.load_state(load_tensors(dir / "optim_disc_f.blta"));
  s.opt_joint.load_state(load_tensors(dir / "optim_joint_disc.blta"));
  s.stage = j.at("stage").get<int>();
  s.epoch = j.at("epoch").get<int>();
  s.step = j.at("step").get<long>();
  s.cursor = j.at("cursor").get<std::size_t>();
  s.order = j.at("order").get<std::vector<std::size_t>>();
  s.rng.set_state(j.at("rng").get<std::string>());
  s.running_sum = j.at("running_sum").get<std::map<std::string, double>>();
  s.running_count = j.at("running_count").get<long>();
  for (const auto& h : j.at("history"))
    s.history.push_back({h.at("stage").get<int>(), h.at("epoch").get<int>(),
                         h.at("mean").get<std::map<std::string, double>>()});
  return s;
}

// ---------------------------------------------------------------------------
// Loss log: one JSON object per line, {"step", "stage", "loss", "value"}.

class LossLog {
 public:
  LossLog() = default;
  explicit LossLog(const std::filesystem::path& path, bool append = false)
      : out_(path, append ? std::ios::app : std::ios::trunc) {
    if (!out_) throw IoError("cannot open loss log " + path.string());
  }

  void record(long step, int stage, const std::map<std::string, double>& losses) {
    if (!out_.is_open()) return;
    for (const auto& [name, value] : losses) {
      nlohmann::json j{{"step", step}, {"stage", stage}, {"loss", name}, {"value", value}};
      out_ << j.dump() << '\n';
    }
    out_.flush();
  }

 private:
  std::ofstream out_;
};

}  // namespace binlab
