#pragma once

#include <cmath>
#include <map>
#include <string>

#include "binlab/archive.hpp"
#include "binlab/networks.hpp"

namespace binlab {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. One instance per ParameterSet.
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  long steps() const { return t_; }

  /// Applies the accumulated gradients; parameters without a gradient see zero.
  void step(ParameterSet& ps) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const auto& [name, p] : ps) {
      auto [it, fresh] = moments_.try_emplace(name);
      if (fresh) it->second = {Tensor(p->value.shape()), Tensor(p->value.shape())};
      Tensor& m = it->second.first;
      Tensor& v = it->second.second;
      const bool has_grad = !p->grad.empty();
      for (std::size_t i = 0; i < p->value.numel(); ++i) {
        const double g = has_grad ? p->grad[i] : 0.0;
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        p->value[i] -= cfg_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
      }
    }
  }

  /// Moments keyed "m/<param>" and "v/<param>", step count under "t".
  TensorMap state() const {
    TensorMap out;
    for (const auto& [name, mv] : moments_) {
      out.emplace("m/" + name, mv.first);
      out.emplace("v/" + name, mv.second);
    }
    out.emplace("t", Tensor::scalar(static_cast<double>(t_)));
    return out;
  }

  void load_state(const TensorMap& state) {
    moments_.clear();
    t_ = static_cast<long>(state.at("t").item());
    for (const auto& [key, t] : state) {
      if (key.rfind("m/", 0) == 0) moments_[key.substr(2)].first = t;
      else if (key.rfind("v/", 0) == 0) moments_[key.substr(2)].second = t;
    }
  }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> moments_;
};

}  // namespace binlab
