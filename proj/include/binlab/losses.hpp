#pragma once

#include <cmath>
#include <map>
#include <string>

#include "binlab/autograd.hpp"
#include "binlab/error.hpp"
#include "binlab/image.hpp"
#include "binlab/networks.hpp"

namespace binlab {

struct LossWeights {
  double lambda_s = 0.5;
  double lambda_c = 10.0;
  double lambda_l2 = 100.0;

  void validate() const {
    if (!(lambda_s >= 0.0 && lambda_c >= 0.0 && lambda_l2 >= 0.0))
      throw ConfigError("loss weights must be non-negative");
  }
};

/// Scalar loss components of one training step.
struct LossReport {
  double adv_T = 0.0;
  double adv_F = 0.0;
  double adv_joint_T = 0.0;
  double adv_joint_F = 0.0;
  double style = 0.0;
  double content = 0.0;
  double l2 = 0.0;
  double total_atanet = 0.0;
  double total_udbnet = 0.0;

  std::map<std::string, double> named() const {
    return {{"adv_T", adv_T},       {"adv_F", adv_F},     {"adv_joint_T", adv_joint_T},
            {"adv_joint_F", adv_joint_F}, {"style", style}, {"content", content},
            {"l2", l2},             {"total_atanet", total_atanet}, {"total_udbnet", total_udbnet}};
  }

  bool all_finite() const {
    for (const auto& [_, v] : named())
      if (!std::isfinite(v)) return false;
    return true;
  }
};

namespace detail {

inline void check_scores(const ag::Var& s) {
  for (double v : s->value.data()) {
    if (std::isnan(v)) throw NumericError("adversarial loss: NaN discriminator score");
    if (!(v >= 0.0 && v <= 1.0)) throw ArgumentError("adversarial loss: score outside [0,1]");
  }
}

}  // namespace detail

/// -mean(log s)
inline ag::Var bce_real(const ag::Var& score) {
  detail::check_scores(score);
  return ag::bce(score, 1.0);
}

/// -mean(log(1 - s))
inline ag::Var bce_fake(const ag::Var& score) {
  detail::check_scores(score);
  return ag::bce(score, 0.0);
}

inline ag::Var gram_matrix(const ag::Var& features) { return ag::gram(features); }

/// Sum over layers of ||Gram(gen) - Gram(ref)||_F^2 / (4 N^2 M^2), averaged over the batch.
inline ag::Var style_loss(const FeatureStack& ref, const FeatureStack& gen) {
  if (ref.size() != gen.size() || ref.empty()) throw ArgumentError("style_loss: feature stacks not layer-aligned");
  ag::Var total;
  for (std::size_t l = 0; l < ref.size(); ++l) {
    const Shape s = ref[l]->value.shape();
    if (!(s == gen[l]->value.shape()))
      throw ArgumentError("style_loss: layer " + std::to_string(l) + " shapes differ");
    const double n = s.c;
    const double m = static_cast<double>(s.plane());
    const double w = 1.0 / (4.0 * n * n * m * m * s.n);
    auto term = ag::scale(ag::sum_squares(ag::sub(gram_matrix(gen[l]), gram_matrix(ref[l]))), w);
    total = total ? ag::add(total, term) : term;
  }
  return total;
}

/// mean((M*C - M*G)^2) with M the text mask.
inline ag::Var content_loss(const ag::Var& clean, const ag::Var& generated, const ag::Var& mask) {
  ag::detail::check_same(clean, generated, "content_loss");
  ag::detail::check_same(clean, mask, "content_loss");
  return ag::mse(ag::mul(mask, clean), ag::mul(mask, generated));
}

inline ag::Var l2_loss(const ag::Var& clean, const ag::Var& binarized) {
  ag::detail::check_same(clean, binarized, "l2_loss");
  return ag::mse(clean, binarized);
}

/// Text mask of a batch of clean patches, as a tensor of 0/1.
inline Tensor text_mask_tensor(const Tensor& clean) {
  Tensor m(clean.shape());
  for (std::size_t i = 0; i < m.numel(); ++i) m[i] = clean[i] < kInkThreshold ? 1.0 : 0.0;
  return m;
}

// Image-level conveniences.

inline double content_loss(const Image& clean, const Image& generated, const BinaryImage& mask) {
  if (clean.height() != generated.height() || clean.width() != generated.width() ||
      clean.height() != mask.height() || clean.width() != mask.width() || clean.channels() != 1 ||
      generated.channels() != 1)
    throw ArgumentError("content_loss: dims mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const double d = mask.data()[i] * (clean.data()[i] - generated.data()[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(clean.size());
}

inline double l2_loss(const Image& clean, const Image& binarized) {
  if (clean.height() != binarized.height() || clean.width() != binarized.width() ||
      clean.channels() != binarized.channels())
    throw ArgumentError("l2_loss: dims mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const double d = clean.data()[i] - binarized.data()[i];
    acc += d * d;
  }
  return acc / static_cast<double>(clean.size());
}

// ATANet objective: adv_T + adv_joint_T + lambda_s * style + lambda_c * content.

inline double atanet_objective(const LossReport& r, const LossWeights& w) {
  return r.adv_T + r.adv_joint_T + w.lambda_s * r.style + w.lambda_c * r.content;
}

inline ag::Var atanet_objective(const ag::Var& adv, const ag::Var& adv_joint, const ag::Var& style,
                                const ag::Var& content, const LossWeights& w) {
  auto total = ag::add(ag::scale(style, w.lambda_s), ag::scale(content, w.lambda_c));
  total = ag::add(total, adv);
  return adv_joint ? ag::add(total, adv_joint) : total;
}

// UDBNet objective: adv_F + adv_joint_F + lambda_l2 * l2.

inline double udbnet_objective(const LossReport& r, const LossWeights& w) {
  return r.adv_F + r.adv_joint_F + w.lambda_l2 * r.l2;
}

inline ag::Var udbnet_objective(const ag::Var& adv, const ag::Var& adv_joint, const ag::Var& l2,
                                const LossWeights& w) {
  auto total = ag::add(adv, ag::scale(l2, w.lambda_l2));
  return adv_joint ? ag::add(total, adv_joint) : total;
}

}  // namespace binlab
