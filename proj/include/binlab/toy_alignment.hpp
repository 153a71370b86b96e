#pragma once

// Scalar stand-in for the joint-discriminator game: two linear generators
// produce pairs whose joint laws the coupling mode has to align.
//
//   ATANet branch:  (c, a_T c + b_T),  c ~ N(0, 1)
//   UDBNet branch:  (a_F d + b_F, d),  d ~ N(mu, sigma)
//
// J_D is logistic regression on (x1, x2, x1^2, x2^2, x1 x2). The two laws
// coincide at a_T = sigma, b_T = mu, a_F = 1/sigma, b_F = -mu/sigma.

#include <string>
#include <vector>

#include "binlab/autograd.hpp"
#include "binlab/config.hpp"
#include "binlab/networks.hpp"
#include "binlab/optim.hpp"
#include "binlab/random.hpp"
#include "binlab/trainer.hpp"

namespace binlab {

struct ToyAlignmentConfig {
  double mu = 3.0;
  double sigma = 2.0;
  double init_a_T = 1.0;
  double init_b_T = 0.0;
  double init_a_F = -1.0;
  double init_b_F = 0.0;
  int batch = 64;
  int heldout = 4000;
  int pretrain_max_steps = 2000;
  double pretrain_target = 0.9;
  int max_steps = 2000;
  double target_accuracy = 0.6;
  int eval_every = 10;
  double lr_discriminator = 0.01;
  double lr_generator = 0.01;
  Coupling mode = Coupling::flipped_label;
};

struct ToyAlignmentResult {
  double initial_accuracy = 0.0;    // held-out J_D accuracy after pretraining
  double final_accuracy = 0.0;      // at the stopping step
  int pretrain_steps = 0;
  int steps = 0;                    // coupling steps taken
  bool converged = false;           // final_accuracy < target within max_steps
  std::vector<std::pair<int, double>> trace;  // (step, held-out accuracy)
  double a_T = 0, b_T = 0, a_F = 0, b_F = 0;
};

namespace toy {

inline ag::Var column(const std::vector<double>& v) {
  return ag::constant(Tensor(Shape{static_cast<int>(v.size()), 1, 1, 1}, v));
}

inline ag::Var param(double v) { return ag::leaf(Tensor::scalar(v), true); }

struct Game {
  ParameterSet gen_T;   // "a", "b"
  ParameterSet gen_F;
  ParameterSet disc;    // "w0".."w4", "bias"

  ag::Var generate_T(const ag::Var& c, Grad mode) const { return affine(gen_T, c, mode); }
  ag::Var generate_F(const ag::Var& d, Grad mode) const { return affine(gen_F, d, mode); }

  ag::Var score(const ag::Var& x1, const ag::Var& x2, Grad mode) const {
    auto p = [&](const std::string& n) { return mode == Grad::track ? disc.at(n) : ag::detach(disc.at(n)); };
    const ag::Var feats[5] = {x1, x2, ag::mul(x1, x1), ag::mul(x2, x2), ag::mul(x1, x2)};
    ag::Var logit = ag::mul_bcast(feats[0], p("w0"));
    for (int i = 1; i < 5; ++i) logit = ag::add(logit, ag::mul_bcast(feats[i], p("w" + std::to_string(i))));
    return ag::sigmoid(ag::add_bcast(logit, p("bias")));
  }

 private:
  static ag::Var affine(const ParameterSet& ps, const ag::Var& x, Grad mode) {
    auto a = mode == Grad::track ? ps.at("a") : ag::detach(ps.at("a"));
    auto b = mode == Grad::track ? ps.at("b") : ag::detach(ps.at("b"));
    return ag::add_bcast(ag::mul_bcast(x, a), b);
  }
};

struct Draws {
  std::vector<double> c;
  std::vector<double> d;
};

inline Draws draw(Rng& rng, int n, const ToyAlignmentConfig& cfg) {
  Draws out;
  for (int i = 0; i < n; ++i) out.c.push_back(rng.normal(0.0, 1.0));
  for (int i = 0; i < n; ++i) out.d.push_back(rng.normal(cfg.mu, cfg.sigma));
  return out;
}

/// Fraction of held-out pairs J_D labels correctly (ATANet branch = 1).
inline double accuracy(const Game& g, const Draws& held) {
  auto c = column(held.c);
  auto d = column(held.d);
  auto sT = g.score(c, g.generate_T(c, Grad::frozen), Grad::frozen);
  auto sF = g.score(g.generate_F(d, Grad::frozen), d, Grad::frozen);
  std::size_t correct = 0;
  for (double s : sT->value.data()) correct += s > 0.5;
  for (double s : sF->value.data()) correct += s <= 0.5;
  return static_cast<double>(correct) / static_cast<double>(sT->value.numel() + sF->value.numel());
}

inline double scalar(const ParameterSet& ps, const std::string& n) { return ps.at(n)->value.item(); }

}  // namespace toy

inline ToyAlignmentResult run_toy_alignment(std::uint64_t seed, const ToyAlignmentConfig& cfg = {}) {
  Rng rng(seed);
  toy::Game g;
  g.gen_T.add("a", Tensor::scalar(cfg.init_a_T));
  g.gen_T.add("b", Tensor::scalar(cfg.init_b_T));
  g.gen_F.add("a", Tensor::scalar(cfg.init_a_F));
  g.gen_F.add("b", Tensor::scalar(cfg.init_b_F));
  for (int i = 0; i < 5; ++i) g.disc.add("w" + std::to_string(i), Tensor::scalar(rng.normal(0.0, 0.01)));
  g.disc.add("bias", Tensor::scalar(0.0));

  Adam opt_d(AdamConfig{cfg.lr_discriminator, 0.5, 0.999});
  Adam opt_T(AdamConfig{cfg.lr_generator, 0.5, 0.999});
  Adam opt_F(AdamConfig{cfg.lr_generator, 0.5, 0.999});
  const toy::Draws held = toy::draw(rng, cfg.heldout, cfg);

  auto disc_step = [&](const toy::Draws& b) {
    auto c = toy::column(b.c);
    auto d = toy::column(b.d);
    auto sT = g.score(c, g.generate_T(c, Grad::frozen), Grad::track);
    auto sF = g.score(g.generate_F(d, Grad::frozen), d, Grad::track);
    detail::update(g.disc, opt_d, coupling_signal(cfg.mode, sT, sF).discriminator);
  };

  ToyAlignmentResult r;
  for (; r.pretrain_steps < cfg.pretrain_max_steps; ++r.pretrain_steps) {
    if (r.pretrain_steps % cfg.eval_every == 0 && toy::accuracy(g, held) > cfg.pretrain_target) break;
    disc_step(toy::draw(rng, cfg.batch, cfg));
  }
  r.initial_accuracy = toy::accuracy(g, held);
  r.trace.emplace_back(0, r.initial_accuracy);

  for (r.steps = 0; r.steps < cfg.max_steps;) {
    const toy::Draws b = toy::draw(rng, cfg.batch, cfg);
    disc_step(b);

    auto c = toy::column(b.c);
    auto d = toy::column(b.d);
    auto sT = g.score(c, g.generate_T(c, Grad::track), Grad::frozen);
    auto sF = g.score(g.generate_F(d, Grad::track), d, Grad::frozen);
    CouplingLosses cl = coupling_signal(cfg.mode, sT, sF);
    g.gen_T.zero_grad();
    g.gen_F.zero_grad();
    ag::backward(ag::add(cl.generator_T, cl.generator_F));
    opt_T.step(g.gen_T);
    opt_F.step(g.gen_F);
    ++r.steps;

    if (r.steps % cfg.eval_every == 0) {
      const double acc = toy::accuracy(g, held);
      r.trace.emplace_back(r.steps, acc);
      if (acc < cfg.target_accuracy) {
        r.converged = true;
        break;
      }
    }
  }
  r.final_accuracy = r.trace.back().second;
  r.a_T = toy::scalar(g.gen_T, "a");
  r.b_T = toy::scalar(g.gen_T, "b");
  r.a_F = toy::scalar(g.gen_F, "a");
  r.b_F = toy::scalar(g.gen_F, "b");
  return r;
}

}  // namespace binlab
