#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "binlab/autograd.hpp"
#include "binlab/error.hpp"
#include "binlab/image.hpp"
#include "binlab/tensor.hpp"

namespace binlab {

enum class Role {
  content_encoder,
  style_encoder,
  decoder,
  binarizer,
  patch_discriminator,
  joint_discriminator,
};

inline std::string to_string(Role r) {
  switch (r) {
    case Role::content_encoder: return "content_encoder";
    case Role::style_encoder: return "style_encoder";
    case Role::decoder: return "decoder";
    case Role::binarizer: return "binarizer";
    case Role::patch_discriminator: return "patch_discriminator";
    case Role::joint_discriminator: return "joint_discriminator";
  }
  return "unknown";
}

inline Role role_from_string(const std::string& s) {
  for (Role r : {Role::content_encoder, Role::style_encoder, Role::decoder, Role::binarizer,
                 Role::patch_discriminator, Role::joint_discriminator})
    if (to_string(r) == s) return r;
  throw ConfigError("unknown network role: " + s);
}

/// Architecture of one network. For a decoder, `input_channels` is the
/// channel count arriving at the bottleneck.
struct NetworkSpec {
  Role role = Role::binarizer;
  int base_channels = 32;
  int depth = 4;
  int input_channels = 1;

  void validate() const {
    if (base_channels < 1) throw ArgumentError("NetworkSpec: base_channels must be >= 1");
    if (depth < 1) throw ArgumentError("NetworkSpec: depth must be >= 1");
    if (input_channels < 1) throw ArgumentError("NetworkSpec: input_channels must be >= 1");
  }
  bool operator==(const NetworkSpec&) const = default;
};

// Number of style layers whose Gram matrices enter the style loss.
inline constexpr int kStyleLayers = 5;

/// Named learnable tensors keyed by layer path, e.g. "down1.weight".
class ParameterSet {
 public:
  void add(const std::string& name, Tensor value) {
    if (params_.count(name)) throw ArgumentError("ParameterSet: duplicate parameter " + name);
    params_.emplace(name, ag::leaf(std::move(value), true));
  }

  const ag::Var& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ArgumentError("ParameterSet: no parameter named " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t tensors() const { return params_.size(); }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : params_) n += v->value.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, v] : params_) v->zero_grad();
  }

  bool all_finite() const {
    for (const auto& [_, v] : params_)
      if (!v->value.all_finite()) return false;
    return true;
  }

  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& [name, v] : params_) {
      h = fnv1a(name.data(), name.size(), h);
      h = binlab::checksum(v->value, h);
    }
    return h;
  }

  /// Deep copy of the values (fresh leaves, no gradients).
  ParameterSet clone() const {
    ParameterSet out;
    for (const auto& [name, v] : params_) out.add(name, v->value);
    return out;
  }

 private:
  std::map<std::string, ag::Var> params_;
};

/// Whether a forward pass records gradients for the network's parameters.
enum class Grad { track, frozen };

/// Ordered activations of the style encoder's first five blocks; each entry is (N, C, H, W).
using FeatureStack = std::vector<ag::Var>;

namespace arch {

inline constexpr int kKernel = 3;
inline constexpr double kLeak = 0.2;

struct ConvShape {
  std::string name;
  int in = 0;
  int out = 0;
};

inline std::size_t conv_params(int in, int out) {
  return static_cast<std::size_t>(out) * in * kKernel * kKernel + out;
}

inline int level_channels(int base, int level) { return base << level; }

inline std::vector<ConvShape> encoder_convs(int base, int depth, int in, int levels) {
  std::vector<ConvShape> convs{{"stem", in, base}};
  for (int i = 1; i <= levels; ++i)
    convs.push_back({"down" + std::to_string(i), level_channels(base, std::min(i - 1, depth)),
                     level_channels(base, std::min(i, depth))});
  return convs;
}

inline int style_levels(int depth) { return std::max(depth, kStyleLayers - 1); }

inline std::vector<ConvShape> decoder_convs(int base, int depth, int bottleneck) {
  std::vector<ConvShape> convs;
  int in = bottleneck;
  for (int i = depth; i >= 1; --i) {
    const int out = level_channels(base, i - 1);
    convs.push_back({"up" + std::to_string(i) + ".conv", in, out});
    convs.push_back({"up" + std::to_string(i) + ".fuse", 2 * out, out});
    in = out;
  }
  convs.push_back({"out", base, 1});
  return convs;
}

inline std::vector<ConvShape> discriminator_convs(int base, int depth, int in) {
  std::vector<ConvShape> convs;
  for (int i = 1; i <= depth; ++i) {
    const int out = level_channels(base, i - 1);
    convs.push_back({"layer" + std::to_string(i), in, out});
    in = out;
  }
  convs.push_back({"out", in, 1});
  return convs;
}

inline std::vector<ConvShape> convs_for(const NetworkSpec& s) {
  switch (s.role) {
    case Role::content_encoder: return encoder_convs(s.base_channels, s.depth, s.input_channels, s.depth);
    case Role::style_encoder:
      return encoder_convs(s.base_channels, s.depth, s.input_channels, style_levels(s.depth));
    case Role::decoder: return decoder_convs(s.base_channels, s.depth, s.input_channels);
    case Role::binarizer: {
      auto convs = encoder_convs(s.base_channels, s.depth, s.input_channels, s.depth);
      for (auto& c : convs) c.name = "enc." + c.name;
      for (auto c : decoder_convs(s.base_channels, s.depth, level_channels(s.base_channels, s.depth))) {
        c.name = "dec." + c.name;
        convs.push_back(c);
      }
      return convs;
    }
    case Role::patch_discriminator:
    case Role::joint_discriminator: return discriminator_convs(s.base_channels, s.depth, s.input_channels);
  }
  return {};
}

}  // namespace arch

/// Parameter count computed from the NetworkSpec alone.
inline std::size_t parameter_count(const NetworkSpec& spec) {
  spec.validate();
  const int b = spec.base_channels;
  const int d = spec.depth;
  const int in = spec.input_channels;
  std::size_t n = 0;
  auto encoder = [&](int levels) {
    std::size_t m = arch::conv_params(in, b);
    for (int i = 1; i <= levels; ++i)
      m += arch::conv_params(b << std::min(i - 1, d), b << std::min(i, d));
    return m;
  };
  auto decoder = [&](int bottleneck) {
    std::size_t m = 0;
    int c = bottleneck;
    for (int i = d; i >= 1; --i) {
      const int out = b << (i - 1);
      m += arch::conv_params(c, out) + arch::conv_params(2 * out, out);
      c = out;
    }
    return m + arch::conv_params(b, 1);
  };
  switch (spec.role) {
    case Role::content_encoder: n = encoder(d); break;
    case Role::style_encoder: n = encoder(arch::style_levels(d)); break;
    case Role::decoder: n = decoder(in); break;
    case Role::binarizer: n = encoder(d) + decoder(b << d); break;
    case Role::patch_discriminator:
    case Role::joint_discriminator: {
      int c = in;
      for (int i = 1; i <= d; ++i) {
        n += arch::conv_params(c, b << (i - 1));
        c = b << (i - 1);
      }
      n += arch::conv_params(c, 1);
      break;
    }
  }
  return n;
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
inline void init_parameters(ParameterSet& ps, const NetworkSpec& spec, std::mt19937_64& rng,
                            const std::string& prefix = "") {
  spec.validate();
  for (const auto& c : arch::convs_for(spec)) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(c.in * arch::kKernel * arch::kKernel));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor w(Shape{c.out, c.in, arch::kKernel, arch::kKernel});
    for (auto& v : w.vec()) v = u(rng);
    Tensor bias(Shape{1, c.out, 1, 1});
    for (auto& v : bias.vec()) v = u(rng);
    ps.add(prefix + c.name + ".weight", std::move(w));
    ps.add(prefix + c.name + ".bias", std::move(bias));
  }
}

/// A single network: its architecture and weights.
struct Network {
  NetworkSpec spec;
  ParameterSet params;

  static Network create(const NetworkSpec& spec, std::mt19937_64& rng) {
    Network n{spec, {}};
    init_parameters(n.params, spec, rng);
    return n;
  }
};

/// ATANet generator T: content encoder, style encoder and a decoder whose
/// bottleneck receives both codes. Parameters are prefixed "content.",
/// "style." and "decoder.".
struct TextureGenerator {
  NetworkSpec content;
  NetworkSpec style;
  NetworkSpec decoder;
  ParameterSet params;

  static TextureGenerator create(int base_channels, int depth, std::mt19937_64& rng) {
    TextureGenerator t;
    t.content = {Role::content_encoder, base_channels, depth, 1};
    t.style = {Role::style_encoder, base_channels, depth, 1};
    t.decoder = {Role::decoder, base_channels, depth, 2 * (base_channels << depth)};
    init_parameters(t.params, t.content, rng, "content.");
    init_parameters(t.params, t.style, rng, "style.");
    init_parameters(t.params, t.decoder, rng, "decoder.");
    return t;
  }

  std::size_t expected_parameter_count() const {
    return parameter_count(content) + parameter_count(style) + parameter_count(decoder);
  }
};

namespace detail {

class Binder {
 public:
  Binder(const ParameterSet& ps, Grad mode, std::string prefix = "")
      : ps_(ps), mode_(mode), prefix_(std::move(prefix)) {}

  ag::Var get(const std::string& name) const {
    const auto& v = ps_.at(prefix_ + name);
    return mode_ == Grad::track ? v : ag::constant(v->value);
  }
  Binder sub(const std::string& p) const { return Binder(ps_, mode_, prefix_ + p); }

 private:
  const ParameterSet& ps_;
  Grad mode_;
  std::string prefix_;
};

inline ag::Var conv(const Binder& b, const std::string& name, const ag::Var& x, int stride) {
  return ag::conv2d(x, b.get(name + ".weight"), b.get(name + ".bias"), stride, arch::kKernel / 2);
}

inline void check_divisible(const Shape& s, int depth, const char* who) {
  const int f = 1 << depth;
  if (s.h % f != 0 || s.w % f != 0)
    throw ArgumentError(std::string(who) + ": spatial dims " + std::to_string(s.h) + "x" +
                        std::to_string(s.w) + " not divisible by " + std::to_string(f));
}

inline void check_channels(const Shape& s, int expected, const char* who) {
  if (s.c != expected)
    throw ArgumentError(std::string(who) + ": expected " + std::to_string(expected) + " input channels, got " +
                        std::to_string(s.c));
}

/// Encoder blocks: conv, instance norm, leaky ReLU. Returns each block output.
inline std::vector<ag::Var> encode(const Binder& b, const ag::Var& x, int depth, int levels) {
  std::vector<ag::Var> outs;
  auto h = ag::leaky_relu(ag::instance_norm(conv(b, "stem", x, 1)), arch::kLeak);
  outs.push_back(h);
  for (int i = 1; i <= levels; ++i) {
    const int stride = i <= depth ? 2 : 1;
    h = ag::leaky_relu(ag::instance_norm(conv(b, "down" + std::to_string(i), h, stride)), arch::kLeak);
    outs.push_back(h);
  }
  return outs;
}

/// Mirror of the content encoder. `skips[i]` is the encoder output at level i.
inline ag::Var decode(const Binder& b, ag::Var h, const std::vector<ag::Var>& skips, int depth) {
  for (int i = depth; i >= 1; --i) {
    const std::string p = "up" + std::to_string(i);
    h = ag::relu(ag::instance_norm(conv(b, p + ".conv", ag::upsample2x(h), 1)));
    h = ag::concat_channels(h, skips[i - 1]);
    h = ag::relu(ag::instance_norm(conv(b, p + ".fuse", h, 1)));
  }
  return ag::sigmoid(conv(b, "out", h, 1));
}

}  // namespace detail

struct AtanetOutput {
  ag::Var generated;       // G, (N, 1, H, W) in (0,1)
  FeatureStack style_ref;  // style features of D (no gradient)
  FeatureStack style_gen;  // style features of G (gradient reaches G only)
};

/// T(C, D). The style features used by the style loss are taken with the
/// style encoder's weights held constant so that loss cannot be lowered by
/// shrinking the encoder itself.
inline AtanetOutput atanet_forward(const TextureGenerator& t, const ag::Var& clean, const ag::Var& degraded,
                                   Grad mode = Grad::track) {
  const Shape cs = clean->value.shape();
  const Shape ds = degraded->value.shape();
  if (!(cs == ds)) throw ArgumentError("atanet_forward: clean " + cs.str() + " and degraded " + ds.str() + " differ");
  detail::check_channels(cs, 1, "atanet_forward");
  detail::check_divisible(cs, t.content.depth, "atanet_forward");
  const int depth = t.content.depth;

  detail::Binder root(t.params, mode);
  auto content = detail::encode(root.sub("content."), clean, depth, depth);
  auto style = detail::encode(root.sub("style."), degraded, depth, arch::style_levels(depth));
  auto bottleneck = ag::concat_channels(content.back(), style.back());
  auto g = detail::decode(root.sub("decoder."), bottleneck, content, depth);

  AtanetOutput out;
  out.generated = g;
  for (int l = 0; l < kStyleLayers; ++l) out.style_ref.push_back(ag::detach(style[l]));
  detail::Binder fixed(t.params, Grad::frozen, "style.");
  auto gen_feats = detail::encode(fixed, g, depth, arch::style_levels(depth));
  out.style_gen.assign(gen_feats.begin(), gen_feats.begin() + kStyleLayers);
  return out;
}

/// F(X): U-Net binarizer, output in (0,1) with dark = ink.
inline ag::Var udbnet_forward(const Network& f, const ag::Var& x, Grad mode = Grad::track) {
  if (f.spec.role != Role::binarizer) throw ArgumentError("udbnet_forward: network role is " + to_string(f.spec.role));
  detail::check_channels(x->value.shape(), f.spec.input_channels, "udbnet_forward");
  detail::check_divisible(x->value.shape(), f.spec.depth, "udbnet_forward");
  detail::Binder b(f.params, mode);
  auto enc = detail::encode(b.sub("enc."), x, f.spec.depth, f.spec.depth);
  return detail::decode(b.sub("dec."), enc.back(), enc, f.spec.depth);
}

namespace detail {

inline ag::Var discriminate(const Network& d, const ag::Var& x, Grad mode) {
  detail::check_channels(x->value.shape(), d.spec.input_channels, "discriminator");
  detail::check_divisible(x->value.shape(), d.spec.depth, "discriminator");
  Binder b(d.params, mode);
  ag::Var h = x;
  for (int i = 1; i <= d.spec.depth; ++i) {
    h = conv(b, "layer" + std::to_string(i), h, 2);
    if (i > 1) h = ag::instance_norm(h);
    h = ag::leaky_relu(h, arch::kLeak);
  }
  return ag::sigmoid(conv(b, "out", h, 1));
}

}  // namespace detail

/// Patch discriminator: grid of realness probabilities, (N, 1, H/2^depth, W/2^depth).
inline ag::Var disc_forward(const Network& d, const ag::Var& x, Grad mode = Grad::track) {
  if (d.spec.role != Role::patch_discriminator)
    throw ArgumentError("disc_forward: network role is " + to_string(d.spec.role));
  return detail::discriminate(d, x, mode);
}

/// Joint discriminator over a (clean-like, degraded-like) pair, concatenated in that channel order.
inline ag::Var joint_disc_forward(const Network& j, const ag::Var& clean_like, const ag::Var& degraded_like,
                                  Grad mode = Grad::track) {
  if (j.spec.role != Role::joint_discriminator)
    throw ArgumentError("joint_disc_forward: network role is " + to_string(j.spec.role));
  if (!(clean_like->value.shape() == degraded_like->value.shape()))
    throw ArgumentError("joint_disc_forward: pair shapes differ " + clean_like->value.shape().str() + " vs " +
                        degraded_like->value.shape().str());
  return detail::discriminate(j, ag::concat_channels(clean_like, degraded_like), mode);
}

// ---------------------------------------------------------------------------
// Image <-> tensor helpers

/// Stacks single-channel images of equal size into (N, 1, H, W).
inline Tensor stack_images(std::span<const Image> images) {
  if (images.empty()) throw ArgumentError("stack_images: no images");
  const int h = images[0].height();
  const int w = images[0].width();
  Tensor t(Shape{static_cast<int>(images.size()), 1, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& im = images[n];
    if (im.channels() != 1 || im.height() != h || im.width() != w)
      throw ArgumentError("stack_images: images must be single-channel with equal dims");
    std::copy(im.data().begin(), im.data().end(), t.ptr() + n * static_cast<std::size_t>(h) * w);
  }
  return t;
}

inline Image unstack_image(const Tensor& t, int n) {
  const Shape s = t.shape();
  if (s.c != 1) throw ArgumentError("unstack_image: expects a single-channel tensor");
  std::vector<double> data(t.ptr() + n * s.plane(), t.ptr() + (n + 1) * s.plane());
  for (auto& v : data) v = std::clamp(v, 0.0, 1.0);
  return Image(s.h, s.w, 1, std::move(data));
}

inline ag::Var image_var(const Image& img) {
  return ag::constant(stack_images(std::span<const Image>(&img, 1)));
}

/// Convenience overloads on single patches (evaluation mode).
inline Image atanet_forward(const TextureGenerator& t, const Image& clean, const Image& degraded) {
  return unstack_image(atanet_forward(t, image_var(clean), image_var(degraded), Grad::frozen).generated->value, 0);
}

inline Image udbnet_forward(const Network& f, const Image& x) {
  return unstack_image(udbnet_forward(f, image_var(x), Grad::frozen)->value, 0);
}

}  // namespace binlab
