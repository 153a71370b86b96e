#pragma once

// Minimal reverse-mode automatic differentiation over NCHW tensors.
//
// Every op returns a new node holding its value and, when any input requires
// gradients, a closure that pushes the node's gradient back to its inputs.
// Leaf gradients accumulate across backward() calls until zero_grad().

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "binlab/error.hpp"
#include "binlab/tensor.hpp"

namespace binlab::ag {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad() {
    if (grad.empty()) grad = Tensor(value.shape());
    return grad;
  }
  void zero_grad() {
    if (!grad.empty()) grad.fill(0.0);
  }
};

using Var = std::shared_ptr<Node>;

inline Var leaf(Tensor value, bool requires_grad = false) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

inline Var constant(Tensor value) { return leaf(std::move(value), false); }

inline Var detach(const Var& v) { return constant(v->value); }

namespace detail {

inline Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v->requires_grad; });
  if (n->requires_grad) {
    n->inputs = std::move(inputs);
    n->backward_fn = std::move(backward_fn);
  }
  return n;
}

inline void check_same(const Var& a, const Var& b, const char* op) {
  if (!(a->value.shape() == b->value.shape()))
    throw ArgumentError(std::string(op) + ": shape mismatch " + a->value.shape().str() + " vs " +
                        b->value.shape().str());
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace detail

/// Runs reverse accumulation from a scalar root.
inline void backward(const Var& root) {
  if (root->value.numel() != 1) throw ArgumentError("backward: root must be a scalar");
  if (!root->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise and reductions

inline Var add(const Var& a, const Var& b) {
  detail::check_same(a, b, "add");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
  return detail::make_op(std::move(out), {a, b}, [](Node& self) {
    for (auto& in : self.inputs)
      if (in->requires_grad) {
        auto& g = in->ensure_grad();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
      }
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::check_same(a, b, "sub");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
  return detail::make_op(std::move(out), {a, b}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      auto& in = self.inputs[k];
      if (!in->requires_grad) continue;
      const double sign = k == 0 ? 1.0 : -1.0;
      auto& g = in->ensure_grad();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::check_same(a, b, "mul");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
  return detail::make_op(std::move(out), {a, b}, [](Node& self) {
    auto& a = self.inputs[0];
    auto& b = self.inputs[1];
    if (a->requires_grad) {
      auto& g = a->ensure_grad();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * b->value[i];
    }
    if (b->requires_grad) {
      auto& g = b->ensure_grad();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * a->value[i];
    }
  });
}

inline Var scale(const Var& a, double s) {
  Tensor out = a->value;
  for (auto& v : out.vec()) v *= s;
  return detail::make_op(std::move(out), {a}, [s](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += s * self.grad[i];
  });
}

inline Var add_scalar(const Var& a, double s) {
  Tensor out = a->value;
  for (auto& v : out.vec()) v += s;
  return detail::make_op(std::move(out), {a}, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
  });
}

/// x * s where s holds a single element.
inline Var mul_bcast(const Var& x, const Var& s) {
  if (s->value.numel() != 1) throw ArgumentError("mul_bcast: multiplier must be a single element");
  const double sv = s->value[0];
  Tensor out = x->value;
  for (auto& v : out.vec()) v *= sv;
  return detail::make_op(std::move(out), {x, s}, [](Node& self) {
    auto& x = self.inputs[0];
    auto& s = self.inputs[1];
    if (x->requires_grad) {
      auto& g = x->ensure_grad();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * s->value[0];
    }
    if (s->requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.numel(); ++i) acc += self.grad[i] * x->value[i];
      s->ensure_grad()[0] += acc;
    }
  });
}

/// x + s where s holds a single element.
inline Var add_bcast(const Var& x, const Var& s) {
  if (s->value.numel() != 1) throw ArgumentError("add_bcast: addend must be a single element");
  const double sv = s->value[0];
  Tensor out = x->value;
  for (auto& v : out.vec()) v += sv;
  return detail::make_op(std::move(out), {x, s}, [](Node& self) {
    auto& x = self.inputs[0];
    auto& s = self.inputs[1];
    if (x->requires_grad) {
      auto& g = x->ensure_grad();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (s->requires_grad) {
      double acc = 0.0;
      for (double v : self.grad.data()) acc += v;
      s->ensure_grad()[0] += acc;
    }
  });
}

inline Var square(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.vec()) v *= v;
  return detail::make_op(std::move(out), {a}, [](Node& self) {
    auto& a = self.inputs[0];
    auto& g = a->ensure_grad();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += 2.0 * a->value[i] * self.grad[i];
  });
}

inline Var sum(const Var& a) {
  double acc = 0.0;
  for (double v : a->value.data()) acc += v;
  return detail::make_op(Tensor::scalar(acc), {a}, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    const double d = self.grad[0];
    for (auto& v : g.vec()) v += d;
  });
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a->value.numel())); }

inline Var sum_squares(const Var& a) {
  double acc = 0.0;
  for (double v : a->value.data()) acc += v * v;
  return detail::make_op(Tensor::scalar(acc), {a}, [](Node& self) {
    auto& a = self.inputs[0];
    auto& g = a->ensure_grad();
    const double d = 2.0 * self.grad[0];
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += d * a->value[i];
  });
}

/// Mean squared difference, reduced over every element.
inline Var mse(const Var& a, const Var& b) {
  detail::check_same(a, b, "mse");
  const std::size_t n = a->value.numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a->value[i] - b->value[i];
    acc += d * d;
  }
  return detail::make_op(Tensor::scalar(acc / n), {a, b}, [n](Node& self) {
    auto& a = self.inputs[0];
    auto& b = self.inputs[1];
    const double k = 2.0 * self.grad[0] / static_cast<double>(n);
    if (a->requires_grad) {
      auto& g = a->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += k * (a->value[i] - b->value[i]);
    }
    if (b->requires_grad) {
      auto& g = b->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] -= k * (a->value[i] - b->value[i]);
    }
  });
}

inline constexpr double kProbClamp = 1e-7;

/// Mean binary cross-entropy of probabilities against a constant target
/// in [0,1]. Probabilities are clamped to [1e-7, 1 - 1e-7]; the gradient is
/// zero where the clamp is active.
inline Var bce(const Var& p, double target) {
  const std::size_t n = p->value.numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = std::clamp(p->value[i], kProbClamp, 1.0 - kProbClamp);
    acc -= target * std::log(s) + (1.0 - target) * std::log(1.0 - s);
  }
  return detail::make_op(Tensor::scalar(acc / n), {p}, [n, target](Node& self) {
    auto& p = self.inputs[0];
    auto& g = p->ensure_grad();
    const double k = self.grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double s = p->value[i];
      if (s < kProbClamp || s > 1.0 - kProbClamp) continue;
      g[i] += k * (-(target / s) + (1.0 - target) / (1.0 - s));
    }
  });
}

/// Identity forward; multiplies the incoming gradient by -factor.
inline Var grad_reverse(const Var& a, double factor = 1.0) {
  return detail::make_op(a->value, {a}, [factor](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= factor * self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Activations

inline Var leaky_relu(const Var& x, double slope) {
  Tensor out = x->value;
  for (auto& v : out.vec()) v = v > 0.0 ? v : slope * v;
  return detail::make_op(std::move(out), {x}, [slope](Node& self) {
    auto& x = self.inputs[0];
    auto& g = x->ensure_grad();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * (x->value[i] > 0.0 ? 1.0 : slope);
  });
}

inline Var relu(const Var& x) { return leaky_relu(x, 0.0); }

inline Var sigmoid(const Var& x) {
  Tensor out = x->value;
  for (auto& v : out.vec()) v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  return detail::make_op(std::move(out), {x}, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double y = self.value[i];
      g[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

// ---------------------------------------------------------------------------
// Spatial ops

/// 2-D convolution with square kernels and replicate padding.
/// x: (N, Cin, H, W), weight: (Cout, Cin, k, k), bias: (1, Cout, 1, 1).
inline Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  const Shape xs = x->value.shape();
  const Shape ws = weight->value.shape();
  if (ws.c != xs.c) throw ArgumentError("conv2d: input has " + std::to_string(xs.c) + " channels, weight expects " + std::to_string(ws.c));
  if (ws.h != ws.w) throw ArgumentError("conv2d: kernel must be square");
  if (bias->value.numel() != static_cast<std::size_t>(ws.n)) throw ArgumentError("conv2d: bias size mismatch");
  const int k = ws.h;
  const int ho = (xs.h + 2 * pad - k) / stride + 1;
  const int wo = (xs.w + 2 * pad - k) / stride + 1;
  if (ho < 1 || wo < 1) throw ArgumentError("conv2d: input " + xs.str() + " too small for kernel");
  const int kdim = xs.c * k * k;
  const int cols = ho * wo;
  const int cout = ws.n;

  // Source offset (within one sample) for every im2col entry.
  auto index = std::make_shared<std::vector<int>>(static_cast<std::size_t>(kdim) * cols);
  for (int ci = 0; ci < xs.c; ++ci)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        const int row = (ci * k + ki) * k + kj;
        for (int oh = 0; oh < ho; ++oh) {
          const int sr = std::clamp(oh * stride - pad + ki, 0, xs.h - 1);
          for (int ow = 0; ow < wo; ++ow) {
            const int sc = std::clamp(ow * stride - pad + kj, 0, xs.w - 1);
            (*index)[static_cast<std::size_t>(row) * cols + oh * wo + ow] = (ci * xs.h + sr) * xs.w + sc;
          }
        }
      }

  const std::size_t in_stride = static_cast<std::size_t>(xs.c) * xs.h * xs.w;
  const std::size_t out_stride = static_cast<std::size_t>(cout) * cols;
  Tensor out(Shape{xs.n, cout, ho, wo});
  detail::RowMat col(kdim, cols);
  Eigen::Map<const detail::RowMat> wm(weight->value.ptr(), cout, kdim);
  Eigen::Map<const Eigen::VectorXd> bv(bias->value.ptr(), cout);
  for (int n = 0; n < xs.n; ++n) {
    const double* src = x->value.ptr() + n * in_stride;
    double* cp = col.data();
    for (std::size_t i = 0; i < index->size(); ++i) cp[i] = src[(*index)[i]];
    Eigen::Map<detail::RowMat> om(out.ptr() + n * out_stride, cout, cols);
    om.noalias() = wm * col;
    om.colwise() += bv;
  }

  return detail::make_op(std::move(out), {x, weight, bias},
                         [index, kdim, cols, cout, in_stride, out_stride](Node& self) {
    auto& x = self.inputs[0];
    auto& weight = self.inputs[1];
    auto& bias = self.inputs[2];
    const int batch = x->value.shape().n;
    Eigen::Map<const detail::RowMat> wm(weight->value.ptr(), cout, kdim);
    detail::RowMat col(kdim, cols);
    detail::RowMat dcol(kdim, cols);
    for (int n = 0; n < batch; ++n) {
      Eigen::Map<const detail::RowMat> dout(self.grad.ptr() + n * out_stride, cout, cols);
      if (bias->requires_grad) {
        Eigen::Map<Eigen::VectorXd> db(bias->ensure_grad().ptr(), cout);
        db += dout.rowwise().sum();
      }
      if (weight->requires_grad) {
        const double* src = x->value.ptr() + n * in_stride;
        double* cp = col.data();
        for (std::size_t i = 0; i < index->size(); ++i) cp[i] = src[(*index)[i]];
        Eigen::Map<detail::RowMat> dw(weight->ensure_grad().ptr(), cout, kdim);
        dw.noalias() += dout * col.transpose();
      }
      if (x->requires_grad) {
        dcol.noalias() = wm.transpose() * dout;
        double* dx = x->ensure_grad().ptr() + n * in_stride;
        const double* dp = dcol.data();
        for (std::size_t i = 0; i < index->size(); ++i) dx[(*index)[i]] += dp[i];
      }
    }
  });
}

/// Nearest-neighbour 2x upsampling.
inline Var upsample2x(const Var& x) {
  const Shape s = x->value.shape();
  Tensor out(Shape{s.n, s.c, 2 * s.h, 2 * s.w});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int r = 0; r < 2 * s.h; ++r)
        for (int q = 0; q < 2 * s.w; ++q) out.at(n, c, r, q) = x->value.at(n, c, r / 2, q / 2);
  return detail::make_op(std::move(out), {x}, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    const Shape s = self.grad.shape();
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        for (int r = 0; r < s.h; ++r)
          for (int q = 0; q < s.w; ++q) g.at(n, c, r / 2, q / 2) += self.grad.at(n, c, r, q);
  });
}

/// Per-sample, per-channel normalization to zero mean and unit variance.
inline Var instance_norm(const Var& x, double eps = 1e-5) {
  const Shape s = x->value.shape();
  const std::size_t plane = s.plane();
  const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  Tensor out(s);
  auto inv_std = std::make_shared<std::vector<double>>(planes);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = x->value.ptr() + p * plane;
    double mu = 0.0;
    for (std::size_t i = 0; i < plane; ++i) mu += src[i];
    mu /= plane;
    double var = 0.0;
    for (std::size_t i = 0; i < plane; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= plane;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[p] = is;
    double* dst = out.ptr() + p * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = (src[i] - mu) * is;
  }
  return detail::make_op(std::move(out), {x}, [inv_std, plane, planes](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t p = 0; p < planes; ++p) {
      const double* dy = self.grad.ptr() + p * plane;
      const double* y = self.value.ptr() + p * plane;
      double mdy = 0.0;
      double mdyy = 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        mdy += dy[i];
        mdyy += dy[i] * y[i];
      }
      mdy /= plane;
      mdyy /= plane;
      double* dx = g.ptr() + p * plane;
      const double is = (*inv_std)[p];
      for (std::size_t i = 0; i < plane; ++i) dx[i] += is * (dy[i] - mdy - y[i] * mdyy);
    }
  });
}

/// Channel-wise concatenation of two tensors with equal N, H, W.
inline Var concat_channels(const Var& a, const Var& b) {
  const Shape sa = a->value.shape();
  const Shape sb = b->value.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
    throw ArgumentError("concat_channels: shape mismatch " + sa.str() + " vs " + sb.str());
  const std::size_t pa = static_cast<std::size_t>(sa.c) * sa.plane();
  const std::size_t pb = static_cast<std::size_t>(sb.c) * sb.plane();
  Tensor out(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  for (int n = 0; n < sa.n; ++n) {
    std::copy_n(a->value.ptr() + n * pa, pa, out.ptr() + n * (pa + pb));
    std::copy_n(b->value.ptr() + n * pb, pb, out.ptr() + n * (pa + pb) + pa);
  }
  return detail::make_op(std::move(out), {a, b}, [pa, pb](Node& self) {
    const int batch = self.value.shape().n;
    for (int k = 0; k < 2; ++k) {
      auto& in = self.inputs[k];
      if (!in->requires_grad) continue;
      const std::size_t len = k == 0 ? pa : pb;
      const std::size_t off = k == 0 ? 0 : pa;
      auto& g = in->ensure_grad();
      for (int n = 0; n < batch; ++n)
        for (std::size_t i = 0; i < len; ++i) g[n * len + i] += self.grad[n * (pa + pb) + off + i];
    }
  });
}

/// Per-sample Gram matrix of channel activations: (N, C, H, W) -> (N, 1, C, C),
/// G_ij = sum_k F_ik F_jk over the H*W positions.
inline Var gram(const Var& x) {
  const Shape s = x->value.shape();
  const int c = s.c;
  const auto m = static_cast<Eigen::Index>(s.plane());
  Tensor out(Shape{s.n, 1, c, c});
  for (int n = 0; n < s.n; ++n) {
    Eigen::Map<const detail::RowMat> f(x->value.ptr() + n * c * m, c, m);
    Eigen::Map<detail::RowMat> g(out.ptr() + static_cast<std::size_t>(n) * c * c, c, c);
    g.noalias() = f * f.transpose();
    // GEMM blocking can round (i, j) and (j, i) differently; mirror the upper triangle.
    g.template triangularView<Eigen::StrictlyLower>() = g.transpose();
  }
  return detail::make_op(std::move(out), {x}, [c, m](Node& self) {
    auto& x = self.inputs[0];
    auto& gx = x->ensure_grad();
    const int batch = x->value.shape().n;
    for (int n = 0; n < batch; ++n) {
      Eigen::Map<const detail::RowMat> f(x->value.ptr() + n * c * m, c, m);
      Eigen::Map<const detail::RowMat> dg(self.grad.ptr() + static_cast<std::size_t>(n) * c * c, c, c);
      Eigen::Map<detail::RowMat> df(gx.ptr() + n * c * m, c, m);
      df.noalias() += (dg + dg.transpose()) * f;
    }
  });
}

}  // namespace binlab::ag
