#pragma once

// Shared helpers for the unit and acceptance suites: scratch directories,
// random fixtures, a finite-difference gradient checker and brute-force
// reference implementations written independently of the library.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "binlab/autograd.hpp"
#include "binlab/image.hpp"
#include "binlab/tensor.hpp"

namespace testing_support {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = fs::temp_directory_path() / ("binlab_" + tag + "_" + std::to_string(rng() % 1000000000ULL));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline binlab::Image random_image(int h, int w, std::mt19937_64& rng, int channels = 1) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(h) * w * channels);
  for (auto& x : v) x = u(rng);
  return binlab::Image(h, w, channels, std::move(v));
}

inline binlab::BinaryImage random_binary(int h, int w, std::mt19937_64& rng, double p_ink = 0.3) {
  std::bernoulli_distribution b(p_ink);
  std::vector<std::uint8_t> v(static_cast<std::size_t>(h) * w);
  for (auto& x : v) x = b(rng) ? 1 : 0;
  return binlab::BinaryImage(h, w, std::move(v));
}

inline binlab::Tensor random_tensor(binlab::Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  binlab::Tensor t(s);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = u(rng);
  return t;
}

// ---------------------------------------------------------------------------
// Finite differences

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Compares backward() against central differences on up to `per_leaf`
/// randomly chosen coordinates of every leaf. Relative error is
/// |a - n| / max(|a|, |n|, floor).
inline GradCheck grad_check(const std::function<binlab::ag::Var()>& loss, const std::vector<binlab::ag::Var>& leaves,
                            std::mt19937_64& rng, std::size_t per_leaf = 6, double h = 1e-6, double floor = 1e-6) {
  for (const auto& l : leaves) l->zero_grad();
  binlab::ag::backward(loss());
  GradCheck out;
  for (const auto& leaf : leaves) {
    const std::size_t n = leaf->value.numel();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(n, per_leaf));
    for (std::size_t i : idx) {
      const double analytic = leaf->grad.empty() ? 0.0 : leaf->grad[i];
      const double orig = leaf->value[i];
      leaf->value[i] = orig + h;
      const double up = loss()->value.item();
      leaf->value[i] = orig - h;
      const double down = loss()->value.item();
      leaf->value[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      out.max_rel_error = std::max(out.max_rel_error, std::abs(analytic - numeric) / denom);
      ++out.checked;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reference implementations

namespace oracle {

inline double f_measure(const binlab::BinaryImage& p, const binlab::BinaryImage& g) {
  double tp = 0, fp = 0, fn = 0;
  for (int r = 0; r < g.height(); ++r)
    for (int c = 0; c < g.width(); ++c) {
      const bool pi = p(r, c) == 1, gi = g(r, c) == 1;
      tp += pi && gi;
      fp += pi && !gi;
      fn += !pi && gi;
    }
  if (tp == 0) return 0.0;
  const double prec = tp / (tp + fp);
  const double rec = tp / (tp + fn);
  return 200.0 * prec * rec / (prec + rec);
}

inline double psnr(const binlab::BinaryImage& p, const binlab::BinaryImage& g) {
  double se = 0;
  for (int r = 0; r < g.height(); ++r)
    for (int c = 0; c < g.width(); ++c) {
      const double d = double(p(r, c)) - double(g(r, c));
      se += d * d;
    }
  const double mse = se / (double(g.height()) * g.width());
  if (mse == 0.0) return 100.0;
  return std::min(100.0, -10.0 * std::log10(mse));
}

/// DRD with the 5x5 reciprocal-distance matrix built from Euclidean distance
/// to the centre; neighbours outside the image contribute nothing.
inline double drd(const binlab::BinaryImage& p, const binlab::BinaryImage& g) {
  double wm[5][5];
  double total = 0;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      const double d = std::hypot(i - 2.0, j - 2.0);
      wm[i][j] = d == 0 ? 0.0 : 1.0 / d;
      total += wm[i][j];
    }
  double sum = 0;
  int flips = 0;
  for (int r = 0; r < g.height(); ++r)
    for (int c = 0; c < g.width(); ++c) {
      if (p(r, c) == g(r, c)) continue;
      ++flips;
      double dk = 0;
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) {
          const int y = r + i - 2, x = c + j - 2;
          if (y < 0 || x < 0 || y >= g.height() || x >= g.width()) continue;
          dk += (g(y, x) != p(r, c) ? 1.0 : 0.0) * wm[i][j] / total;
        }
      sum += dk;
    }
  if (flips == 0) return 0.0;
  int nubn = 0;
  for (int by = 0; by * 8 < g.height(); ++by)
    for (int bx = 0; bx * 8 < g.width(); ++bx) {
      int ink = 0, cells = 0;
      for (int y = by * 8; y < std::min(g.height(), by * 8 + 8); ++y)
        for (int x = bx * 8; x < std::min(g.width(), bx * 8 + 8); ++x) {
          ink += g(y, x);
          ++cells;
        }
      nubn += (ink != 0 && ink != cells);
    }
  return sum / std::max(nubn, 1);
}

/// Exhaustive Otsu: for every split t of the 256 levels, class statistics are
/// recomputed from scratch. Returns the smallest maximizing t.
inline int otsu_split(const binlab::Image& img) {
  std::vector<int> level(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) level[i] = int(std::floor(img.data()[i] * 255.0 + 0.5));
  int best_t = -1;
  double best = -1;
  for (int t = 1; t < 256; ++t) {
    double n0 = 0, n1 = 0, s0 = 0, s1 = 0;
    for (int v : level) (v < t ? (n0 += 1, s0 += v) : (n1 += 1, s1 += v));
    if (n0 == 0 || n1 == 0) continue;
    const double n = n0 + n1;
    const double m0 = s0 / n0, m1 = s1 / n1;
    const double var = (n0 / n) * (n1 / n) * (m0 - m1) * (m0 - m1);
    if (var > best * (1 + 1e-12) + 1e-300) {
      best = var;
      best_t = t;
    }
  }
  return best_t;
}

/// Window mean and population std at (r, c) with edge replication, by direct summation.
inline std::pair<double, double> local_stats(const binlab::Image& img, int r, int c, int window) {
  const int half = window / 2;
  double s = 0, n = 0;
  for (int i = -half; i <= half; ++i)
    for (int j = -half; j <= half; ++j) {
      s += img(std::clamp(r + i, 0, img.height() - 1), std::clamp(c + j, 0, img.width() - 1));
      n += 1;
    }
  const double m = s / n;
  double v = 0;
  for (int i = -half; i <= half; ++i)
    for (int j = -half; j <= half; ++j) {
      const double d = img(std::clamp(r + i, 0, img.height() - 1), std::clamp(c + j, 0, img.width() - 1)) - m;
      v += d * d;
    }
  return {m, std::sqrt(v / n)};
}

/// G_ij = sum_k F_ik F_jk for one sample of a (1, C, H, W) tensor.
inline std::vector<std::vector<double>> gram(const binlab::Tensor& f, int n = 0) {
  const int C = f.shape().c, H = f.shape().h, W = f.shape().w;
  std::vector<std::vector<double>> g(C, std::vector<double>(C, 0.0));
  for (int i = 0; i < C; ++i)
    for (int j = 0; j < C; ++j)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) g[i][j] += f.at(n, i, y, x) * f.at(n, j, y, x);
  return g;
}

/// Smallest eigenvalue of a symmetric matrix by cyclic Jacobi rotations.
inline double min_eigenvalue(std::vector<std::vector<double>> a) {
  const int n = int(a.size());
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-24) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2 * a[p][q]);
        const double t = (theta >= 0 ? 1 : -1) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
      }
  }
  double m = a[0][0];
  for (int i = 1; i < n; ++i) m = std::min(m, a[i][i]);
  return m;
}

}  // namespace oracle
}  // namespace testing_support
