#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "binlab/error.hpp"
#include "binlab/image.hpp"

namespace binlab {

inline constexpr int kHistogramBins = 256;

/// Histogram bin of an intensity: nearest 8-bit level.
inline int intensity_bin(double v) {
  return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * (kHistogramBins - 1)));
}

struct OtsuResult {
  double threshold = 0.0;  // ink where intensity < threshold
  BinaryImage binary;
};

/// Global Otsu threshold. Candidate split t puts bins [0, t) in the dark
/// class; the returned intensity (t - 0.5) / 255 separates the two classes
/// exactly. Near-equal variances (relative 1e-12) resolve to the smallest t.
inline OtsuResult otsu(const Image& img) {
  if (img.channels() != 1) throw ArgumentError("otsu: expects a single-channel image");
  std::array<double, kHistogramBins> hist{};
  for (double v : img.data()) hist[intensity_bin(v)] += 1.0;

  const double total = static_cast<double>(img.size());
  double sum_all = 0.0;
  for (int b = 0; b < kHistogramBins; ++b) sum_all += b * hist[b];

  double best_var = -1.0;
  int best_t = -1;
  double n0 = 0.0;
  double s0 = 0.0;
  for (int t = 1; t < kHistogramBins; ++t) {
    n0 += hist[t - 1];
    s0 += (t - 1) * hist[t - 1];
    const double n1 = total - n0;
    if (n0 == 0.0 || n1 == 0.0) continue;
    const double mu0 = s0 / n0;
    const double mu1 = (sum_all - s0) / n1;
    const double var = (n0 / total) * (n1 / total) * (mu0 - mu1) * (mu0 - mu1);
    if (var > best_var * (1.0 + 1e-12) + 1e-300) {
      best_var = var;
      best_t = t;
    }
  }

  OtsuResult result;
  if (best_t < 0) {
    // Single occupied bin: no ink evidence.
    result.threshold = img.data()[0];
    result.binary = BinaryImage(img.height(), img.width(), 0);
    return result;
  }
  result.threshold = (best_t - 0.5) / (kHistogramBins - 1);
  result.binary = BinaryImage(img.height(), img.width());
  auto src = img.data();
  auto dst = result.binary.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] < result.threshold ? 1 : 0;
  return result;
}

struct SauvolaParams {
  int window = 25;
  double k = 0.2;
  double dynamic_range = 0.5;  // R, on [0,1] intensities

  void validate() const {
    if (window < 3 || window % 2 == 0) throw ArgumentError("sauvola: window must be odd and >= 3");
    if (!(k > 0.0)) throw ArgumentError("sauvola: k must be positive");
    if (!(dynamic_range > 0.0)) throw ArgumentError("sauvola: R must be positive");
  }
};

struct LocalStats {
  int height = 0;
  int width = 0;
  std::vector<double> mean;
  std::vector<double> stddev;
};

/// Window mean and population standard deviation at every pixel, borders
/// handled by edge replication. Uses summed-area tables over the padded image.
inline LocalStats local_mean_std(const Image& img, int window) {
  if (img.channels() != 1) throw ArgumentError("local_mean_std: expects a single-channel image");
  if (window < 1 || window % 2 == 0) throw ArgumentError("local_mean_std: window must be odd");
  const int h = img.height();
  const int w = img.width();
  const int half = window / 2;
  const int ph = h + 2 * half;
  const int pw = w + 2 * half;
  // Integral tables with a zero leading row/column.
  std::vector<double> sum(static_cast<std::size_t>(ph + 1) * (pw + 1), 0.0);
  std::vector<double> sq(sum.size(), 0.0);
  auto at = [pw](int r, int c) { return static_cast<std::size_t>(r) * (pw + 1) + c; };
  for (int r = 0; r < ph; ++r) {
    const int sr = std::clamp(r - half, 0, h - 1);
    double row_sum = 0.0;
    double row_sq = 0.0;
    for (int c = 0; c < pw; ++c) {
      const double v = img(sr, std::clamp(c - half, 0, w - 1));
      row_sum += v;
      row_sq += v * v;
      sum[at(r + 1, c + 1)] = sum[at(r, c + 1)] + row_sum;
      sq[at(r + 1, c + 1)] = sq[at(r, c + 1)] + row_sq;
    }
  }

  LocalStats stats{h, w, std::vector<double>(img.size()), std::vector<double>(img.size())};
  const double area = static_cast<double>(window) * window;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      // Padded window for output (r, c) spans rows [r, r + window), cols [c, c + window).
      const int r1 = r + window;
      const int c1 = c + window;
      const double s = sum[at(r1, c1)] - sum[at(r, c1)] - sum[at(r1, c)] + sum[at(r, c)];
      const double q = sq[at(r1, c1)] - sq[at(r, c1)] - sq[at(r1, c)] + sq[at(r, c)];
      const double m = s / area;
      const double var = std::max(0.0, q / area - m * m);
      const std::size_t i = static_cast<std::size_t>(r) * w + c;
      stats.mean[i] = m;
      stats.stddev[i] = std::sqrt(var);
    }
  return stats;
}

/// Sauvola local threshold T = m * (1 + k * (s / R - 1)); ink where pixel < T.
inline BinaryImage sauvola(const Image& img, const SauvolaParams& p = {}) {
  p.validate();
  if (img.channels() != 1) throw ArgumentError("sauvola: expects a single-channel image");
  LocalStats stats = local_mean_std(img, p.window);
  BinaryImage out(img.height(), img.width());
  auto src = img.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double t = stats.mean[i] * (1.0 + p.k * (stats.stddev[i] / p.dynamic_range - 1.0));
    dst[i] = src[i] < t ? 1 : 0;
  }
  return out;
}

}  // namespace binlab
