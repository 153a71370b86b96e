#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "binlab/error.hpp"
#include "binlab/image.hpp"
#include "binlab/image_io.hpp"

namespace binlab {

namespace detail {

inline void check_dims(const BinaryImage& a, const BinaryImage& b, const char* who) {
  if (a.height() != b.height() || a.width() != b.width())
    throw ArgumentError(std::string(who) + ": dims mismatch " + std::to_string(a.height()) + "x" +
                        std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                        std::to_string(b.width()));
}

inline double harmonic_percent(double precision, double recall) {
  if (precision + recall <= 0.0) return 0.0;
  return 100.0 * 2.0 * precision * recall / (precision + recall);
}

}  // namespace detail

struct Confusion {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  double precision() const { return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp); }
  double recall() const { return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn); }
};

inline Confusion confusion(const BinaryImage& pred, const BinaryImage& gt) {
  detail::check_dims(pred, gt, "confusion");
  Confusion c;
  auto p = pred.data();
  auto g = gt.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] && g[i]) ++c.tp;
    else if (p[i]) ++c.fp;
    else if (g[i]) ++c.fn;
    else ++c.tn;
  }
  return c;
}

/// F-measure over ink pixels, in percent; 0 when undefined.
inline double f_measure(const BinaryImage& pred, const BinaryImage& gt) {
  const Confusion c = confusion(pred, gt);
  return detail::harmonic_percent(c.precision(), c.recall());
}

/// Zhang-Suen thinning on the 8-neighbourhood. Pixels outside the image count as background.
inline BinaryImage skeletonize(const BinaryImage& img) {
  BinaryImage cur = img;
  const int h = img.height();
  const int w = img.width();
  auto px = [&](int r, int c) -> int {
    return (r < 0 || c < 0 || r >= h || c >= w) ? 0 : cur(r, c);
  };
  std::vector<std::pair<int, int>> remove;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int pass = 0; pass < 2; ++pass) {
      remove.clear();
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
          if (!cur(r, c)) continue;
          // p2..p9 clockwise from north.
          const std::array<int, 8> n{px(r - 1, c), px(r - 1, c + 1), px(r, c + 1), px(r + 1, c + 1),
                                     px(r + 1, c), px(r + 1, c - 1), px(r, c - 1), px(r - 1, c - 1)};
          int b = 0;
          int a = 0;
          for (int i = 0; i < 8; ++i) {
            b += n[i];
            if (n[i] == 0 && n[(i + 1) % 8] == 1) ++a;
          }
          if (b < 2 || b > 6 || a != 1) continue;
          const int p2 = n[0], p4 = n[2], p6 = n[4], p8 = n[6];
          const bool ok = pass == 0 ? (p2 * p4 * p6 == 0 && p4 * p6 * p8 == 0)
                                    : (p2 * p4 * p8 == 0 && p2 * p6 * p8 == 0);
          if (ok) remove.emplace_back(r, c);
        }
      for (auto [r, c] : remove) cur(r, c) = 0;
      if (!remove.empty()) changed = true;
    }
  }
  return cur;
}

/// F-measure whose recall is measured against the skeleton of the ground-truth ink.
inline double pseudo_f_measure(const BinaryImage& pred, const BinaryImage& gt) {
  detail::check_dims(pred, gt, "pseudo_f_measure");
  const BinaryImage skel = skeletonize(gt);
  const Confusion c = confusion(pred, gt);
  std::size_t skel_hit = 0;
  std::size_t skel_total = 0;
  for (std::size_t i = 0; i < skel.size(); ++i) {
    if (!skel.data()[i]) continue;
    ++skel_total;
    if (pred.data()[i]) ++skel_hit;
  }
  const double pseudo_recall = skel_total == 0 ? 0.0 : static_cast<double>(skel_hit) / skel_total;
  return detail::harmonic_percent(c.precision(), pseudo_recall);
}

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) on [0,1] intensities, capped at 100 dB.
inline double psnr(const Image& pred, const Image& gt) {
  if (pred.height() != gt.height() || pred.width() != gt.width() || pred.channels() != gt.channels())
    throw ArgumentError("psnr: dims mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred.data()[i] - gt.data()[i];
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(pred.size());
  if (mse < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

inline double psnr(const BinaryImage& pred, const BinaryImage& gt) {
  detail::check_dims(pred, gt, "psnr");
  std::size_t diff = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) diff += pred.data()[i] != gt.data()[i];
  const double mse = static_cast<double>(diff) / static_cast<double>(pred.size());
  if (mse < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

inline constexpr int kDrdWindow = 5;
inline constexpr int kDrdBlock = 8;

/// Normalized reciprocal-distance weights, centre 0, summing to 1.
inline std::array<std::array<double, kDrdWindow>, kDrdWindow> drd_weights() {
  std::array<std::array<double, kDrdWindow>, kDrdWindow> w{};
  const int c = kDrdWindow / 2;
  double total = 0.0;
  for (int i = 0; i < kDrdWindow; ++i)
    for (int j = 0; j < kDrdWindow; ++j) {
      if (i == c && j == c) continue;
      w[i][j] = 1.0 / std::sqrt(static_cast<double>((i - c) * (i - c) + (j - c) * (j - c)));
      total += w[i][j];
    }
  for (auto& row : w)
    for (auto& v : row) v /= total;
  return w;
}

/// Number of 8x8 ground-truth blocks (edge blocks may be partial) holding both labels.
inline std::size_t non_uniform_blocks(const BinaryImage& gt) {
  std::size_t count = 0;
  for (int r0 = 0; r0 < gt.height(); r0 += kDrdBlock)
    for (int c0 = 0; c0 < gt.width(); c0 += kDrdBlock) {
      bool ink = false;
      bool bg = false;
      for (int r = r0; r < std::min(r0 + kDrdBlock, gt.height()); ++r)
        for (int c = c0; c < std::min(c0 + kDrdBlock, gt.width()); ++c) (gt(r, c) ? ink : bg) = true;
      if (ink && bg) ++count;
    }
  return count;
}

/// Distance-reciprocal distortion: sum over flipped pixels of the weighted
/// 5x5 disagreement with ground truth, divided by the non-uniform block count
/// (taken as 1 when the ground truth has no non-uniform block).
inline double drd(const BinaryImage& pred, const BinaryImage& gt) {
  detail::check_dims(pred, gt, "drd");
  static const auto w = drd_weights();
  const int half = kDrdWindow / 2;
  double total = 0.0;
  bool any_flip = false;
  for (int r = 0; r < gt.height(); ++r)
    for (int c = 0; c < gt.width(); ++c) {
      const int p = pred(r, c);
      if (p == gt(r, c)) continue;
      any_flip = true;
      for (int i = -half; i <= half; ++i)
        for (int j = -half; j <= half; ++j) {
          const int rr = r + i;
          const int cc = c + j;
          if (rr < 0 || cc < 0 || rr >= gt.height() || cc >= gt.width()) continue;
          total += std::abs(gt(rr, cc) - p) * w[i + half][j + half];
        }
    }
  if (!any_flip) return 0.0;
  const std::size_t nubn = std::max<std::size_t>(1, non_uniform_blocks(gt));
  return total / static_cast<double>(nubn);
}

struct ImageMetrics {
  std::string image;
  double f_measure = 0.0;
  double f_ps = 0.0;
  double psnr = 0.0;
  double drd = 0.0;
};

inline ImageMetrics evaluate_pair(const std::string& name, const BinaryImage& pred, const BinaryImage& gt) {
  return {name, f_measure(pred, gt), pseudo_f_measure(pred, gt), psnr(pred, gt), drd(pred, gt)};
}

struct MetricsReport {
  std::vector<ImageMetrics> images;
  ImageMetrics mean{"mean"};
  std::vector<std::string> missing;  // files without a counterpart
  std::vector<std::string> warnings;
};

inline ImageMetrics mean_metrics(const std::vector<ImageMetrics>& rows, std::string label = "mean") {
  ImageMetrics m{std::move(label)};
  if (rows.empty()) return m;
  for (const auto& r : rows) {
    m.f_measure += r.f_measure;
    m.f_ps += r.f_ps;
    m.psnr += r.psnr;
    m.drd += r.drd;
  }
  const double n = static_cast<double>(rows.size());
  m.f_measure /= n;
  m.f_ps /= n;
  m.psnr /= n;
  m.drd /= n;
  return m;
}

inline bool is_raster(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return ext == ".png" || ext == ".bmp" || ext == ".tif" || ext == ".tiff";
}

/// Raster files in a directory keyed by filename stem.
inline std::map<std::string, std::filesystem::path> rasters_by_stem(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ConfigError("not a directory: " + dir.string());
  std::map<std::string, std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && is_raster(entry.path())) out[entry.path().stem().string()] = entry.path();
  return out;
}

/// Scores every prediction against the ground truth of the same stem.
inline MetricsReport evaluate_dataset(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir) {
  const auto preds = rasters_by_stem(pred_dir);
  const auto gts = rasters_by_stem(gt_dir);
  MetricsReport report;
  for (const auto& [stem, path] : preds) {
    auto it = gts.find(stem);
    if (it == gts.end()) {
      report.missing.push_back(path.filename().string());
      report.warnings.push_back("no ground truth for " + path.filename().string() + "; excluded");
      continue;
    }
    report.images.push_back(evaluate_pair(stem, load_binary(path), load_binary(it->second)));
  }
  for (const auto& [stem, path] : gts)
    if (!preds.count(stem)) {
      report.missing.push_back(path.filename().string());
      report.warnings.push_back("no prediction for " + path.filename().string() + "; excluded");
    }
  report.mean = mean_metrics(report.images);
  return report;
}

namespace detail {

inline std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace detail

/// Comma-separated rows (image, f, f_ps, psnr, drd) with a header.
inline std::string metrics_csv(const std::vector<ImageMetrics>& rows) {
  std::ostringstream os;
  os << "image,f,f_ps,psnr,drd\n";
  for (const auto& r : rows)
    os << r.image << ',' << detail::fmt("%.6f", r.f_measure) << ',' << detail::fmt("%.6f", r.f_ps) << ','
       << detail::fmt("%.6f", r.psnr) << ',' << detail::fmt("%.6f", r.drd) << '\n';
  return os.str();
}

/// Aligned table with columns F-Measure, F_PS, PSNR, DRD.
inline std::string metrics_table(const std::vector<ImageMetrics>& rows, const std::string& first_column = "Image") {
  std::size_t name_w = first_column.size();
  for (const auto& r : rows) name_w = std::max(name_w, r.image.size());
  auto pad = [](std::string s, std::size_t w, bool left) {
    if (s.size() >= w) return s;
    return left ? s + std::string(w - s.size(), ' ') : std::string(w - s.size(), ' ') + s;
  };
  const std::size_t col = 10;
  std::ostringstream os;
  os << pad(first_column, name_w, true) << " | " << pad("F-Measure", col, false) << " | " << pad("F_PS", col, false)
     << " | " << pad("PSNR", col, false) << " | " << pad("DRD", col, false) << '\n';
  os << std::string(name_w, '-') << "-+-" << std::string(col, '-') << "-+-" << std::string(col, '-') << "-+-"
     << std::string(col, '-') << "-+-" << std::string(col, '-') << '\n';
  for (const auto& r : rows)
    os << pad(r.image, name_w, true) << " | " << pad(detail::fmt("%.2f", r.f_measure), col, false) << " | "
       << pad(detail::fmt("%.2f", r.f_ps), col, false) << " | " << pad(detail::fmt("%.2f", r.psnr), col, false)
       << " | " << pad(detail::fmt("%.2f", r.drd), col, false) << '\n';
  return os.str();
}

}  // namespace binlab
