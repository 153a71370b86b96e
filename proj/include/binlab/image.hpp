#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "binlab/error.hpp"

namespace binlab {

/// Intensity raster with values in [0,1]. Pixels are stored row-major with
/// channels interleaved, so channel k of pixel (r, c) lives at
/// `(r * width + c) * channels + k`.
class Image {
 public:
  Image() = default;

  Image(int height, int width, int channels = 1, double fill = 0.0)
      : height_(height), width_(width), channels_(channels) {
    check_dims();
    if (!(fill >= 0.0 && fill <= 1.0)) throw ArgumentError("Image: fill value outside [0,1]");
    data_.assign(size(), fill);
  }

  Image(int height, int width, int channels, std::vector<double> data)
      : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
    check_dims();
    if (data_.size() != size()) throw ArgumentError("Image: data length does not match dims");
    for (double v : data_)
      if (!(v >= 0.0 && v <= 1.0)) throw ArgumentError("Image: value outside [0,1]");
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t size() const {
    return static_cast<std::size_t>(height_) * width_ * channels_;
  }
  bool empty() const { return data_.empty(); }

  double operator()(int r, int c, int k = 0) const { return data_[index(r, c, k)]; }
  double& operator()(int r, int c, int k = 0) { return data_[index(r, c, k)]; }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  bool operator==(const Image&) const = default;

 private:
  std::size_t index(int r, int c, int k) const {
    return (static_cast<std::size_t>(r) * width_ + c) * channels_ + k;
  }
  void check_dims() const {
    if (height_ < 1 || width_ < 1) throw ArgumentError("Image: height and width must be >= 1");
    if (channels_ != 1 && channels_ != 3) throw ArgumentError("Image: channels must be 1 or 3");
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 1;
  std::vector<double> data_;
};

/// Two-level map, 1 = ink (foreground), 0 = background.
class BinaryImage {
 public:
  BinaryImage() = default;

  BinaryImage(int height, int width, std::uint8_t fill = 0)
      : height_(height), width_(width) {
    if (height < 1 || width < 1) throw ArgumentError("BinaryImage: height and width must be >= 1");
    if (fill > 1) throw ArgumentError("BinaryImage: values must be 0 or 1");
    data_.assign(static_cast<std::size_t>(height) * width, fill);
  }

  BinaryImage(int height, int width, std::vector<std::uint8_t> data)
      : height_(height), width_(width), data_(std::move(data)) {
    if (height < 1 || width < 1) throw ArgumentError("BinaryImage: height and width must be >= 1");
    if (data_.size() != static_cast<std::size_t>(height) * width)
      throw ArgumentError("BinaryImage: data length does not match dims");
    for (auto v : data_)
      if (v > 1) throw ArgumentError("BinaryImage: values must be 0 or 1");
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }

  std::uint8_t operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * width_ + c]; }
  std::uint8_t& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * width_ + c]; }

  std::span<const std::uint8_t> data() const { return data_; }
  std::span<std::uint8_t> data() { return data_; }

  std::size_t ink_count() const {
    return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
  }

  bool operator==(const BinaryImage&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Sliding-window layout over a source image. Anchors are (row, col) of the
/// top-left corner of each patch, row-major over the grid.
struct PatchGrid {
  int source_height = 0;
  int source_width = 0;
  int source_channels = 1;
  int patch_size = 0;
  int stride = 0;
  std::vector<std::pair<int, int>> anchors;
};

// Luminance weights for RGB -> gray.
inline constexpr double kLumaR = 0.299;
inline constexpr double kLumaG = 0.587;
inline constexpr double kLumaB = 0.114;

inline Image to_grayscale(const Image& img) {
  if (img.channels() == 1) return img;
  std::vector<double> out(static_cast<std::size_t>(img.height()) * img.width());
  auto src = img.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = kLumaR * src[3 * i] + kLumaG * src[3 * i + 1] + kLumaB * src[3 * i + 2];
    out[i] = std::clamp(v, 0.0, 1.0);
  }
  return Image(img.height(), img.width(), 1, std::move(out));
}

namespace detail {

// Start offsets along one axis: regular stride, last window flush with the end.
inline std::vector<int> axis_anchors(int length, int size, int stride) {
  std::vector<int> pos;
  int p = 0;
  while (true) {
    pos.push_back(p);
    if (p + size >= length) break;
    p += stride;
    if (p + size > length) p = length - size;
  }
  return pos;
}

}  // namespace detail

inline PatchGrid make_patch_grid(int height, int width, int channels, int size, int stride) {
  if (size <= 0 || stride <= 0) throw ArgumentError("patch size and stride must be positive");
  if (stride > size) throw ArgumentError("stride larger than patch size leaves pixels uncovered");
  if (size > std::min(height, width))
    throw ArgumentError("patch size " + std::to_string(size) + " exceeds image dims " +
                        std::to_string(height) + "x" + std::to_string(width));
  PatchGrid grid{height, width, channels, size, stride, {}};
  for (int r : detail::axis_anchors(height, size, stride))
    for (int c : detail::axis_anchors(width, size, stride)) grid.anchors.emplace_back(r, c);
  return grid;
}

inline Image crop(const Image& img, int row, int col, int height, int width) {
  if (row < 0 || col < 0 || row + height > img.height() || col + width > img.width())
    throw ArgumentError("crop window out of bounds");
  const int ch = img.channels();
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(height) * width * ch);
  auto src = img.data();
  for (int r = 0; r < height; ++r) {
    auto begin = src.begin() + ((static_cast<std::ptrdiff_t>(row + r) * img.width() + col) * ch);
    out.insert(out.end(), begin, begin + static_cast<std::ptrdiff_t>(width) * ch);
  }
  return Image(height, width, ch, std::move(out));
}

inline std::pair<std::vector<Image>, PatchGrid> extract_patches(const Image& img, int size, int stride) {
  PatchGrid grid = make_patch_grid(img.height(), img.width(), img.channels(), size, stride);
  std::vector<Image> patches;
  patches.reserve(grid.anchors.size());
  for (auto [r, c] : grid.anchors) patches.push_back(crop(img, r, c, size, size));
  return {std::move(patches), std::move(grid)};
}

/// Reassembles patches; pixels covered by several patches get the mean.
inline Image stitch_patches(std::span<const Image> patches, const PatchGrid& grid) {
  if (patches.size() != grid.anchors.size())
    throw ArgumentError("stitch_patches: " + std::to_string(patches.size()) + " patches for " +
                        std::to_string(grid.anchors.size()) + " anchors");
  const int ch = grid.source_channels;
  const std::size_t n = static_cast<std::size_t>(grid.source_height) * grid.source_width;
  // long double keeps k identical contributions summing exactly, so the mean is bit-exact.
  std::vector<long double> acc(n * ch, 0.0L);
  std::vector<int> count(n, 0);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const Image& p = patches[i];
    if (p.height() != grid.patch_size || p.width() != grid.patch_size || p.channels() != ch)
      throw ArgumentError("stitch_patches: patch dims inconsistent with grid");
    auto [r0, c0] = grid.anchors[i];
    for (int r = 0; r < grid.patch_size; ++r)
      for (int c = 0; c < grid.patch_size; ++c) {
        std::size_t idx = static_cast<std::size_t>(r0 + r) * grid.source_width + (c0 + c);
        ++count[idx];
        for (int k = 0; k < ch; ++k) acc[idx * ch + k] += p(r, c, k);
      }
  }
  std::vector<double> out(n * ch);
  for (std::size_t idx = 0; idx < n; ++idx) {
    if (count[idx] == 0) throw ArgumentError("stitch_patches: grid leaves pixels uncovered");
    for (int k = 0; k < ch; ++k)
      out[idx * ch + k] = std::clamp(static_cast<double>(acc[idx * ch + k] / count[idx]), 0.0, 1.0);
  }
  return Image(grid.source_height, grid.source_width, ch, std::move(out));
}

/// Counter-clockwise rotation by 90 degrees: out(r, c) = in(c, n-1-r).
inline Image rotate90(const Image& img) {
  if (img.height() != img.width()) throw ArgumentError("rotate90: patch must be square");
  const int n = img.height();
  Image out(n, n, img.channels());
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c)
      for (int k = 0; k < img.channels(); ++k) out(r, c, k) = img(c, n - 1 - r, k);
  return out;
}

/// [original, rot90, rot180, rot270], all counter-clockwise.
inline std::vector<Image> augment_rotations(const Image& patch) {
  if (patch.height() != patch.width()) throw ArgumentError("augment_rotations: patch must be square");
  std::vector<Image> out{patch};
  for (int i = 0; i < 3; ++i) out.push_back(rotate90(out.back()));
  return out;
}

// Ink is dark: clean pixels below 0.5 are text.
inline constexpr double kInkThreshold = 0.5;

inline BinaryImage make_text_mask(const Image& clean) {
  if (clean.channels() != 1) throw ArgumentError("make_text_mask: expects a single-channel image");
  BinaryImage mask(clean.height(), clean.width());
  auto src = clean.data();
  auto dst = mask.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] < kInkThreshold ? 1 : 0;
  return mask;
}

inline BinaryImage threshold_output(const Image& img, double t = kInkThreshold) {
  if (!(t > 0.0 && t < 1.0)) throw ArgumentError("threshold_output: t must lie in (0,1)");
  if (img.channels() != 1) throw ArgumentError("threshold_output: expects a single-channel image");
  BinaryImage out(img.height(), img.width());
  auto src = img.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] < t ? 1 : 0;
  return out;
}

/// Renders a binary map as intensities: ink 0.0, background 1.0.
inline Image to_image(const BinaryImage& bin) {
  std::vector<double> out(bin.size());
  auto src = bin.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = src[i] ? 0.0 : 1.0;
  return Image(bin.height(), bin.width(), 1, std::move(out));
}

}  // namespace binlab
