#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "binlab/error.hpp"
#include "binlab/image.hpp"

namespace binlab {

// Raster I/O is delegated to OpenCV's codecs (PNG, BMP, TIFF).

inline Image load_image(const std::filesystem::path& path) {
  {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw IoError("cannot read image file: " + path.string());
  }
  cv::Mat mat;
  try {
    mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  } catch (const cv::Exception& e) {
    throw FormatError("cannot decode image " + path.string() + ": " + e.what());
  }
  if (mat.empty()) throw FormatError("unsupported or corrupt image: " + path.string());
  if (mat.depth() != CV_8U) throw FormatError("only 8-bit rasters are supported: " + path.string());

  const int h = mat.rows;
  const int w = mat.cols;
  const int src_ch = mat.channels();
  const int ch = src_ch >= 3 ? 3 : 1;
  std::vector<double> data(static_cast<std::size_t>(h) * w * ch);
  for (int r = 0; r < h; ++r) {
    const auto* row = mat.ptr<std::uint8_t>(r);
    for (int c = 0; c < w; ++c) {
      const auto* px = row + static_cast<std::ptrdiff_t>(c) * src_ch;
      auto* dst = &data[(static_cast<std::size_t>(r) * w + c) * ch];
      if (ch == 1) {
        dst[0] = px[0] / 255.0;
      } else {
        // OpenCV stores BGR(A).
        dst[0] = px[2] / 255.0;
        dst[1] = px[1] / 255.0;
        dst[2] = px[0] / 255.0;
      }
    }
  }
  return Image(h, w, ch, std::move(data));
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline void write_mat(const std::filesystem::path& path, const cv::Mat& mat) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), mat);
  } catch (const cv::Exception& e) {
    throw IoError("cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw IoError("cannot write " + path.string());
}

/// Writes an 8-bit raster; the format follows the file extension.
inline void save_image(const std::filesystem::path& path, const Image& img) {
  cv::Mat mat(img.height(), img.width(), img.channels() == 1 ? CV_8UC1 : CV_8UC3);
  for (int r = 0; r < img.height(); ++r) {
    auto* row = mat.ptr<std::uint8_t>(r);
    for (int c = 0; c < img.width(); ++c) {
      if (img.channels() == 1) {
        row[c] = to_byte(img(r, c));
      } else {
        row[3 * c + 0] = to_byte(img(r, c, 2));
        row[3 * c + 1] = to_byte(img(r, c, 1));
        row[3 * c + 2] = to_byte(img(r, c, 0));
      }
    }
  }
  write_mat(path, mat);
}

/// Ground-truth convention: ink black (0), background white (255).
inline void save_binary(const std::filesystem::path& path, const BinaryImage& bin) {
  cv::Mat mat(bin.height(), bin.width(), CV_8UC1);
  for (int r = 0; r < bin.height(); ++r) {
    auto* row = mat.ptr<std::uint8_t>(r);
    for (int c = 0; c < bin.width(); ++c) row[c] = bin(r, c) ? 0 : 255;
  }
  write_mat(path, mat);
}

inline BinaryImage load_binary(const std::filesystem::path& path) {
  return make_text_mask(to_grayscale(load_image(path)));
}

}  // namespace binlab
