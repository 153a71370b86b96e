#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "binlab/archive.hpp"
#include "binlab/error.hpp"
#include "binlab/image.hpp"
#include "binlab/image_io.hpp"
#include "binlab/metrics.hpp"
#include "binlab/random.hpp"
#include "binlab/tensor.hpp"

namespace binlab {

namespace fs = std::filesystem;

struct ManifestEntry {
  std::string path;  // relative to the manifest root
  std::string checksum;
};

/// Degraded and clean file lists of one split. The two lists are unpaired.
struct SplitFiles {
  std::vector<ManifestEntry> degraded;
  std::vector<ManifestEntry> clean;
};

struct DatasetManifest {
  std::string root;
  std::map<std::string, std::vector<std::string>> datasets;  // split -> dataset directory names
  std::map<std::string, SplitFiles> splits;

  const SplitFiles& split(const std::string& name) const {
    auto it = splits.find(name);
    if (it == splits.end()) throw ConfigError("manifest has no split named " + name);
    return it->second;
  }
};

/// Which dataset directories make up each split.
struct SplitSpec {
  std::map<std::string, std::vector<std::string>> splits{
      {"train", {"2009", "2013", "2012H", "2014H"}},
      {"eval", {"2016H", "2011"}},
  };
};

inline std::string file_checksum(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(bytes.data(), bytes.size())));
  return buf;
}

namespace detail {

inline std::vector<ManifestEntry> list_rasters(const fs::path& root, const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("missing dataset directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_raster(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<ManifestEntry> out;
  for (const auto& f : files) out.push_back({fs::relative(f, root).generic_string(), file_checksum(f)});
  return out;
}

}  // namespace detail

/// Scans `<root>/<dataset>/{degraded,gt}/` for every dataset named in the split spec.
inline DatasetManifest build_manifest(const fs::path& root, const SplitSpec& spec = {}) {
  if (!fs::is_directory(root)) throw ConfigError("dataset root does not exist: " + root.string());
  if (fs::is_empty(root)) throw ConfigError("dataset root is empty: " + root.string());
  DatasetManifest m;
  m.root = root.string();
  for (const auto& [split, names] : spec.splits) {
    m.datasets[split] = names;
    SplitFiles& files = m.splits[split];
    for (const auto& name : names) {
      auto deg = detail::list_rasters(root, root / name / "degraded");
      auto gt = detail::list_rasters(root, root / name / "gt");
      files.degraded.insert(files.degraded.end(), deg.begin(), deg.end());
      files.clean.insert(files.clean.end(), gt.begin(), gt.end());
    }
  }
  return m;
}

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["root"] = m.root;
  j["datasets"] = m.datasets;
  for (const auto& [name, split] : m.splits) {
    auto& js = j["splits"][name];
    js["degraded"] = nlohmann::json::array();
    js["clean"] = nlohmann::json::array();
    for (const auto& e : split.degraded) js["degraded"].push_back({{"path", e.path}, {"checksum", e.checksum}});
    for (const auto& e : split.clean) js["clean"].push_back({{"path", e.path}, {"checksum", e.checksum}});
  }
  return j;
}

inline void save_manifest(const fs::path& path, const DatasetManifest& m) {
  write_atomic(path, to_json(m).dump(2) + "\n");
}

struct LoadedManifest {
  DatasetManifest manifest;
  std::vector<std::string> warnings;  // stale checksums
};

/// Reads a manifest and re-verifies file checksums. A relative root is resolved
/// against the manifest's directory.
inline LoadedManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed manifest " + path.string() + ": " + e.what());
  }
  LoadedManifest out;
  DatasetManifest& m = out.manifest;
  try {
    fs::path root = j.at("root").get<std::string>();
    if (root.is_relative()) root = path.parent_path() / root;
    m.root = root.string();
    m.datasets = j.at("datasets").get<std::map<std::string, std::vector<std::string>>>();
    for (const auto& [name, js] : j.at("splits").items()) {
      SplitFiles& split = m.splits[name];
      for (const auto& e : js.at("degraded")) split.degraded.push_back({e.at("path"), e.at("checksum")});
      for (const auto& e : js.at("clean")) split.clean.push_back({e.at("path"), e.at("checksum")});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed manifest " + path.string() + ": " + e.what());
  }
  for (const auto& [name, split] : m.splits)
    for (const auto* list : {&split.degraded, &split.clean})
      for (const auto& e : *list) {
        const fs::path file = fs::path(m.root) / e.path;
        if (!fs::exists(file)) throw ConfigError("manifest entry missing on disk: " + file.string());
        if (file_checksum(file) != e.checksum)
          out.warnings.push_back("stale manifest: checksum changed for " + e.path);
      }
  return out;
}

/// Both halves of an unpaired training batch, each (N, 1, P, P).
struct Batch {
  Tensor clean;
  Tensor degraded;
};

/// Holds decoded clean and degraded pools and draws random patches from them.
class UnpairedSampler {
 public:
  UnpairedSampler(std::vector<Image> clean, std::vector<Image> degraded, int patch_size)
      : clean_(std::move(clean)), degraded_(std::move(degraded)), patch_(patch_size) {
    if (clean_.empty() || degraded_.empty()) throw ConfigError("unpaired sampler: empty clean or degraded pool");
    if (patch_ < 1) throw ConfigError("unpaired sampler: patch size must be positive");
    for (auto* pool : {&clean_, &degraded_})
      for (auto& im : *pool) im = to_grayscale(im);
  }

  static UnpairedSampler from_manifest(const DatasetManifest& m, const std::string& split, int patch_size) {
    const SplitFiles& files = m.split(split);
    std::vector<Image> clean;
    std::vector<Image> degraded;
    for (const auto& e : files.clean) clean.push_back(load_image(fs::path(m.root) / e.path));
    for (const auto& e : files.degraded) degraded.push_back(load_image(fs::path(m.root) / e.path));
    return UnpairedSampler(std::move(clean), std::move(degraded), patch_size);
  }

  std::size_t clean_count() const { return clean_.size(); }
  std::size_t degraded_count() const { return degraded_.size(); }
  int patch_size() const { return patch_; }

  /// Random crop followed by one of the four right-angle rotations.
  Image random_patch(const Image& src, Rng& rng) const {
    const Image img = pad_to(src, patch_);
    const int r = static_cast<int>(rng.index(static_cast<std::size_t>(img.height() - patch_ + 1)));
    const int c = static_cast<int>(rng.index(static_cast<std::size_t>(img.width() - patch_ + 1)));
    const std::size_t rot = rng.index(4);
    Image p = crop(img, r, c, patch_, patch_);
    for (std::size_t i = 0; i < rot; ++i) p = rotate90(p);
    return p;
  }

  /// D patches from the given degraded indices; C patches from independently drawn clean images.
  Batch sample_for(const std::vector<std::size_t>& degraded_indices, Rng& rng) const {
    std::vector<Image> c;
    std::vector<Image> d;
    for (std::size_t idx : degraded_indices) {
      d.push_back(random_patch(degraded_.at(idx), rng));
      c.push_back(random_patch(clean_[rng.index(clean_.size())], rng));
    }
    return {stack_images(c), stack_images(d)};
  }

  Batch sample(Rng& rng, int batch) const {
    if (batch < 1) throw ConfigError("batch size must be positive");
    std::vector<std::size_t> idx;
    for (int i = 0; i < batch; ++i) idx.push_back(rng.index(degraded_.size()));
    return sample_for(idx, rng);
  }

  static Image pad_to(const Image& img, int size) {
    if (img.height() >= size && img.width() >= size) return img;
    const int h = std::max(img.height(), size);
    const int w = std::max(img.width(), size);
    Image out(h, w, img.channels());
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c)
        for (int k = 0; k < img.channels(); ++k)
          out(r, c, k) = img(std::min(r, img.height() - 1), std::min(c, img.width() - 1), k);
    return out;
  }

 private:
  static Tensor stack_images(const std::vector<Image>& ims) {
    const int p = ims[0].height();
    Tensor t(Shape{static_cast<int>(ims.size()), 1, p, p});
    for (std::size_t n = 0; n < ims.size(); ++n)
      std::copy(ims[n].data().begin(), ims[n].data().end(), t.ptr() + n * static_cast<std::size_t>(p) * p);
    return t;
  }

  std::vector<Image> clean_;
  std::vector<Image> degraded_;
  int patch_;
};

inline Batch sample_unpaired_batch(const UnpairedSampler& sampler, Rng& rng, int batch) {
  return sampler.sample(rng, batch);
}

// ---------------------------------------------------------------------------
// Synthetic toy corpus

struct ToyCorpusOptions {
  std::string name = "toy";
  int size = 128;
  double amplitude = 1.0;  // 0 disables every degradation
};

namespace detail {

inline void fill_rect(Image& img, int r0, int c0, int h, int w, double v) {
  for (int r = std::max(0, r0); r < std::min(img.height(), r0 + h); ++r)
    for (int c = std::max(0, c0); c < std::min(img.width(), c0 + w); ++c) img(r, c) = v;
}

/// White page with lines of glyph-like stroke clusters and a few free strokes; ink = 0.
inline Image synth_clean_page(int size, Rng& rng) {
  Image img(size, size, 1, 1.0);
  const int line_h = std::max(8, size / static_cast<int>(rng.uniform(6.0, 9.0)));
  const int margin = std::max(2, size / 16);
  for (int top = margin; top + line_h <= size - margin; top += line_h + static_cast<int>(rng.uniform(2.0, 6.0))) {
    int x = margin + static_cast<int>(rng.uniform(0.0, 6.0));
    const int glyph_h = std::max(5, line_h - static_cast<int>(rng.uniform(1.0, 4.0)));
    while (x < size - margin - 4) {
      const int gw = static_cast<int>(rng.uniform(3.0, 8.0));
      const int t = rng.uniform(0.0, 1.0) < 0.7 ? 1 : 2;
      const int y = top + (line_h - glyph_h);
      switch (rng.index(4)) {
        case 0:  // box outline
          fill_rect(img, y, x, t, gw, 0.0);
          fill_rect(img, y + glyph_h - t, x, t, gw, 0.0);
          fill_rect(img, y, x, glyph_h, t, 0.0);
          fill_rect(img, y, x + gw - t, glyph_h, t, 0.0);
          break;
        case 1:  // vertical bar with a cross stroke
          fill_rect(img, y, x + gw / 2, glyph_h, t, 0.0);
          fill_rect(img, y + glyph_h / 2, x, t, gw, 0.0);
          break;
        case 2:  // two verticals joined at the top
          fill_rect(img, y, x, glyph_h, t, 0.0);
          fill_rect(img, y, x + gw - t, glyph_h, t, 0.0);
          fill_rect(img, y, x, t, gw, 0.0);
          break;
        default:  // filled dot-like blob
          fill_rect(img, y + glyph_h / 3, x, std::max(2, glyph_h / 3), std::max(2, gw / 2), 0.0);
          break;
      }
      x += gw + static_cast<int>(rng.uniform(2.0, 5.0));
      if (rng.uniform(0.0, 1.0) < 0.15) x += static_cast<int>(rng.uniform(4.0, 9.0));  // word gap
    }
  }
  // Free strokes (underlines, flourishes).
  const int strokes = static_cast<int>(rng.index(3));
  for (int s = 0; s < strokes; ++s) {
    const double r0 = rng.uniform(0, size), c0 = rng.uniform(0, size);
    const double angle = rng.uniform(0.0, 3.14159265358979);
    const double len = rng.uniform(size / 6.0, size / 2.0);
    for (double u = 0; u < len; u += 0.5) {
      const int r = static_cast<int>(r0 + u * std::sin(angle));
      const int c = static_cast<int>(c0 + u * std::cos(angle));
      if (r >= 0 && c >= 0 && r < size && c < size) img(r, c) = 0.0;
    }
  }
  return img;
}

/// Degrades a clean page: ink and background tones, low-frequency shading, dark blotches,
/// bleed-through of a mirrored page, pixel noise. Every effect is scaled by
/// `amplitude`, so amplitude 0 returns the clean page unchanged.
inline Image degrade_page(const Image& clean, const Image& reverse_side, double amplitude, Rng& rng) {
  const int n = clean.height();
  const double a = amplitude;
  const double ink = rng.uniform(0.05, 0.3);
  const double background = rng.uniform(0.08, 0.22);
  const double shade_amp = rng.uniform(0.2, 0.45);
  const double shade_dir = rng.uniform(0.0, 6.28318530718);
  const double shade_freq = rng.uniform(0.5, 1.5);
  const double bleed = rng.uniform(0.1, 0.3);
  struct Blotch { double r, c, sigma, depth; };
  std::vector<Blotch> blotches(1 + rng.index(3));
  for (auto& b : blotches) b = {rng.uniform(0, n), rng.uniform(0, n), rng.uniform(n / 16.0, n / 6.0), rng.uniform(0.2, 0.45)};

  Image out(n, n, 1);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      const bool is_ink = clean(r, c) < kInkThreshold;
      double v = is_ink ? clean(r, c) + a * ink : clean(r, c) - a * background;
      // Ghost of the reverse side, mirrored left-right.
      if (reverse_side(r, n - 1 - c) < kInkThreshold && !is_ink) v -= a * bleed;
      const double u = (r * std::cos(shade_dir) + c * std::sin(shade_dir)) / n;
      const double field = 0.5 + 0.5 * std::sin(6.28318530718 * shade_freq * u);
      v *= 1.0 - a * shade_amp * field;
      for (const auto& b : blotches) {
        const double d2 = (r - b.r) * (r - b.r) + (c - b.c) * (c - b.c);
        v -= a * b.depth * std::exp(-d2 / (2.0 * b.sigma * b.sigma));
      }
      v += a * rng.normal(0.0, 0.03);
      out(r, c) = std::clamp(v, 0.0, 1.0);
    }
  return out;
}

}  // namespace detail

/// Writes `<out>/<name>/{gt,degraded}/toy_NNNN.png` plus `<out>/manifest.json`
/// whose train split is the new dataset.
inline DatasetManifest synth_toy_corpus(const fs::path& out_dir, int n, Rng& rng, const ToyCorpusOptions& opt = {}) {
  if (n < 1) throw ConfigError("toy corpus needs at least one image");
  std::error_code ec;
  fs::create_directories(out_dir / opt.name / "gt", ec);
  fs::create_directories(out_dir / opt.name / "degraded", ec);
  if (ec || !fs::is_directory(out_dir / opt.name / "gt")) throw IoError("cannot create " + (out_dir / opt.name).string());
  for (int i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "toy_%04d.png", i);
    Image clean = detail::synth_clean_page(opt.size, rng);
    Image reverse = detail::synth_clean_page(opt.size, rng);
    Image degraded = detail::degrade_page(clean, reverse, opt.amplitude, rng);
    save_binary(out_dir / opt.name / "gt" / name, make_text_mask(clean));
    save_image(out_dir / opt.name / "degraded" / name, degraded);
  }
  SplitSpec spec;
  spec.splits = {{"train", {opt.name}}};
  DatasetManifest m = build_manifest(out_dir, spec);
  m.root = ".";
  save_manifest(out_dir / "manifest.json", m);
  m.root = out_dir.string();
  return m;
}

}  // namespace binlab
