#pragma once

#include <vector>

#include "binlab/dataset.hpp"
#include "binlab/error.hpp"
#include "binlab/image.hpp"
#include "binlab/networks.hpp"

namespace binlab {

/// Runs `fn` on every size×size tile of `img` and averages the overlaps back
/// into a full-size result. Images smaller than a tile are edge-padded first
/// and cropped afterwards.
template <typename Fn>
Image tiled_apply(const Image& img, int size, int stride, Fn&& fn) {
  const Image padded = UnpairedSampler::pad_to(img, size);
  auto [tiles, grid] = extract_patches(padded, size, stride);
  std::vector<Image> out;
  out.reserve(tiles.size());
  for (std::size_t i = 0; i < tiles.size(); ++i) out.push_back(fn(tiles[i], grid.anchors[i]));
  grid.source_channels = out.empty() ? grid.source_channels : out.front().channels();
  const Image stitched = stitch_patches(out, grid);
  if (stitched.height() == img.height() && stitched.width() == img.width()) return stitched;
  return crop(stitched, 0, 0, img.height(), img.width());
}

/// UDBNet over a whole page: grayscale, tile, forward, stitch. Values in [0,1].
inline Image udbnet_infer(const Network& f, const Image& img, int patch, int stride) {
  const Image gray = to_grayscale(img);
  return tiled_apply(gray, patch, stride, [&](const Image& tile, auto) { return udbnet_forward(f, tile); });
}

inline BinaryImage udbnet_binarize(const Network& f, const Image& img, int patch, int stride) {
  return threshold_output(udbnet_infer(f, img, patch, stride));
}

/// Reference texture repeated to cover `height`×`width`.
inline Image tile_reference(const Image& ref, int height, int width) {
  Image out(height, width, ref.channels());
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      for (int k = 0; k < ref.channels(); ++k) out(r, c, k) = ref(r % ref.height(), c % ref.width(), k);
  return out;
}

/// ATANet over a whole clean page; each tile takes its texture from the same
/// location of the (tiled) degraded reference.
inline Image atanet_infer(const TextureGenerator& t, const Image& clean, const Image& reference, int patch, int stride) {
  const Image c = to_grayscale(clean);
  const Image ref = UnpairedSampler::pad_to(tile_reference(to_grayscale(reference), c.height(), c.width()), patch);
  return tiled_apply(c, patch, stride, [&](const Image& tile, const auto& anchor) {
    return atanet_forward(t, tile, crop(ref, anchor.first, anchor.second, patch, patch));
  });
}

}  // namespace binlab
