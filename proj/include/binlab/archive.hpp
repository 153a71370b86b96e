#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "binlab/error.hpp"
#include "binlab/tensor.hpp"

namespace binlab {

// Binary tensor archive:
//   "BLTA" | u32 version | u32 count | count x { u32 name_len | name | i32 n,c,h,w | f64[numel] }
// Native byte order (little-endian on all supported targets).

using TensorMap = std::map<std::string, Tensor>;

inline constexpr char kArchiveMagic[4] = {'B', 'L', 'T', 'A'};
inline constexpr std::uint32_t kArchiveVersion = 1;

/// Writes to `<path>.tmp` then renames over `path`.
inline void write_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void save_tensors(const std::filesystem::path& path, const TensorMap& tensors) {
  std::string buf(kArchiveMagic, 4);
  auto put = [&buf](const void* p, std::size_t n) { buf.append(static_cast<const char*>(p), n); };
  const std::uint32_t version = kArchiveVersion;
  const auto count = static_cast<std::uint32_t>(tensors.size());
  put(&version, 4);
  put(&count, 4);
  for (const auto& [name, t] : tensors) {
    const auto len = static_cast<std::uint32_t>(name.size());
    put(&len, 4);
    put(name.data(), len);
    const std::int32_t dims[4] = {t.shape().n, t.shape().c, t.shape().h, t.shape().w};
    put(dims, sizeof dims);
    put(t.ptr(), t.numel() * sizeof(double));
  }
  write_atomic(path, buf);
}

inline TensorMap load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read tensor archive " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto take = [&](void* dst, std::size_t n) {
    if (pos + n > buf.size()) throw FormatError("truncated tensor archive " + path.string());
    std::memcpy(dst, buf.data() + pos, n);
    pos += n;
  };
  char magic[4];
  take(magic, 4);
  if (std::memcmp(magic, kArchiveMagic, 4) != 0) throw FormatError("not a tensor archive: " + path.string());
  std::uint32_t version = 0;
  std::uint32_t count = 0;
  take(&version, 4);
  if (version != kArchiveVersion) throw FormatError("unsupported archive version in " + path.string());
  take(&count, 4);
  TensorMap out;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t len = 0;
    take(&len, 4);
    std::string name(len, '\0');
    take(name.data(), len);
    std::int32_t dims[4];
    take(dims, sizeof dims);
    for (auto d : dims)
      if (d < 0) throw FormatError("negative dimension in " + path.string());
    Tensor t(Shape{dims[0], dims[1], dims[2], dims[3]});
    take(t.ptr(), t.numel() * sizeof(double));
    out.emplace(std::move(name), std::move(t));
  }
  if (pos != buf.size()) throw FormatError("trailing bytes in tensor archive " + path.string());
  return out;
}

}  // namespace binlab
