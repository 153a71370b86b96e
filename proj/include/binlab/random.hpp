#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "binlab/error.hpp"

namespace binlab {

/// Seeded 64-bit Mersenne twister with splittable child streams and
/// text-serializable state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(mix(seed)) {}

  std::mt19937_64& engine() { return engine_; }

  std::uint64_t next() { return engine_(); }

  /// Uniform index in [0, n).
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }

  double normal(double mean, double stddev) { return std::normal_distribution<double>(mean, stddev)(engine_); }

  /// Independent child stream; advances this stream by one draw.
  Rng split() { return Rng(next()); }

  std::string state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    if (!is) throw FormatError("invalid RNG state");
  }

 private:
  // SplitMix64 finalizer so that nearby seeds give unrelated streams.
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::mt19937_64 engine_;
};

}  // namespace binlab
