#pragma once

#include <cstdint>
#include <random>

namespace ndtsync {

/// The one pseudo-random source used for synthetic traffic, weight
/// initialisation and batch shuffling. std::mt19937_64 is fully specified by
/// the C++ standard, so streams are identical across toolchains; every
/// derived quantity below is computed by hand rather than through
/// implementation-defined <random> distributions.
class Rng {
 public:
  static constexpr const char* kName = "std::mt19937_64 (ISO C++11), Box-Muller normals";

  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1], safe for log().
  double uniform_open() { return (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53; }

  /// Standard normal via the cosine branch of Box-Muller. The sine branch
  /// is discarded so every call consumes exactly two engine outputs.
  double normal();

  /// Integer in [0, n). Modulo reduction; the bias is below 2^-40 for the
  /// sizes used here.
  std::uint64_t below(std::uint64_t n) { return engine_() % n; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace ndtsync
