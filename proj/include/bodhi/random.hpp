#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace bodhi {

/// SplitMix64 finalizer; used to derive independent stream keys.
std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Key for a sub-stream of `seed` identified by a purpose tag and an index.
/// Streams with different (tag, index) are statistically independent.
std::uint64_t derive_stream_key(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0) noexcept;

/// Deterministic random stream: mt19937_64 engine with in-tree transforms, so the
/// same key gives the same sequence on every platform.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t key) : engine_(key) {}
  RandomStream(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0)
      : engine_(derive_stream_key(seed, tag, index)) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform on (0, 1).
  double uniform_open();
  double standard_normal();
  /// Laplace(0, 1) by inverse CDF.
  double standard_laplace();
  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace bodhi
