#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace abd {

/// Seeded pseudo-random stream.
///
/// Wraps std::mt19937_64 but draws uniforms and normals with fixed
/// arithmetic instead of the standard distributions, whose output is
/// implementation-defined. Streams are therefore reproducible across
/// standard libraries given the same seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();

  /// Uniform double in (0, 1]; safe as a log() argument.
  double uniform_open0() { return 1.0 - uniform(); }

  /// Standard normal via Box-Muller (one value per two uniforms, no cache
  /// so that the serialized engine state is the whole state).
  double normal();

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t index(std::uint64_t n);

  /// Child stream whose seed is a hash of this stream's next output and a
  /// name. Advances this stream by one draw.
  Rng split(std::string_view name);

  std::string serialize() const;
  void deserialize(const std::string& state);

  /// Seed for a named substream of a root seed ("data", "train", ...).
  static std::uint64_t derive_seed(std::uint64_t root, std::string_view name);

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace abd
