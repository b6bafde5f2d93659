#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>

#include "freescale/tensor.hpp"

namespace freescale {

/// Seeded generator with a platform-independent normal transform.
///
/// std::normal_distribution is implementation-defined, so gaussian draws use a
/// Box-Muller transform over mt19937_64 to keep outputs identical across
/// standard libraries.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in (0, 1), never exactly zero.
  double uniform() {
    constexpr double scale = 1.0 / 9007199254740992.0;  // 2^-53
    return (double(engine_() >> 11) + 0.5) * scale;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  Tensor normal_tensor(const Shape& shape, double stddev = 1.0) {
    Tensor t(shape);
    for (auto& v : t.data()) v = static_cast<float>(stddev * normal());
    return t;
  }

  Tensor uniform_tensor(const Shape& shape, double lo, double hi) {
    Tensor t(shape);
    for (auto& v : t.data()) v = static_cast<float>(lo + (hi - lo) * uniform());
    return t;
  }

  std::uint64_t next_u64() { return engine_(); }

private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// 64-bit FNV-1a, used to derive sub-seeds from strings.
constexpr std::uint64_t fnv1a64(std::string_view text, std::uint64_t hash = 0xcbf29ce484222325ULL) {
  for (char ch : text) {
    hash ^= static_cast<unsigned char>(ch);
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

/// Mixes a base seed with a stream label so distinct noise streams never share state.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
  std::uint64_t z = seed ^ fnv1a64(stream);
  // splitmix64 finalizer
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace freescale
