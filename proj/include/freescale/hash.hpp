#pragma once

#include <cstdint>
#include <cstring>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <string_view>

#include "freescale/tensor.hpp"

namespace freescale {

/// Incremental 64-bit FNV-1a over raw bytes.
class Fnv1a64 {
public:
  void update(const void* data, std::size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      hash_ ^= bytes[i];
      hash_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view text) { update(text.data(), text.size()); }
  void update(std::span<const float> values) {
    // Hash the little-endian bit pattern so the digest is host independent.
    for (float v : values) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      unsigned char le[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                             static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
      update(le, 4);
    }
  }

  std::uint64_t digest() const { return hash_; }
  std::string hex() const { return to_hex(hash_); }

  static std::string to_hex(std::uint64_t value) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << value;
    return os.str();
  }

private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

inline std::string checksum_hex(const Tensor& t) {
  Fnv1a64 h;
  h.update(t.data());
  return h.hex();
}

inline std::string checksum_hex(std::string_view bytes) {
  Fnv1a64 h;
  h.update(bytes);
  return h.hex();
}

}  // namespace freescale
