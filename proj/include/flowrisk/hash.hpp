#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace flowrisk {

// FNV-1a 64-bit: tiny, dependency-free content fingerprint. Not
// cryptographic; used to detect accidental corruption and config drift.
inline std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ull;
  }
  return hash;
}

inline std::string fnv1a64_hex(std::string_view text) {
  static const char digits[] = "0123456789abcdef";
  std::uint64_t hash = fnv1a64(text);
  std::string out(16, '0');
  for (std::size_t i = 16; i-- > 0; hash >>= 4) out[i] = digits[hash & 0xf];
  return out;
}

}  // namespace flowrisk
