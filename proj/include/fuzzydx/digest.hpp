#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace fdx {

// Lowercase hex SHA-256 of the bytes.
std::string sha256_hex(std::string_view bytes);

// FNV-1a, 64 bit. Stable across platforms; used for feature hashing.
constexpr std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace fdx
