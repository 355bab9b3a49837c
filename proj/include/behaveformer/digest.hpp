#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace bf {

inline constexpr std::uint64_t kFnvOffset = 14695981039346656037ull;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ull;

/// FNV-1a 64-bit rolling hash for file integrity and run manifests.
inline std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= static_cast<std::uint64_t>(p[i]);
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t h = kFnvOffset) {
  return fnv1a64(s.data(), s.size(), h);
}

std::string to_hex(std::uint64_t value);

}  // namespace bf
