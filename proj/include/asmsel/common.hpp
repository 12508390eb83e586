#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace asmsel {

/// Violated pre-condition, malformed artifact or inconsistent configuration.
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File system failure: missing file, short read, failed write.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 64-bit FNV-1a. Used for configuration fingerprints.
constexpr std::uint64_t fnv1a(std::string_view bytes,
                              std::uint64_t seed = 14695981039346656037ull) {
  std::uint64_t h = seed;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

std::string fingerprint_hex(std::uint64_t fp);
std::uint64_t parse_fingerprint(std::string_view hex);

}  // namespace asmsel
