#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace relm {

/// 64-bit FNV-1a with a splitmix64 finalizer. Stable across platforms; used
/// for canonical keys, encoder fingerprints and template versions. Not a
/// cryptographic hash.
class StableHash {
 public:
  StableHash& update(std::string_view bytes);
  StableHash& update(std::uint64_t value);
  StableHash& update(std::int64_t value) { return update(static_cast<std::uint64_t>(value)); }
  StableHash& update(int value) { return update(static_cast<std::int64_t>(value)); }
  StableHash& update(double value);

  std::uint64_t digest() const;
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::uint64_t mix64(std::uint64_t x);

std::string to_hex(std::uint64_t value);

}  // namespace relm
