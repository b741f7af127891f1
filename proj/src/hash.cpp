#include "relm/hash.hpp"

#include <bit>
#include <cstdio>

namespace relm {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

StableHash& StableHash::update(std::string_view bytes) {
  for (unsigned char c : bytes) {
    state_ ^= c;
    state_ *= 0x100000001b3ULL;
  }
  // Length terminator keeps ("ab","c") and ("a","bc") apart.
  return update(static_cast<std::uint64_t>(bytes.size()));
}

StableHash& StableHash::update(std::uint64_t value) {
  for (int i = 0; i < 8; ++i) {
    state_ ^= (value >> (8 * i)) & 0xffU;
    state_ *= 0x100000001b3ULL;
  }
  return *this;
}

StableHash& StableHash::update(double value) {
  return update(std::bit_cast<std::uint64_t>(value));
}

std::uint64_t StableHash::digest() const { return mix64(state_); }

std::string StableHash::hex() const { return to_hex(digest()); }

std::string to_hex(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace relm
