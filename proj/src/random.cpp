#include "relm/random.hpp"

#include "relm/hash.hpp"

namespace relm {

std::uint64_t Rng::below(std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view label) {
  return StableHash().update(root).update(label).digest();
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view label, std::string_view item) {
  return StableHash().update(root).update(label).update(item).digest();
}

}  // namespace relm
