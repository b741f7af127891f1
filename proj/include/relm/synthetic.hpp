#pragma once

#include <cstdint>
#include <vector>

#include "relm/reaction.hpp"

namespace relm {

/// Deterministic toy reactions (esterification, amide coupling, Williamson
/// ether synthesis) over a fixed pool of substituents. Every record has a
/// distinct product. Throws Error(InvalidArgument) if `count` exceeds the
/// number of distinct products the pool can form.
std::vector<ReactionRecord> synthetic_reactions(std::size_t count, std::uint64_t seed);

}  // namespace relm
