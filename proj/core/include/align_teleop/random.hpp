#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace align_teleop {

/// Independent, reproducible generator for a named sub-stream of a run seed.
std::mt19937_64 make_rng(std::uint64_t seed, std::string_view stream);

}  // namespace align_teleop
