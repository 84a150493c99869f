#include "align_teleop/random.hpp"

#include <span>

#include "align_teleop/mlp.hpp"

namespace align_teleop {

std::mt19937_64 make_rng(std::uint64_t seed, std::string_view stream) {
  const std::uint64_t tag = fnv1a(std::as_bytes(std::span(stream.data(), stream.size())));
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace align_teleop
