#pragma once

#include <cstdint>
#include <random>

namespace climbemu {

/// Independent generator for stream `stream` of a run seeded with `seed`.
inline std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t salt = 0)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      static_cast<std::uint32_t>(salt)};
    return std::mt19937_64(seq);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t salt = 0)
{
    return derived_rng(seed, stream, salt)();
}

} // namespace climbemu
