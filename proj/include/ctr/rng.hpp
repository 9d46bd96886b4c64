#pragma once

#include <cstdint>
#include <random>

namespace ctr {

using Rng = std::mt19937_64;

/// Independent generator purposes derived from one run seed.
enum class Stream : std::uint32_t {
    Init = 1,
    Dropout = 2,
    Shuffle = 3,
    AttackStart = 4,
    Data = 5,
    Eval = 6,
};

/// One generator per (seed, purpose); streams never share state.
inline Rng make_rng(std::uint64_t seed, Stream purpose) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                      static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(purpose)};
    return Rng(seq);
}

} // namespace ctr
