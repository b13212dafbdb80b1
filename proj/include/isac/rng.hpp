#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace isac {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Independent substream seed for (master, tag0, tag1, ...).
inline std::uint64_t deriveSeed(std::uint64_t master, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t h = splitmix64(master);
    for (std::uint64_t t : tags) h = splitmix64(h ^ splitmix64(t + 0x632BE59BD9B4E019ULL));
    return h;
}

inline Rng makeRng(std::uint64_t master, std::initializer_list<std::uint64_t> tags) {
    return Rng(deriveSeed(master, tags));
}

}  // namespace isac
