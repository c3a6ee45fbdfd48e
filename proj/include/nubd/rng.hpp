#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace nubd {

/**
 * Seeding scheme for all randomness: one 64-bit run seed, split per subsystem.
 *
 * Each subsystem derives its own std::mt19937_64 from splitmix64(seed ^ fnv1a(stream name)),
 * so adding draws in one subsystem never perturbs another.
 */
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::string_view stream) {
    return Rng(splitmix64(seed ^ fnv1a(stream)));
}

}  // namespace nubd
