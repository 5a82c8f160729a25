#pragma once

#include <cstdint>

namespace charflow::rng {

// SplitMix64 finalizer (Steele, Lea, Flood; Vigna's public-domain version).
constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Per-chain seed derived from (master seed, chain index). Stateless, so
// results never depend on which thread runs which chain.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    return mix64(master ^ mix64(index * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL));
}

// Counter-based uniform draw keyed by (seed, counter), in [0, 1).
constexpr double uniform01(std::uint64_t seed, std::uint64_t counter) {
    const std::uint64_t z = mix64(seed ^ mix64(counter * 0xA0761D6478BD642FULL + 0xE7037ED1A0B428DBULL));
    return static_cast<double>(z >> 11) * 0x1.0p-53;
}

} // namespace charflow::rng
