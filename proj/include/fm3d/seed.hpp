#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace fm3d {

// SplitMix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Derives a child seed from a parent seed and an ordered list of keys:
// h = splitmix64(seed); for each key k: h = splitmix64(h ^ splitmix64(k)).
// Every per-identity / per-iteration stream in the project is derived this
// way, so results never depend on evaluation order or parallelism.
constexpr std::uint64_t derive_seed(std::uint64_t seed,
                                    std::initializer_list<std::uint64_t> keys) noexcept {
    std::uint64_t h = splitmix64(seed);
    for (auto k : keys) h = splitmix64(h ^ splitmix64(k));
    return h;
}

// FNV-1a over bytes; stable across platforms, used for name-keyed seeds and
// cache keys.
constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

} // namespace fm3d
