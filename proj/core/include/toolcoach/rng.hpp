#pragma once

#include <cstddef>
#include <cstdint>

namespace toolcoach {

// splitmix64: fast, well-mixed 64-bit hash used for all seed derivation so
// that every rollout/turn seed is a pure function of (base seed, indices).
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t base, uint64_t salt) {
    return splitmix64(base ^ splitmix64(salt + 0x632be59bd9b4e019ULL));
}

/// Uniform double in [0, 1) with 53 random bits.
inline double unit_double(uint64_t seed) {
    return static_cast<double>(splitmix64(seed) >> 11) * 0x1.0p-53;
}

/// FNV-1a 64-bit; stable content hash for cache keys and config digests.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace toolcoach
