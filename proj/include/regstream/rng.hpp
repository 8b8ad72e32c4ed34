#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace regstream {

using Rng = std::mt19937_64;

// std::uniform_*_distribution output is implementation defined; these helpers
// pin the exact draw sequence so runs reproduce across platforms.

inline double uniform_real(Rng& rng) {
    // 53-bit mantissa in [0, 1)
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_real(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform_real(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) {  // inclusive range
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(rng() % span);
}

inline double normal(Rng& rng) {
    // Box-Muller, no cached spare so the draw count stays predictable.
    double u1 = uniform_real(rng);
    const double u2 = uniform_real(rng);
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

inline double gumbel(Rng& rng) {
    double u = uniform_real(rng);
    if (u <= 0.0) u = 0x1.0p-53;
    return -std::log(-std::log(u));
}

// Stable per-name seeding: independent streams for data, masking, noise and
// per-tensor initialization, all derived from one master seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view name) {
    std::uint64_t h = 1469598103934665603ull ^ master;
    for (const char c : name) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 1099511628211ull;
    }
    h ^= master * 0x9e3779b97f4a7c15ull;
    return h;
}

inline Rng seeded_rng(std::uint64_t master, std::string_view name) {
    return Rng(derive_seed(master, name));
}

}  // namespace regstream
