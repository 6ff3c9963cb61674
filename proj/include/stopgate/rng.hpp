#pragma once
// Deterministic seeded RNG streams. Hand-rolled so that byte-identical
// output does not depend on the standard library's distribution
// implementations. Streams are derived from (seed, tag, ints...) so that
// work items can be labeled in parallel in any order.

#include <cmath>
#include <cstdint>
#include <string_view>

namespace stopgate {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // Warm up so that small seeds do not produce correlated streams.
        splitmix64(state_);
        splitmix64(state_);
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    // Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [lo, hi], inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(next_u64() % span);
    }

    // Standard normal draw via Box-Muller; caches the second value.
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    bool bernoulli(double p) { return uniform() < p; }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Derive an independent stream from a base seed and a set of keys.
// Used so that labeling (seed, problem_id, prefix_len) and similar work
// items get order-independent, reproducible randomness.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
    std::uint64_t s = seed ^ (fnv1a64(tag) * 0x9e3779b97f4a7c15ULL);
    return splitmix64(s);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t a) {
    std::uint64_t s = derive_seed(seed, tag) ^ (a + 0x9e3779b97f4a7c15ULL);
    return splitmix64(s);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t a,
                                 std::uint64_t b) {
    std::uint64_t s = derive_seed(seed, tag, a) ^ (b * 0xff51afd7ed558ccdULL + 1);
    return splitmix64(s);
}

}  // namespace stopgate
