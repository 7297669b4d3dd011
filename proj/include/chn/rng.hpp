#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace chn {

// Named stream ids. Every stage draws from its own stream derived from the
// master seed, so reordering or re-running one stage never perturbs another.
namespace stream {
inline constexpr std::uint64_t kSplit = 1;
inline constexpr std::uint64_t kBaseInit = 2;
inline constexpr std::uint64_t kMask = 3;
inline constexpr std::uint64_t kShuffle = 4;
inline constexpr std::uint64_t kReparam = 5;
inline constexpr std::uint64_t kEpisode = 6;
inline constexpr std::uint64_t kSynth = 7;
inline constexpr std::uint64_t kChnInit = 8;
inline constexpr std::uint64_t kChnShuffle = 9;
inline constexpr std::uint64_t kChnEpisode = 10;
inline constexpr std::uint64_t kMamlInit = 11;
inline constexpr std::uint64_t kMamlShuffle = 12;
inline constexpr std::uint64_t kMamlEpisode = 13;
inline constexpr std::uint64_t kEvalEpisode = 14;
inline constexpr std::uint64_t kMethodInit = 15;
inline constexpr std::uint64_t kHoldout = 16;

// Stream id spanning a whole family, e.g. one per (feature, k) pair.
inline constexpr std::uint64_t sub(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                                   std::uint64_t c = 0) {
    return (base << 40) ^ (a << 20) ^ (b << 8) ^ c;
}
}  // namespace stream

// Splittable counter-style generator (splitmix64). Identical (seed, stream,
// call sequence) gives identical output on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream_id = 0)
        : state_(mix(mix(seed) ^ (stream_id * 0x9E3779B97F4A7C15ull))) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        return mix(state_);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller (cosine branch); two draws per sample.
    double normal() {
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Uniform integer in [0, n), unbiased via rejection.
    std::uint64_t below(std::uint64_t n) {
        std::uint64_t x, r;
        do {
            x = next_u64();
            r = x % n;
        } while (x - r > std::uint64_t(-1) - (n - 1));
        return r;
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9E3779B97F4A7C15ull;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
};

}  // namespace chn
