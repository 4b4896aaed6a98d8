#pragma once

// Seedable, portable random number generation.
//
// All randomness in the library flows through Xoshiro256pp seeded via
// SplitMix64. Distinct concerns (adjacency matrix, input coupling, bias,
// input noise, data initial conditions) draw from independent substreams
// derived with substream_seed(), so a single base seed reproduces an
// entire experiment bit-for-bit regardless of execution order.

#include <array>
#include <cmath>
#include <cstdint>

namespace rescomp {

/// SplitMix64: used only to expand seeds and derive substreams.
struct SplitMix64 {
    std::uint64_t state;

    explicit SplitMix64(std::uint64_t seed) : state(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }
};

/// xoshiro256++ by Blackman & Vigna. 64-bit output, period 2^256 - 1.
class Xoshiro256pp {
  public:
    explicit Xoshiro256pp(std::uint64_t seed) {
        SplitMix64 sm(seed);
        for (auto& word : state_) word = sm.next();
    }

    std::uint64_t next() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Standard normal via Box-Muller; draws are consumed in pairs.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        // u1 in (0, 1] so the log is finite
        double u1 = static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
        double u2 = uniform01();
        double radius = std::sqrt(-2.0 * std::log(u1));
        double angle = 6.283185307179586476925286766559 * u2;
        spare_ = radius * std::sin(angle);
        have_spare_ = true;
        return radius * std::cos(angle);
    }

  private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::array<std::uint64_t, 4> state_{};
    double spare_ = 0.0;
    bool have_spare_ = false;
};

/// Substream tags. Each (tag, index) pair names one independent stream.
namespace streams {
inline constexpr std::uint64_t adjacency = 0x41;       // reservoir network weights
inline constexpr std::uint64_t input_coupling = 0x42;  // input coupling weights
inline constexpr std::uint64_t input_bias = 0x43;      // node bias vector
inline constexpr std::uint64_t reservoir = 0x52;       // per-ensemble reservoir seeds
inline constexpr std::uint64_t train_ic = 0x54;        // training data initial conditions
inline constexpr std::uint64_t test_ic = 0x55;         // testing data initial conditions
inline constexpr std::uint64_t noise = 0x4E;           // training input noise
inline constexpr std::uint64_t misc = 0x4D;            // anything else (documented at use)
}  // namespace streams

/// Derive the seed of substream (tag, index) from a base seed.
///
/// The derivation is two rounds of SplitMix64 mixing, so substreams with
/// different tags or indices are decorrelated for any base seed.
inline std::uint64_t substream_seed(std::uint64_t base, std::uint64_t tag,
                                    std::uint64_t index = 0) {
    SplitMix64 outer(base ^ (tag * 0xD6E8FEB86659FD93ULL));
    std::uint64_t stage = outer.next();
    SplitMix64 inner(stage + index * 0xA24BAED4963EE407ULL);
    return inner.next();
}

}  // namespace rescomp
