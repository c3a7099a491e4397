#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace ndesteer {

// xorshift64* (Vigna 2014): state update with shifts (12, 25, 27), output
// multiplied by 0x2545F4914F6CDD1D. The seed is expanded through one
// splitmix64 step so that small or zero seeds still give a non-zero state.
// Every distribution below is written out explicitly so streams are
// identical across compilers and standard libraries.
class Xorshift64Star {
public:
    explicit Xorshift64Star(std::uint64_t seed) : state_(splitmix64(seed)) {
        if (state_ == 0) state_ = 0x9E3779B97F4A7C15ULL;
    }

    std::uint64_t next_u64() {
        state_ ^= state_ >> 12;
        state_ ^= state_ << 25;
        state_ ^= state_ >> 27;
        return state_ * 0x2545F4914F6CDD1DULL;
    }

    // [0, 1) with 53 random bits
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // [-1, 1)
    double next_symmetric() { return 2.0 * next_double() - 1.0; }

    // uniform integer in [0, bound), bound > 0 (rejection sampling, no modulo bias)
    std::uint64_t next_below(std::uint64_t bound) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return x % bound;
    }

    // standard normal via Box-Muller, one draw per call
    double next_gaussian() {
        double u1 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    static std::uint64_t splitmix64(std::uint64_t x) {
        x += 0x9E3779B97F4A7C15ULL;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
        return x ^ (x >> 31);
    }

private:
    std::uint64_t state_;
};

}  // namespace ndesteer
