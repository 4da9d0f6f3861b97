#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace tclagg {

/**
 * Counter-free splittable PRNG built on the splitmix64 mixer.
 *
 * Every consumer derives its own stream from (root seed, label indices), so
 * results are independent of thread schedule and iteration order. Normal
 * variates use a fixed two-uniform Box-Muller step; the draw count per call
 * is constant, which keeps parallel replications bit-reproducible.
 */
class RngStream {
public:
    explicit RngStream(std::uint64_t state) : state_(state) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in (0, 1]; never 0, so it is safe under log().
    double next_uniform() {
        return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller (cosine branch, two uniforms per draw).
    double next_normal() {
        const double u1 = next_uniform();
        const double u2 = next_uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    double next_normal(double mean, double stddev) {
        return mean + stddev * next_normal();
    }

    /// Uniform double in [lo, hi).
    double next_uniform(double lo, double hi) {
        return lo + (next_uniform() - 0x1.0p-53) * (hi - lo);
    }

    /// Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) {
        return next_u64() % n;
    }

private:
    std::uint64_t state_;
};

namespace detail {
inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}
} // namespace detail

/**
 * Derive a child stream from a root seed and up to three labels.
 *
 * The documented splitting scheme: fold each label through the splitmix64
 * finalizer with distinct odd constants. Streams for distinct label tuples
 * are statistically independent and stable across runs and platforms.
 */
inline RngStream derive_stream(std::uint64_t root, std::uint64_t a = 0,
                               std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t s = detail::mix64(root ^ 0x243f6a8885a308d3ULL);
    s = detail::mix64(s ^ (a + 0x13198a2e03707344ULL));
    s = detail::mix64(s ^ (b + 0xa4093822299f31d0ULL));
    s = detail::mix64(s ^ (c + 0x082efa98ec4e6c89ULL));
    return RngStream(s);
}

} // namespace tclagg
