#pragma once

#include <cmath>
#include <numbers>

namespace tclagg {

inline constexpr double sqrt_2pi = 2.5066282746310005024;

/// Standard normal density.
inline double normal_pdf(double x) {
    return std::exp(-0.5 * x * x) / sqrt_2pi;
}

/// Standard normal CDF via erfc, accurate in both tails.
inline double normal_cdf(double x) {
    return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

/// Upper tail Q(x) = 1 - Phi(x), evaluated without cancellation.
inline double normal_tail(double x) {
    return 0.5 * std::erfc(x / std::numbers::sqrt2);
}

/// Mass of N(mu, sigma^2) on [lo, hi), lo <= hi; either bound may be infinite.
inline double normal_mass(double mu, double sigma, double lo, double hi) {
    const double zl = (lo - mu) / sigma;
    const double zh = (hi - mu) / sigma;
    // Difference of tails keeps precision when both endpoints sit far right.
    return normal_tail(zl) - normal_tail(zh);
}

} // namespace tclagg
