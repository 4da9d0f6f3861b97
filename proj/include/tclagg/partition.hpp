#pragma once

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "tclagg/tcl.hpp"

namespace tclagg {

/**
 * Uniform temperature grid around the dead-band.
 *
 * Boundaries theta_k = theta_s + k*upsilon for k = -m..m, with
 * upsilon = delta / (2*l) so the dead-band edges theta_s -+ delta/2 land on
 * grid points, and L = 2*m*upsilon. Bins per mode:
 *
 *   bin 0        = (-inf, theta_{-m})           (unbounded, flagged absorbing)
 *   bin j        = [theta_{-m+j-1}, theta_{-m+j})   j = 1..2m
 *   bin 2m+1     = [theta_{m}, +inf)            (unbounded, flagged absorbing)
 *
 * so n_bins = 2m+2. Representatives are bin midpoints; the unbounded bins use
 * a point upsilon/2 beyond the finite boundary.
 */
struct TemperaturePartition {
    int l_steps = 0;
    int m_steps = 0;
    double upsilon = 0.0;
    double big_l = 0.0;
    double theta_s = 0.0;
    double delta = 0.0;
    std::vector<double> boundaries;      ///< size 2m+1
    int n_bins = 0;                      ///< n = 2m+2
    std::vector<double> representatives; ///< size n_bins

    /// Boundary theta_k for signed index k in [-m_steps, m_steps].
    double theta_k(int k) const { return boundaries[static_cast<std::size_t>(k + m_steps)]; }

    /// Bin containing theta under the half-open [lower, upper) convention.
    int bin_of(double theta) const {
        const auto it = std::upper_bound(boundaries.begin(), boundaries.end(), theta);
        return static_cast<int>(it - boundaries.begin());
    }

    bool is_unbounded_bin(int bin) const { return bin == 0 || bin == n_bins - 1; }

    /// State index of (mode, bin): OFF states first, then ON states.
    int state_of(int mode, int bin) const { return mode * n_bins + bin; }
    int dim() const { return 2 * n_bins; }
};

inline TemperaturePartition build_partition(const TclParams& params, int l_steps,
                                            int m_steps) {
    params.validate();
    if (l_steps < 1 || l_steps >= m_steps)
        throw std::invalid_argument("build_partition: require 0 < l < m");
    TemperaturePartition part;
    part.l_steps = l_steps;
    part.m_steps = m_steps;
    part.theta_s = params.theta_s;
    part.delta = params.delta;
    part.upsilon = params.delta / (2.0 * l_steps);
    part.big_l = 2.0 * m_steps * part.upsilon;
    part.n_bins = 2 * m_steps + 2;
    part.boundaries.resize(2 * m_steps + 1);
    for (int k = -m_steps; k <= m_steps; ++k)
        part.boundaries[static_cast<std::size_t>(k + m_steps)] =
            params.theta_s + k * part.upsilon;
    part.representatives.resize(part.n_bins);
    part.representatives[0] = part.boundaries.front() - part.upsilon / 2.0;
    for (int b = 1; b <= 2 * m_steps; ++b)
        part.representatives[static_cast<std::size_t>(b)] =
            0.5 * (part.boundaries[static_cast<std::size_t>(b - 1)] +
                   part.boundaries[static_cast<std::size_t>(b)]);
    part.representatives[static_cast<std::size_t>(part.n_bins - 1)] =
        part.boundaries.back() + part.upsilon / 2.0;
    return part;
}

} // namespace tclagg
