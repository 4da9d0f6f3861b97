#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <variant>
#include <vector>

#include "tclagg/gaussian.hpp"
#include "tclagg/partition.hpp"
#include "tclagg/rng.hpp"
#include "tclagg/tcl.hpp"

namespace tclagg {

enum class ChainKind { Stochastic, DeterministicBaseline };

/**
 * Finite Markov chain of a single TCL on 2n (mode, bin) states.
 *
 * State indexing: OFF bins occupy rows/columns 0..n-1 and ON bins n..2n-1,
 * i.e. state = mode*n + bin. Rows are source states; P is row-stochastic.
 *
 * For the stochastic abstraction the two unbounded tail bins are rendered
 * absorbing by default (unit self-loop rows). absorbing_tails = false keeps
 * the kernel rows from the tail representatives instead; that variant has a
 * unique unit eigenvalue and is the one handed to model-order reduction.
 */
struct MarkovChainModel {
    Eigen::MatrixXd P;
    ChainKind kind = ChainKind::Stochastic;
    TclParams params;
    bool absorbing_tails = true;
    double anchor_theta_s = 0.0; ///< set-point the switch structure uses
    std::optional<TemperaturePartition> partition; ///< Stochastic only
    std::vector<double> bin_edges;       ///< baseline: n_d+1 edges over the dead-band
    std::vector<double> representatives; ///< size n(), per-bin representatives

    int n() const { return static_cast<int>(P.rows()) / 2; }
    int dim() const { return static_cast<int>(P.rows()); }

    /// Bin containing theta (baseline bins clamp outside the dead-band).
    int bin_of_theta(double theta) const {
        if (kind == ChainKind::Stochastic) return partition->bin_of(theta);
        const int nd = n();
        const double w = (bin_edges.back() - bin_edges.front()) / nd;
        int b = static_cast<int>(std::floor((theta - bin_edges.front()) / w));
        return std::clamp(b, 0, nd - 1);
    }

    bool is_absorbing_state(int state) const {
        if (kind != ChainKind::Stochastic || !absorbing_tails) return false;
        const int b = state % n();
        return b == 0 || b == n() - 1;
    }
};

/**
 * Gaussian transition masses shared by every set-point: T_mode(i, j) is the
 * probability that a TCL at representative i in the given mode lands in bin j
 * after one step. They depend on the partition and temperature dynamics only,
 * not on where the dead-band sits.
 */
struct KernelMarginals {
    Eigen::MatrixXd T_off;
    Eigen::MatrixXd T_on;
};

namespace detail {

/// Row of bin masses for N(mu, sigma^2) against the partition's bins.
inline Eigen::RowVectorXd gaussian_row(const TemperaturePartition& part, double mu,
                                       double sigma) {
    const int n = part.n_bins;
    Eigen::RowVectorXd row(n);
    // CDF at every finite boundary once; bin masses telescope, so the row sum
    // is exactly 1 up to rounding.
    double prev = normal_cdf((part.boundaries.front() - mu) / sigma);
    row(0) = prev;
    for (int b = 1; b < n - 1; ++b) {
        const double cur = normal_cdf((part.boundaries[static_cast<std::size_t>(b)] - mu) / sigma);
        row(b) = cur - prev;
        prev = cur;
    }
    row(n - 1) = normal_tail((part.boundaries.back() - mu) / sigma);
    return row;
}

} // namespace detail

inline KernelMarginals build_marginals(const TemperaturePartition& part,
                                       const TclParams& params) {
    params.validate();
    if (params.sigma <= 0.0)
        throw std::invalid_argument(
            "build_marginals: sigma = 0 gives a degenerate kernel; use the "
            "deterministic baseline instead");
    const int n = part.n_bins;
    KernelMarginals km;
    km.T_off.resize(n, n);
    km.T_on.resize(n, n);
    for (int i = 0; i < n; ++i) {
        const double rep = part.representatives[static_cast<std::size_t>(i)];
        km.T_off.row(i) = detail::gaussian_row(part, next_theta(rep, 0, params), params.sigma);
        km.T_on.row(i) = detail::gaussian_row(part, next_theta(rep, 1, params), params.sigma);
    }
    return km;
}

/**
 * Place the mode-conditional Gaussian rows into the 2n x 2n chain. Only the
 * switch structure depends on theta_s; the marginals are reused verbatim.
 * Row-sum defects beyond 1e-12 are renormalized with a warning; defects
 * beyond 1e-9 indicate a broken CDF evaluation and throw.
 */
inline Eigen::MatrixXd assemble_chain(const KernelMarginals& marginals,
                                      const TemperaturePartition& part,
                                      const TclParams& params, double theta_s,
                                      bool absorbing_tails) {
    const int n = part.n_bins;
    const double lo = theta_s - params.delta / 2.0;
    const double hi = theta_s + params.delta / 2.0;
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(2 * n, 2 * n);
    for (int mode = 0; mode <= 1; ++mode) {
        const Eigen::MatrixXd& T = mode == 0 ? marginals.T_off : marginals.T_on;
        for (int b = 0; b < n; ++b) {
            const int s = mode * n + b;
            if (absorbing_tails && part.is_unbounded_bin(b)) {
                P(s, s) = 1.0;
                continue;
            }
            const int next_mode =
                thermostat(mode, part.representatives[static_cast<std::size_t>(b)], lo, hi);
            const double defect = T.row(b).sum() - 1.0;
            if (std::abs(defect) > 1e-9)
                throw NumericalGuardError("assemble_chain: row mass defect above 1e-9");
            P.block(s, next_mode * n, 1, n) = T.row(b);
            if (std::abs(defect) > 1e-12) {
                std::cerr << "tclagg: renormalizing chain row " << s
                          << " (defect " << defect << ")\n";
                P.row(s) /= 1.0 + defect;
            }
        }
    }
    return P;
}

/// Stochastic abstraction of one TCL on the given partition.
inline MarkovChainModel build_chain(const TemperaturePartition& part,
                                    const TclParams& params,
                                    bool absorbing_tails = true) {
    MarkovChainModel model;
    model.kind = ChainKind::Stochastic;
    model.params = params;
    model.absorbing_tails = absorbing_tails;
    model.anchor_theta_s = params.theta_s;
    model.partition = part;
    model.bin_edges = part.boundaries;
    model.representatives = part.representatives;
    model.P = assemble_chain(build_marginals(part, params), part, params,
                             params.theta_s, absorbing_tails);
    return model;
}

/**
 * Deterministic benchmark abstraction: the dead-band alone is split into n_d
 * equal bins per mode, each representative maps under the noiseless dynamics,
 * and the full unit mass lands in the containing bin. Mass leaving the
 * dead-band goes to the nearest bin of the opposite mode, so rows are 0/1.
 */
inline MarkovChainModel build_deterministic_baseline(const TclParams& params,
                                                     int n_d) {
    params.validate();
    if (n_d < 2) throw std::invalid_argument("build_deterministic_baseline: n_d must be >= 2");
    MarkovChainModel model;
    model.kind = ChainKind::DeterministicBaseline;
    model.params = params;
    model.absorbing_tails = false;
    model.anchor_theta_s = params.theta_s;
    const double lo = params.theta_minus();
    const double hi = params.theta_plus();
    const double w = params.delta / n_d;
    model.bin_edges.resize(static_cast<std::size_t>(n_d) + 1);
    for (int k = 0; k <= n_d; ++k)
        model.bin_edges[static_cast<std::size_t>(k)] = lo + k * w;
    model.representatives.resize(static_cast<std::size_t>(n_d));
    for (int b = 0; b < n_d; ++b)
        model.representatives[static_cast<std::size_t>(b)] = lo + (b + 0.5) * w;

    model.P = Eigen::MatrixXd::Zero(2 * n_d, 2 * n_d);
    for (int mode = 0; mode <= 1; ++mode) {
        for (int b = 0; b < n_d; ++b) {
            const double image =
                next_theta(model.representatives[static_cast<std::size_t>(b)], mode, params);
            int next_mode = mode;
            int target;
            if (image > hi) {
                next_mode = 1;      // warming exit: nearest ON bin is the top one
                target = n_d - 1;
            } else if (image < lo) {
                next_mode = 0;      // cooling exit: nearest OFF bin is the bottom one
                target = 0;
            } else {
                target = std::clamp(static_cast<int>(std::floor((image - lo) / w)), 0, n_d - 1);
            }
            model.P(mode * n_d + b, next_mode * n_d + target) = 1.0;
        }
    }
    return model;
}

inline double max_row_defect(const Eigen::MatrixXd& P) {
    return (P.rowwise().sum().array() - 1.0).abs().maxCoeff();
}

/**
 * Structural validation: row-stochasticity within 1e-9, the mode-switch
 * block pattern with exact zeros, and unit self-loops on absorbing rows.
 * Throws std::runtime_error naming the first violation.
 */
inline void validate_chain(const MarkovChainModel& model) {
    const int n = model.n();
    if (max_row_defect(model.P) > 1e-9)
        throw std::runtime_error("validate_chain: row sum defect above 1e-9");
    if ((model.P.array() < 0.0).any())
        throw std::runtime_error("validate_chain: negative transition probability");
    const double lo = model.anchor_theta_s - model.params.delta / 2.0;
    const double hi = model.anchor_theta_s + model.params.delta / 2.0;
    for (int mode = 0; mode <= 1; ++mode) {
        for (int b = 0; b < n; ++b) {
            const int s = mode * n + b;
            if (model.is_absorbing_state(s)) {
                if (model.P(s, s) != 1.0 || model.P.row(s).sum() != 1.0)
                    throw std::runtime_error("validate_chain: absorbing row is not a unit self-loop");
                continue;
            }
            const int next_mode =
                thermostat(mode, model.representatives[static_cast<std::size_t>(b)], lo, hi);
            const int dead = (1 - next_mode) * n;
            if ((model.P.block(s, dead, 1, n).array() != 0.0).any())
                throw std::runtime_error(
                    "validate_chain: nonzero entry outside the switch-structure block");
        }
    }
}

// ---------------------------------------------------------------------------
// Initial distributions
// ---------------------------------------------------------------------------

struct InitialPointMass {
    int mode = 0;
    double theta = 0.0;
};
struct InitialUniformDeadband {
    int mode = 0;
};
struct InitialGaussian {
    int mode = 0;
    double mean = 0.0;
    double stddev = 1.0;
};
using InitialSpec = std::variant<InitialPointMass, InitialUniformDeadband, InitialGaussian>;

/// Draw a population of exact TCL states from the initial specification.
inline PopulationSnapshot materialize_population(const InitialSpec& spec,
                                                 const TclParams& params, long n_p,
                                                 std::uint64_t seed) {
    PopulationSnapshot snap;
    snap.states.resize(static_cast<std::size_t>(n_p));
    for (long j = 0; j < n_p; ++j) {
        RngStream rng = derive_stream(seed, 0x696e6974 /* init */, static_cast<std::uint64_t>(j));
        if (const auto* pm = std::get_if<InitialPointMass>(&spec)) {
            snap.states[static_cast<std::size_t>(j)] = {pm->mode, pm->theta};
        } else if (const auto* u = std::get_if<InitialUniformDeadband>(&spec)) {
            snap.states[static_cast<std::size_t>(j)] = {
                u->mode, rng.next_uniform(params.theta_minus(), params.theta_plus())};
        } else {
            const auto& g = std::get<InitialGaussian>(spec);
            snap.states[static_cast<std::size_t>(j)] = {g.mode,
                                                        rng.next_normal(g.mean, g.stddev)};
        }
    }
    return snap;
}

/// Bin masses of the initial (mode, theta) distribution on the partition.
inline Eigen::VectorXd discretize_initial(const InitialSpec& spec,
                                          const TemperaturePartition& part) {
    const int n = part.n_bins;
    Eigen::VectorXd p0 = Eigen::VectorXd::Zero(2 * n);
    if (const auto* pm = std::get_if<InitialPointMass>(&spec)) {
        p0(part.state_of(pm->mode, part.bin_of(pm->theta))) = 1.0;
    } else if (const auto* u = std::get_if<InitialUniformDeadband>(&spec)) {
        // The dead-band is tiled exactly by the 2l interior bins between
        // theta_minus and theta_plus, each carrying upsilon/delta mass.
        const int first = part.m_steps - part.l_steps + 1;
        const int last = part.m_steps + part.l_steps;
        for (int b = first; b <= last; ++b)
            p0(part.state_of(u->mode, b)) = part.upsilon / part.delta;
    } else {
        const auto& g = std::get<InitialGaussian>(spec);
        if (!(g.stddev > 0.0))
            throw std::invalid_argument("discretize_initial: Gaussian stddev must be > 0");
        p0.segment(g.mode * n, n) =
            detail::gaussian_row(part, g.mean, g.stddev).transpose();
    }
    return p0;
}

/// Validated explicit initial probability vector.
inline Eigen::VectorXd validate_initial_vector(const Eigen::VectorXd& p0) {
    if ((p0.array() < 0.0).any())
        throw std::invalid_argument("initial distribution: negative mass");
    if (std::abs(p0.sum() - 1.0) > 1e-12)
        throw std::invalid_argument("initial distribution: mass does not sum to 1");
    return p0;
}

/// Normalized occupancy histogram of an exact population on the chain's bins.
inline Eigen::VectorXd binned_occupancy(const MarkovChainModel& model,
                                        const PopulationSnapshot& snap) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(model.dim());
    for (const auto& s : snap.states)
        x(s.mode * model.n() + model.bin_of_theta(s.theta)) += 1.0;
    return x / static_cast<double>(snap.states.size());
}

} // namespace tclagg
