#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "tclagg/aggregate.hpp"
#include "tclagg/chain.hpp"
#include "tclagg/gaussian.hpp"
#include "tclagg/heterogeneity.hpp"

namespace tclagg {

/**
 * Tail parameters of the state-space truncation:
 *   lambda = R*P_rate + |2(theta_s - theta_a) + R*P_rate|
 *   gamma  = (1-a)/(2 sigma) * [ (a^N L + delta)/(1 - a^N) - lambda ]
 *   eps    = exp(-gamma^2/2) / (gamma sqrt(2 pi))      (certified tail bound)
 * gamma <= 0 flags the report as vacuous instead of raising: small horizons
 * or large noise legitimately produce uninformative certificates. q_exact is
 * the exact Gaussian tail at gamma, reported alongside the certified bound.
 */
struct BoundParams {
    double gamma = 0.0;
    double lambda = 0.0;
    double epsilon = std::numeric_limits<double>::quiet_NaN();
    double q_exact = std::numeric_limits<double>::quiet_NaN();
    bool vacuous = false;
};

inline BoundParams compute_bound_params(const TclParams& params,
                                        const TemperaturePartition& partition, int N) {
    params.validate();
    if (N < 1) throw std::invalid_argument("compute_bound_params: N must be >= 1");
    if (params.sigma <= 0.0)
        throw std::invalid_argument("compute_bound_params: sigma must be > 0");
    BoundParams bp;
    bp.lambda = params.R * params.P_rate +
                std::abs(2.0 * (params.theta_s - params.theta_a) + params.R * params.P_rate);
    const double a = params.a();
    const double aN = std::pow(a, N);
    bp.gamma = (1.0 - a) / (2.0 * params.sigma) *
               ((aN * partition.big_l + params.delta) / (1.0 - aN) - bp.lambda);
    if (bp.gamma > 0.0) {
        bp.epsilon = std::exp(-0.5 * bp.gamma * bp.gamma) / (bp.gamma * sqrt_2pi);
        bp.q_exact = normal_tail(bp.gamma);
    } else {
        bp.vacuous = true;
    }
    return bp;
}

struct BoundInputs {
    TclParams params;
    TemperaturePartition partition;
    int N = 2;
    long n_p = 1;
};

/**
 * Abstraction-error certificates for a homogeneous population.
 *
 * single_tcl_bound  = (N-1) [ (N-2)/2 * eps + (2a / (sigma sqrt(2 pi))) v ]
 * population_bound  = n_p * P_rate_on * single_tcl_bound   [kW]
 * local_error       = E_1 from E_k = E + P E_{k+1}, E_N = 0, where E carries
 *                     2 a v / (sigma sqrt(2 pi)) per bin and eps on the
 *                     absorbing bins; n_p * P_rate_on * E_1^T X_0 tightens
 *                     the population bound for initial mass X_0.
 */
struct BoundReport {
    BoundParams params;
    int N = 0;
    long n_p = 0;
    double upsilon_term = 0.0; ///< 2 a v / (sigma sqrt(2 pi))
    double single_tcl_bound = std::numeric_limits<double>::infinity();
    double population_bound_kw = std::numeric_limits<double>::infinity();
    Eigen::VectorXd local_error;
    bool vacuous = false;

    double tightened_bound_kw(const Eigen::VectorXd& X0, double p_rate_on) const {
        return static_cast<double>(n_p) * p_rate_on * local_error.dot(X0);
    }
};

inline BoundReport homogeneous_population_bound(const BoundInputs& in,
                                                const MarkovChainModel& chain) {
    if (in.N < 2)
        throw std::invalid_argument("homogeneous_population_bound: N must be >= 2");
    BoundReport rep;
    rep.params = compute_bound_params(in.params, in.partition, in.N);
    rep.N = in.N;
    rep.n_p = in.n_p;
    rep.vacuous = rep.params.vacuous;
    const double a = in.params.a();
    rep.upsilon_term = 2.0 * a * in.partition.upsilon / (in.params.sigma * sqrt_2pi);
    if (!rep.vacuous) {
        rep.single_tcl_bound =
            (in.N - 1) * (0.5 * (in.N - 2) * rep.params.epsilon + rep.upsilon_term);
        rep.population_bound_kw =
            static_cast<double>(in.n_p) * in.params.p_rate_on() * rep.single_tcl_bound;

        // Local recursion: absorbing entries carry eps, interior ones the
        // upsilon term.
        const int dim = chain.dim();
        const int n = chain.n();
        Eigen::VectorXd e = Eigen::VectorXd::Constant(dim, rep.upsilon_term);
        e(0) = e(n - 1) = e(n) = e(dim - 1) = rep.params.epsilon;
        Eigen::VectorXd ek = Eigen::VectorXd::Zero(dim);
        for (int k = in.N - 1; k >= 1; --k) ek = e + chain.P * ek;
        rep.local_error = ek;
    }
    return rep;
}

/// Convenience wrapper that builds the chain itself.
inline BoundReport homogeneous_population_bound(const BoundInputs& in) {
    return homogeneous_population_bound(in, build_chain(in.partition, in.params));
}

/**
 * Value-function recursion on the chain: W_N is the indicator of the
 * acceptance set (bins whose representative switches, or stays, ON) and
 * W_k = P W_{k+1}. With absorbing tails the four tail entries are pinned to
 * their indicator values for every k; building from a non-absorbing chain
 * leaves the recursion unpinned. W_1(state) approximates E[m(N) | state].
 */
struct ValueFunctionTable {
    std::vector<Eigen::VectorXd> W; ///< W[k-1] holds W_k, k = 1..N
    Eigen::VectorXd target_mask;

    const Eigen::VectorXd& w1() const { return W.front(); }
};

inline Eigen::VectorXd acceptance_mask(const MarkovChainModel& chain) {
    const int n = chain.n();
    const TclParams& p = chain.params;
    Eigen::VectorXd mask = Eigen::VectorXd::Zero(2 * n);
    for (int mode = 0; mode <= 1; ++mode)
        for (int b = 0; b < n; ++b)
            if (thermostat(mode, chain.representatives[static_cast<std::size_t>(b)],
                           p.theta_minus(), p.theta_plus()) == 1)
                mask(mode * n + b) = 1.0;
    return mask;
}

inline ValueFunctionTable chain_value_functions(const MarkovChainModel& chain, int N) {
    if (N < 1) throw std::invalid_argument("chain_value_functions: N must be >= 1");
    const int n = chain.n();
    const int dim = chain.dim();
    ValueFunctionTable table;
    table.target_mask = acceptance_mask(chain);
    table.W.assign(static_cast<std::size_t>(N), Eigen::VectorXd());
    Eigen::VectorXd w = table.target_mask;
    table.W[static_cast<std::size_t>(N - 1)] = w;
    for (int k = N - 1; k >= 1; --k) {
        w = chain.P * w;
        if (chain.absorbing_tails) {
            w(0) = w(n) = 0.0;
            w(n - 1) = w(dim - 1) = 1.0;
        }
        table.W[static_cast<std::size_t>(k - 1)] = w;
    }
    return table;
}

/**
 * Clustered-population bound: the worst homogeneous certificate over the
 * sampled parameter values plus the clustering term
 * n_p [ P_rate_on_bar (N-1) h_a + 1 ] upsilon_a.
 */
inline double clustered_population_bound(const HeterogeneitySpec& spec,
                                         const ClusteredModel& model,
                                         const TemperaturePartition& partition, int N,
                                         double h_a) {
    if (N < 2)
        throw std::invalid_argument("clustered_population_bound: N must be >= 2");
    double worst = 0.0;
    for (std::size_t j = 0; j < spec.values.size(); ++j) {
        const TclParams pj = member_params(spec, j);
        const BoundParams bp = compute_bound_params(pj, partition, N);
        if (bp.vacuous) return std::numeric_limits<double>::infinity();
        const double single =
            (N - 1) * (0.5 * (N - 2) * bp.epsilon +
                       2.0 * pj.a() * partition.upsilon / (pj.sigma * sqrt_2pi));
        worst = std::max(worst, static_cast<double>(spec.n_p()) * pj.p_rate_on() * single);
    }
    return worst + static_cast<double>(spec.n_p()) *
                       (model.p_rate_on_bar * (N - 1) * h_a + 1.0) * model.upsilon_a;
}

/// Observed vs certified abstraction error at horizon N.
struct EmpiricalErrorResult {
    double mc_mean_kw = 0.0;
    double mc_stderr_kw = 0.0;
    double abstract_mean_kw = 0.0;
    double observed_error_kw = 0.0;
    double bound_kw = 0.0;
    bool vacuous = false;
};

/**
 * Monte Carlo check of the population bound: simulate the exact population
 * from the given initial condition, compare E[y(N)] against the chain
 * prediction H (P^T)^N X_0, and report both sides with the certificate.
 */
inline EmpiricalErrorResult empirical_abstraction_error(
    const TclParams& params, const TemperaturePartition& partition, int N, long n_p,
    long runs, std::uint64_t seed, const InitialSpec& init) {
    const auto chain = build_chain(partition, params);
    const BoundInputs in{params, partition, N, n_p};
    const auto report = homogeneous_population_bound(in, chain);

    const auto pop = materialize_population(init, params, n_p, seed);
    const auto mc = mc_expected_power(pop, params, N, runs, seed);

    const Eigen::VectorXd X0 = discretize_initial(init, partition);
    const auto y_abs = mean_power_trajectory(
        chain.P, output_row(chain.dim(), n_p, params.p_rate_on()), X0, N);

    EmpiricalErrorResult res;
    res.mc_mean_kw = mc.mean_kw[static_cast<std::size_t>(N)];
    res.mc_stderr_kw = mc.stderr_kw[static_cast<std::size_t>(N)];
    res.abstract_mean_kw = y_abs[static_cast<std::size_t>(N)];
    res.observed_error_kw = std::abs(res.mc_mean_kw - res.abstract_mean_kw);
    res.bound_kw = report.population_bound_kw;
    res.vacuous = report.vacuous;
    return res;
}

} // namespace tclagg
