#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "tclagg/aggregate.hpp"
#include "tclagg/chain.hpp"

namespace tclagg {

/**
 * Heterogeneous population description: one varied parameter and its n_p
 * sampled values. The set-point and dead-band stay common to the population
 * (they anchor the shared temperature grid), so they cannot be varied.
 */
struct HeterogeneitySpec {
    TclParams base;
    std::string parameter; ///< one of C, R, P_rate, eta, theta_a, sigma
    std::vector<double> values;

    long n_p() const { return static_cast<long>(values.size()); }
};

inline TclParams apply_parameter(TclParams p, const std::string& name, double value) {
    if (name == "C") p.C = value;
    else if (name == "R") p.R = value;
    else if (name == "P_rate") p.P_rate = value;
    else if (name == "eta") p.eta = value;
    else if (name == "theta_a") p.theta_a = value;
    else if (name == "sigma") p.sigma = value;
    else if (name == "theta_s" || name == "delta")
        throw std::invalid_argument(
            "heterogeneity: varying " + name + " would break the shared grid");
    else
        throw std::invalid_argument("heterogeneity: unknown parameter " + name);
    return p;
}

inline void validate_spec(const HeterogeneitySpec& spec) {
    if (spec.values.empty())
        throw std::invalid_argument("heterogeneity: empty sample list");
    for (double v : spec.values) apply_parameter(spec.base, spec.parameter, v).validate();
}

inline TclParams member_params(const HeterogeneitySpec& spec, std::size_t j) {
    return apply_parameter(spec.base, spec.parameter, spec.values[j]);
}

/// Draw n_p parameter values uniformly from [lo, hi] (seeded).
inline HeterogeneitySpec sample_uniform_spec(const TclParams& base,
                                             const std::string& parameter, double lo,
                                             double hi, long n_p, std::uint64_t seed) {
    HeterogeneitySpec spec;
    spec.base = base;
    spec.parameter = parameter;
    spec.values.resize(static_cast<std::size_t>(n_p));
    for (long j = 0; j < n_p; ++j) {
        RngStream rng = derive_stream(seed, 0x686574 /* het */, static_cast<std::uint64_t>(j));
        spec.values[static_cast<std::size_t>(j)] = rng.next_uniform(lo, hi);
    }
    validate_spec(spec);
    return spec;
}

/**
 * Exact second moments of the lumped heterogeneous one-step law.
 *
 * Conditioning on the occupancy label with equal weight on every consistent
 * agent-to-bin configuration, the next normalized occupancy has
 *   mean   = P_bar^T X
 *   cov    = (1/n_p) diag(mu_bar)
 *          + (1/(n_p-1)) [ mu_bar mu_bar^T - avg_a mu(a) mu(a)^T ]
 *          - (1/(n_p-1)) P_bar^T diag(X) P_bar
 *          + (1/(n_p(n_p-1))) avg_a P(a)^T diag(X) P(a),
 * with mu(a) = P(a)^T X and mu_bar their average. For identical members this
 * collapses exactly to the homogeneous generalized-multinomial covariance.
 */
inline Eigen::MatrixXd heterogeneous_covariance(const std::vector<Eigen::MatrixXd>& members,
                                                const Eigen::VectorXd& X) {
    const long n_p = static_cast<long>(members.size());
    if (n_p < 2)
        throw std::invalid_argument(
            "heterogeneous_covariance: population must have n_p >= 2");
    const int dim = static_cast<int>(X.size());
    Eigen::VectorXd mu_bar = Eigen::VectorXd::Zero(dim);
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::MatrixXd G_bar = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::MatrixXd P_bar = Eigen::MatrixXd::Zero(dim, dim);
    for (const auto& P : members) {
        const Eigen::VectorXd mu = P.transpose() * X;
        mu_bar += mu;
        S += mu * mu.transpose();
        G_bar += P.transpose() * X.asDiagonal() * P;
        P_bar += P;
    }
    const double np = static_cast<double>(n_p);
    mu_bar /= np;
    S /= np;
    G_bar /= np;
    P_bar /= np;

    Eigen::MatrixXd cov = Eigen::MatrixXd(mu_bar.asDiagonal()) / np;
    cov += (mu_bar * mu_bar.transpose() - S) / (np - 1.0);
    cov -= (P_bar.transpose() * X.asDiagonal() * P_bar) / (np - 1.0);
    cov += G_bar / (np * (np - 1.0));
    return 0.5 * (cov + cov.transpose());
}

/**
 * Averaged abstraction of a heterogeneous population: the mean dynamics use
 * P_bar = avg_a P(a) and the output uses the mean ON power. The entrywise
 * second-moment matrix M2 = avg_a P o P is kept for reporting; exact
 * covariance evaluation needs the member chains, which are retained when
 * requested.
 */
struct AveragedAggregateModel {
    Eigen::MatrixXd P_bar;
    Eigen::MatrixXd M2;
    KernelMarginals marginals_bar; ///< averaged per-mode Gaussian masses
    double p_rate_on_bar = 0.0;
    long n_p = 0;
    TemperaturePartition partition;
    TclParams base;
    std::vector<Eigen::MatrixXd> members; ///< empty unless retained

    Eigen::RowVectorXd H() const {
        return output_row(static_cast<int>(P_bar.rows()), n_p, p_rate_on_bar);
    }

    Eigen::MatrixXd covariance(const Eigen::VectorXd& X) const {
        if (members.empty())
            throw std::logic_error(
                "AveragedAggregateModel: member chains were not retained");
        return heterogeneous_covariance(members, X);
    }
};

inline AveragedAggregateModel build_averaged_model(const HeterogeneitySpec& spec,
                                                   const TemperaturePartition& partition,
                                                   bool retain_members = true) {
    validate_spec(spec);
    if (spec.n_p() < 2)
        throw std::invalid_argument("build_averaged_model: n_p must be >= 2");
    AveragedAggregateModel model;
    model.n_p = spec.n_p();
    model.partition = partition;
    model.base = spec.base;
    const int dim = partition.dim();
    const int n = partition.n_bins;
    model.P_bar = Eigen::MatrixXd::Zero(dim, dim);
    model.M2 = Eigen::MatrixXd::Zero(dim, dim);
    model.marginals_bar.T_off = Eigen::MatrixXd::Zero(n, n);
    model.marginals_bar.T_on = Eigen::MatrixXd::Zero(n, n);
    if (retain_members) model.members.reserve(spec.values.size());
    for (std::size_t j = 0; j < spec.values.size(); ++j) {
        const TclParams pj = member_params(spec, j);
        const auto km = build_marginals(partition, pj);
        const Eigen::MatrixXd P =
            assemble_chain(km, partition, pj, pj.theta_s, /*absorbing_tails=*/true);
        model.P_bar += P;
        model.M2 += P.cwiseProduct(P);
        model.marginals_bar.T_off += km.T_off;
        model.marginals_bar.T_on += km.T_on;
        model.p_rate_on_bar += pj.p_rate_on();
        if (retain_members) model.members.push_back(P);
    }
    const double np = static_cast<double>(spec.n_p());
    model.P_bar /= np;
    model.M2 /= np;
    model.marginals_bar.T_off /= np;
    model.marginals_bar.T_on /= np;
    model.p_rate_on_bar /= np;
    return model;
}

/**
 * Clustered abstraction: the varied parameter's range is split into uniform
 * bins, members are assigned by containment (edge values go to the
 * lower-index cluster), and every cluster is modeled as a homogeneous
 * population at its representative.
 */
struct ClusteredModel {
    struct Cluster {
        double alpha_rep = 0.0;
        long size = 0;
        MarkovChainModel chain;
    };
    std::vector<Cluster> clusters;
    double upsilon_a = 0.0; ///< max distance of any member (or rep) pair in a cluster
    std::string parameter;
    long n_p = 0;
    double p_rate_on_bar = 0.0; ///< sum_i (n_i/n_p) P_rate_on(alpha_i)
};

inline ClusteredModel build_clustered_model(const HeterogeneitySpec& spec,
                                            const TemperaturePartition& partition,
                                            int n_clusters) {
    validate_spec(spec);
    if (n_clusters < 1)
        throw std::invalid_argument("build_clustered_model: n_clusters must be >= 1");
    const double lo = *std::min_element(spec.values.begin(), spec.values.end());
    const double hi = *std::max_element(spec.values.begin(), spec.values.end());
    const double width = (hi - lo) / n_clusters;

    std::vector<std::vector<double>> assigned(static_cast<std::size_t>(n_clusters));
    for (double v : spec.values) {
        int idx = 0;
        if (width > 0.0) {
            // Edge values belong to the lower-index cluster.
            idx = static_cast<int>(std::ceil((v - lo) / width)) - 1;
            idx = std::clamp(idx, 0, n_clusters - 1);
        }
        assigned[static_cast<std::size_t>(idx)].push_back(v);
    }

    ClusteredModel model;
    model.parameter = spec.parameter;
    model.n_p = spec.n_p();
    for (int i = 0; i < n_clusters; ++i) {
        const auto& vals = assigned[static_cast<std::size_t>(i)];
        if (vals.empty()) continue;
        ClusteredModel::Cluster cl;
        const auto [vmin, vmax] = std::minmax_element(vals.begin(), vals.end());
        // Bin midpoint representative; a degenerate cluster snaps to its
        // single value so it is modeled by its exact chain.
        cl.alpha_rep = (*vmin == *vmax) ? *vmin : lo + (i + 0.5) * width;
        cl.size = static_cast<long>(vals.size());
        const TclParams rep_params =
            apply_parameter(spec.base, spec.parameter, cl.alpha_rep);
        cl.chain = build_chain(partition, rep_params);
        for (double v : vals)
            model.upsilon_a = std::max(
                {model.upsilon_a, std::abs(v - cl.alpha_rep), *vmax - *vmin});
        model.p_rate_on_bar +=
            static_cast<double>(cl.size) / spec.n_p() * rep_params.p_rate_on();
        model.clusters.push_back(std::move(cl));
    }
    return model;
}

/// Total mean power of the clustered population, summed over cluster outputs.
inline std::vector<double> clustered_mean_power(const ClusteredModel& model,
                                                const InitialSpec& init, long steps) {
    std::vector<double> y(static_cast<std::size_t>(steps) + 1, 0.0);
    for (const auto& cl : model.clusters) {
        const Eigen::VectorXd X0 = discretize_initial(init, *cl.chain.partition);
        const auto yc = mean_power_trajectory(
            cl.chain.P, output_row(cl.chain.dim(), cl.size, cl.chain.params.p_rate_on()),
            X0, steps);
        for (std::size_t t = 0; t < y.size(); ++t) y[t] += yc[t];
    }
    return y;
}

enum class LipschitzMode { Empirical, ClosedFormCapacitance };

/**
 * Sensitivity constant h_a of the transition matrix with respect to the
 * varied parameter: empirical (max over member pairs of the infinity-norm
 * difference quotient) or the closed form (L + lambda)/(sigma sqrt(2 pi))
 * valid when only the thermal capacitance varies.
 */
inline double lipschitz_constant(const HeterogeneitySpec& spec,
                                 const TemperaturePartition& partition,
                                 LipschitzMode mode) {
    validate_spec(spec);
    if (mode == LipschitzMode::ClosedFormCapacitance) {
        if (spec.parameter != "C")
            throw std::invalid_argument(
                "lipschitz_constant: closed form only covers capacitance heterogeneity");
        const TclParams& b = spec.base;
        const double lambda =
            b.R * b.P_rate + std::abs(2.0 * (b.theta_s - b.theta_a) + b.R * b.P_rate);
        return (partition.big_l + lambda) / (b.sigma * sqrt_2pi);
    }
    // Empirical mode over the distinct sampled values.
    std::vector<double> distinct = spec.values;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < 2) return 0.0;
    std::vector<Eigen::MatrixXd> chains;
    chains.reserve(distinct.size());
    for (double v : distinct)
        chains.push_back(
            build_chain(partition, apply_parameter(spec.base, spec.parameter, v)).P);
    double h_a = 0.0;
    for (std::size_t i = 0; i < distinct.size(); ++i)
        for (std::size_t j = i + 1; j < distinct.size(); ++j) {
            const double dist = std::abs(distinct[i] - distinct[j]);
            const double dP = (chains[i] - chains[j]).cwiseAbs().rowwise().sum().maxCoeff();
            h_a = std::max(h_a, dP / dist);
        }
    return h_a;
}

} // namespace tclagg
