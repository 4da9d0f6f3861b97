#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "tclagg/chain.hpp"
#include "tclagg/rng.hpp"

namespace tclagg {

/// Normalized bin-occupancy vector of a population of n_p chains.
struct AggregateState {
    Eigen::VectorXd X;
    long n_p = 0;

    void validate(double tol = 1e-9) const {
        if (std::abs(X.sum() - 1.0) > tol)
            throw std::runtime_error("AggregateState: occupancies do not sum to 1");
        if ((X.array() < -tol).any())
            throw std::runtime_error("AggregateState: negative occupancy");
    }
};

/// Output row H = n_p * P_rate_on * [0_n, 1_n] mapping occupancies to kW.
inline Eigen::RowVectorXd output_row(int dim, long n_p, double p_rate_on) {
    Eigen::RowVectorXd H = Eigen::RowVectorXd::Zero(dim);
    H.tail(dim / 2).setConstant(static_cast<double>(n_p) * p_rate_on);
    return H;
}

/// Aggregated population model: chain + output map.
struct AggregateModel {
    MarkovChainModel chain;
    long n_p = 0;

    Eigen::RowVectorXd H() const {
        return output_row(chain.dim(), n_p, chain.params.p_rate_on());
    }
    double output_kw(const Eigen::VectorXd& X) const { return H() * X; }
};

/**
 * State-dependent noise covariance of the occupancy update:
 *   var(i)   = (1/n_p) sum_r X_r P_ri (1 - P_ri)
 *   cov(i,j) = -(1/n_p) sum_r X_r P_ri P_rj
 * i.e. (diag(P^T X) - P^T diag(X) P) / n_p, symmetric PSD for X >= 0.
 */
inline Eigen::MatrixXd sigma_of_x(const Eigen::VectorXd& X, const Eigen::MatrixXd& P,
                                  long n_p) {
    const Eigen::VectorXd mu = P.transpose() * X;
    Eigen::MatrixXd sigma = -(P.transpose() * X.asDiagonal() * P);
    sigma.diagonal() += mu;
    sigma /= static_cast<double>(n_p);
    return 0.5 * (sigma + sigma.transpose());
}

/**
 * Quadratic-form identity used by the SMPC cost: returns both
 *   lhs = nu^T Sigma(X) nu   and   rhs = (1/n_p) R(nu^T, P^T) X
 * with R(C, D) = C^{o2} D - (C D)^{o2} (entrywise squares).
 */
inline std::pair<double, double> quadratic_form_identity(const Eigen::VectorXd& nu,
                                                         const Eigen::VectorXd& X,
                                                         const Eigen::MatrixXd& P,
                                                         long n_p) {
    const double lhs = nu.transpose() * sigma_of_x(X, P, n_p) * nu;
    const Eigen::RowVectorXd ct = nu.transpose();
    const Eigen::RowVectorXd r =
        ct.array().square().matrix() * P.transpose() -
        (ct * P.transpose()).array().square().matrix();
    const double rhs = (r * X)(0) / static_cast<double>(n_p);
    return {lhs, rhs};
}

enum class NoiseMode { MeanOnly, Gaussian, ExactMultinomial };

namespace detail {

/// Round n_p * X to integer counts summing to n_p (largest remainder, ties
/// to the lower index).
inline std::vector<long> apportion_counts(const Eigen::VectorXd& X, long n_p) {
    const int dim = static_cast<int>(X.size());
    std::vector<long> counts(static_cast<std::size_t>(dim));
    std::vector<std::pair<double, int>> remainders;
    long total = 0;
    for (int i = 0; i < dim; ++i) {
        const double exact = std::max(0.0, X(i)) * static_cast<double>(n_p);
        counts[static_cast<std::size_t>(i)] = static_cast<long>(std::floor(exact));
        total += counts[static_cast<std::size_t>(i)];
        remainders.push_back({exact - std::floor(exact), i});
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (std::size_t k = 0; total < n_p && k < remainders.size(); ++k, ++total)
        ++counts[static_cast<std::size_t>(remainders[k].second)];
    while (total > n_p) { // only when X overshoots 1 by rounding
        for (auto& c : counts)
            if (c > 0 && total > n_p) {
                --c;
                --total;
            }
    }
    return counts;
}

/// Sample from N(0, Sigma) respecting the degenerate all-ones direction:
/// eigendecompose and zero every rounding-level eigenvalue (negative ones and
/// positive ones below eps * lambda_max), so the conserved direction carries
/// exactly no noise.
inline Eigen::VectorXd sample_degenerate_gaussian(const Eigen::MatrixXd& sigma,
                                                  RngStream& rng) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma);
    Eigen::VectorXd lam = es.eigenvalues();
    const double cutoff = std::max(lam.maxCoeff(), 0.0) * 1e-13;
    for (int i = 0; i < lam.size(); ++i)
        if (lam(i) < cutoff) lam(i) = 0.0;
    Eigen::VectorXd z(sigma.rows());
    for (int i = 0; i < z.size(); ++i) z(i) = rng.next_normal();
    return es.eigenvectors() * lam.cwiseSqrt().asDiagonal() * z;
}

} // namespace detail

/**
 * One step of the occupancy dynamics X(t+1) = P^T X(t) + W(t).
 *
 *  - MeanOnly:          W = 0.
 *  - Gaussian:          W ~ N(0, Sigma(X)); the sampled noise sums to ~0 so
 *                       the simplex constraint is preserved (entries may go
 *                       slightly negative, as the Gaussian limit allows).
 *  - ExactMultinomial:  the finite-population law; n_p*X is apportioned to
 *                       integer counts and every agent draws its next bin
 *                       from its source row.
 */
inline AggregateState aggregate_step(const AggregateState& state,
                                     const Eigen::MatrixXd& P, NoiseMode mode,
                                     RngStream& rng) {
    const long n_p = state.n_p;
    AggregateState out;
    out.n_p = n_p;
    switch (mode) {
    case NoiseMode::MeanOnly:
        out.X = P.transpose() * state.X;
        break;
    case NoiseMode::Gaussian: {
        out.X = P.transpose() * state.X +
                detail::sample_degenerate_gaussian(sigma_of_x(state.X, P, n_p), rng);
        break;
    }
    case NoiseMode::ExactMultinomial: {
        const int dim = static_cast<int>(P.rows());
        const auto counts = detail::apportion_counts(state.X, n_p);
        Eigen::VectorXd next = Eigen::VectorXd::Zero(dim);
        std::vector<double> cumrow(static_cast<std::size_t>(dim));
        for (int r = 0; r < dim; ++r) {
            if (counts[static_cast<std::size_t>(r)] == 0) continue;
            double acc = 0.0;
            for (int j = 0; j < dim; ++j) {
                acc += P(r, j);
                cumrow[static_cast<std::size_t>(j)] = acc;
            }
            for (long k = 0; k < counts[static_cast<std::size_t>(r)]; ++k) {
                const double u = rng.next_uniform() * acc;
                const auto it = std::lower_bound(cumrow.begin(), cumrow.end(), u);
                next(static_cast<int>(it - cumrow.begin())) += 1.0;
            }
        }
        out.X = next / static_cast<double>(n_p);
        break;
    }
    }
    return out;
}

/// Mean trajectory y(t) = H (P^T)^t X0 for t = 0..steps.
inline std::vector<double> mean_power_trajectory(const Eigen::MatrixXd& P,
                                                 const Eigen::RowVectorXd& H,
                                                 const Eigen::VectorXd& X0,
                                                 long steps) {
    std::vector<double> y;
    y.reserve(static_cast<std::size_t>(steps) + 1);
    Eigen::VectorXd X = X0;
    y.push_back(H * X);
    for (long t = 0; t < steps; ++t) {
        X = P.transpose() * X;
        y.push_back(H * X);
    }
    return y;
}

/**
 * Reduced input/output form of the occupancy dynamics.
 *
 * The last state is eliminated through the conservation constraint
 * sum_r X_r = 1, giving X_bar(t+1) = A X_bar(t) + B u(t) with u the unit
 * step, y = C X_bar + D. The output pair (C, D) is scaled by n_p*P_rate_on
 * so y is in kW, matching the full model's output map.
 */
struct ReducedModel {
    Eigen::MatrixXd A;
    Eigen::VectorXd B;
    Eigen::RowVectorXd C;
    double D = 0.0;
    int order = 0;
    Eigen::VectorXd hankel;      ///< Hankel singular values (set by reduce_order)
    Eigen::MatrixXd left_proj;   ///< maps a full X_bar(0) to the reduced state
    bool truncated = false;

    /// Reduced initial state for a full occupancy vector X0 (sum X0 = 1).
    Eigen::VectorXd initial_state(const Eigen::VectorXd& X0) const {
        const Eigen::VectorXd xbar = X0.head(X0.size() - 1);
        return truncated ? Eigen::VectorXd(left_proj.transpose() * xbar) : xbar;
    }

    /// y(t) = C x(t) + D u, x(t+1) = A x(t) + B u, u = 1, for t = 0..steps.
    std::vector<double> step_response(const Eigen::VectorXd& x0, long steps) const {
        std::vector<double> y;
        y.reserve(static_cast<std::size_t>(steps) + 1);
        Eigen::VectorXd x = x0;
        y.push_back((C * x)(0) + D);
        for (long t = 0; t < steps; ++t) {
            x = A * x + B;
            y.push_back((C * x)(0) + D);
        }
        return y;
    }
};

/**
 * State elimination: partition P into the leading (2n-1) block Omega11, the
 * last row Omega21 and column Omega12; then A^T = Omega11 - 1 Omega21,
 * B^T = Omega21, C = -n_p*P_rate_on*[1_n, 0], D = n_p*P_rate_on. The chain's
 * spectrum satisfies lambda(P) = lambda(A) u {1}.
 */
inline ReducedModel eliminate_state(const Eigen::MatrixXd& P, long n_p,
                                    double p_rate_on) {
    const int dim = static_cast<int>(P.rows());
    const int nb = dim - 1;
    const int n = dim / 2;
    ReducedModel rm;
    const Eigen::MatrixXd omega11 = P.topLeftCorner(nb, nb);
    const Eigen::RowVectorXd omega21 = P.bottomLeftCorner(1, nb);
    rm.A = (omega11 - Eigen::VectorXd::Ones(nb) * omega21).transpose();
    rm.B = omega21.transpose();
    const double scale = static_cast<double>(n_p) * p_rate_on;
    rm.C = Eigen::RowVectorXd::Zero(nb);
    rm.C.head(n).setConstant(-scale);
    rm.D = scale;
    rm.order = nb;
    return rm;
}

inline ReducedModel eliminate_state(const MarkovChainModel& chain, long n_p) {
    return eliminate_state(chain.P, n_p, chain.params.p_rate_on());
}

} // namespace tclagg
