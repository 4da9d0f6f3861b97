#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <stdexcept>

#include "tclagg/aggregate.hpp"

namespace tclagg {

inline double spectral_radius(const Eigen::MatrixXd& A) {
    Eigen::EigenSolver<Eigen::MatrixXd> es(A, /*computeEigenvectors=*/false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

namespace detail {

/// Solve X = A X A^T + Q for stable A by Smith's doubling iteration.
inline Eigen::MatrixXd solve_discrete_lyapunov(const Eigen::MatrixXd& A,
                                               const Eigen::MatrixXd& Q) {
    Eigen::MatrixXd X = Q;
    Eigen::MatrixXd Ak = A;
    for (int it = 0; it < 128; ++it) {
        const Eigen::MatrixXd inc = Ak * X * Ak.transpose();
        X += inc;
        if (inc.norm() <= 1e-15 * (1.0 + X.norm())) return 0.5 * (X + X.transpose());
        Ak = Ak * Ak;
    }
    throw NumericalGuardError("solve_discrete_lyapunov: no convergence (A not stable?)");
}

/// Factor a PSD matrix as Z Z^T keeping only numerically nonzero directions.
inline Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& S) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (S + S.transpose()));
    const Eigen::VectorXd lam = es.eigenvalues();
    const double cutoff = std::max(lam.maxCoeff(), 0.0) * 1e-15;
    int rank = 0;
    for (int i = 0; i < lam.size(); ++i)
        if (lam(i) > cutoff) ++rank;
    Eigen::MatrixXd Z(S.rows(), std::max(rank, 1));
    Z.setZero();
    int c = 0;
    for (int i = 0; i < lam.size(); ++i)
        if (lam(i) > cutoff) Z.col(c++) = es.eigenvectors().col(i) * std::sqrt(lam(i));
    return Z;
}

} // namespace detail

/**
 * Balanced truncation to order k (square-root algorithm).
 *
 * Gramians P_c, Q_o solve the discrete Lyapunov equations for (A, B) and
 * (A^T, C^T); the Hankel singular values are the singular values of
 * Z_q^T Z_p. Requires a stable A; the truncated step-response error obeys
 * the standard bound 2 * sum_{i>k} sigma_i.
 */
inline ReducedModel reduce_order(const ReducedModel& full, int k) {
    if (k < 1 || k > full.order)
        throw std::invalid_argument("reduce_order: order out of range");
    if (spectral_radius(full.A) >= 1.0 - 1e-13)
        throw NumericalGuardError("reduce_order: A is not stable (spectral radius >= 1)");

    const Eigen::MatrixXd Pc =
        detail::solve_discrete_lyapunov(full.A, full.B * full.B.transpose());
    const Eigen::MatrixXd Qo = detail::solve_discrete_lyapunov(
        full.A.transpose(), full.C.transpose() * full.C);

    const Eigen::MatrixXd Zp = detail::psd_factor(Pc);
    const Eigen::MatrixXd Zq = detail::psd_factor(Qo);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Zq.transpose() * Zp,
                                          Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd sv = svd.singularValues();
    const int usable = static_cast<int>(sv.size());
    if (k > usable)
        throw std::invalid_argument(
            "reduce_order: requested order exceeds the numerical Hankel rank");

    const Eigen::VectorXd scale = sv.head(k).cwiseMax(1e-150).cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd W = Zq * svd.matrixU().leftCols(k) * scale.asDiagonal();
    const Eigen::MatrixXd V = Zp * svd.matrixV().leftCols(k) * scale.asDiagonal();

    ReducedModel red;
    red.A = W.transpose() * full.A * V;
    red.B = W.transpose() * full.B;
    red.C = full.C * V;
    red.D = full.D;
    red.order = k;
    red.hankel = sv;
    red.left_proj = full.truncated ? Eigen::MatrixXd(full.left_proj * W) : W;
    red.truncated = true;
    return red;
}

/// Standard truncation error bound 2 * sum_{i>k} sigma_i for the kept order.
inline double truncation_error_bound(const Eigen::VectorXd& hankel, int k) {
    double s = 0.0;
    for (int i = k; i < hankel.size(); ++i) s += hankel(i);
    return 2.0 * s;
}

} // namespace tclagg
