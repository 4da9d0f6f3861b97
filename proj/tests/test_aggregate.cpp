#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <complex>

#include "oracle_utils.hpp"
#include "tclagg/aggregate.hpp"
#include "tclagg/reduction.hpp"

using namespace tclagg;

namespace {

TclParams table3(double sigma = 0.032) {
    TclParams p;
    p.theta_s = 20.0;
    p.delta = 0.5;
    p.theta_a = 32.0;
    p.R = 2.0;
    p.C = 10.0;
    p.P_rate = 14.0;
    p.eta = 2.5;
    p.h_seconds = 10.0;
    p.sigma = sigma;
    return p;
}

Eigen::MatrixXd random_stochastic(int dim, RngStream& rng, double floor = 0.0) {
    Eigen::MatrixXd P(dim, dim);
    for (int i = 0; i < dim; ++i) {
        double s = 0.0;
        for (int j = 0; j < dim; ++j) {
            P(i, j) = floor + rng.next_uniform();
            s += P(i, j);
        }
        P.row(i) /= s;
    }
    return P;
}

Eigen::VectorXd random_simplex(int dim, RngStream& rng) {
    Eigen::VectorXd X(dim);
    double s = 0.0;
    for (int i = 0; i < dim; ++i) {
        X(i) = rng.next_uniform();
        s += X(i);
    }
    return X / s;
}

} // namespace

TEST_CASE("sigma_of_x closed forms") {
    RngStream rng = derive_stream(42, 1);
    const Eigen::MatrixXd P = random_stochastic(4, rng);
    const long n_p = 10;

    SUBCASE("unit mass in one bin") {
        Eigen::VectorXd X = Eigen::VectorXd::Zero(4);
        X(2) = 1.0;
        const Eigen::MatrixXd S = sigma_of_x(X, P, n_p);
        for (int i = 0; i < 4; ++i) {
            CHECK(S(i, i) == doctest::Approx(P(2, i) * (1 - P(2, i)) / n_p).epsilon(1e-14));
            for (int j = 0; j < 4; ++j)
                if (i != j)
                    CHECK(S(i, j) == doctest::Approx(-P(2, i) * P(2, j) / n_p).epsilon(1e-14));
        }
    }
    SUBCASE("all-ones vector is annihilated") {
        for (int rep = 0; rep < 20; ++rep) {
            const Eigen::VectorXd X = random_simplex(4, rng);
            const Eigen::VectorXd ones = Eigen::VectorXd::Ones(4);
            CHECK(std::abs(ones.transpose() * sigma_of_x(X, P, n_p) * ones) <= 1e-14);
        }
    }
    SUBCASE("positive semidefinite on random occupancy vectors") {
        for (int rep = 0; rep < 100; ++rep) {
            const Eigen::MatrixXd Pr = random_stochastic(4, rng);
            const Eigen::VectorXd X = random_simplex(4, rng);
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma_of_x(X, Pr, n_p));
            CHECK(es.eigenvalues().minCoeff() >= -1e-10);
        }
    }
}

TEST_CASE("quadratic-form identity") {
    RngStream rng = derive_stream(42, 2);
    SUBCASE("all-ones and zero vectors") {
        const Eigen::MatrixXd P = random_stochastic(5, rng);
        const Eigen::VectorXd X = random_simplex(5, rng);
        auto [l1, r1] = quadratic_form_identity(Eigen::VectorXd::Ones(5), X, P, 7);
        CHECK(std::abs(l1) <= 1e-14);
        CHECK(std::abs(r1) <= 1e-14);
        auto [l0, r0] = quadratic_form_identity(Eigen::VectorXd::Zero(5), X, P, 7);
        CHECK(l0 == 0.0);
        CHECK(r0 == 0.0);
    }
    SUBCASE("100 random cases agree to 1e-12 relative") {
        for (int rep = 0; rep < 100; ++rep) {
            const int dim = 2 + static_cast<int>(rng.next_below(6));
            const Eigen::MatrixXd P = random_stochastic(dim, rng);
            const Eigen::VectorXd X = random_simplex(dim, rng);
            Eigen::VectorXd nu(dim);
            for (int i = 0; i < dim; ++i) nu(i) = 2.0 * rng.next_uniform() - 1.0;
            auto [lhs, rhs] = quadratic_form_identity(nu, X, P, 11);
            CHECK(std::abs(lhs - rhs) <= 1e-12 * (1.0 + std::abs(lhs)));
        }
    }
}

TEST_CASE("aggregate_step modes") {
    RngStream rng = derive_stream(42, 3);
    const Eigen::MatrixXd P = random_stochastic(4, rng, 0.05);

    SUBCASE("mean-only fixes the stationary distribution") {
        // Left eigenvector of P for eigenvalue 1 (stationary distribution).
        Eigen::EigenSolver<Eigen::MatrixXd> es(P.transpose());
        int idx = 0;
        for (int i = 0; i < 4; ++i)
            if (std::abs(es.eigenvalues()(i) - 1.0) < std::abs(es.eigenvalues()(idx) - 1.0))
                idx = i;
        Eigen::VectorXd pi = es.eigenvectors().col(idx).real();
        pi /= pi.sum();
        AggregateState s{pi, 100};
        RngStream r2 = derive_stream(1, 1);
        const auto next = aggregate_step(s, P, NoiseMode::MeanOnly, r2);
        CHECK((next.X - pi).cwiseAbs().maxCoeff() <= 1e-10);
    }
    SUBCASE("every mode conserves total occupancy") {
        for (auto mode :
             {NoiseMode::MeanOnly, NoiseMode::Gaussian, NoiseMode::ExactMultinomial}) {
            AggregateState s{random_simplex(4, rng), 40};
            RngStream r2 = derive_stream(2, static_cast<std::uint64_t>(mode));
            for (int t = 0; t < 50; ++t) {
                s = aggregate_step(s, P, mode, r2);
                CHECK(std::abs(s.X.sum() - 1.0) <= 1e-9);
            }
        }
    }
    SUBCASE("gaussian noise sums to zero draw by draw") {
        const Eigen::VectorXd X = random_simplex(4, rng);
        RngStream r2 = derive_stream(3, 3);
        const Eigen::VectorXd mean = P.transpose() * X;
        for (int rep = 0; rep < 200; ++rep) {
            AggregateState s{X, 50};
            const auto next = aggregate_step(s, P, NoiseMode::Gaussian, r2);
            CHECK(std::abs((next.X - mean).sum()) <= 1e-9);
        }
    }
    SUBCASE("exact-multinomial empirical moments match the closed form") {
        const long n_p = 3;
        Eigen::VectorXd X(4);
        X << 1.0 / 3, 1.0 / 3, 1.0 / 3, 0.0; // counts 1,1,1 are exact
        const Eigen::VectorXd mean = P.transpose() * X;
        const Eigen::MatrixXd cov = sigma_of_x(X, P, n_p);
        const int draws = 100000;
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(4);
        Eigen::MatrixXd acc2 = Eigen::MatrixXd::Zero(4, 4);
        RngStream r2 = derive_stream(4, 4);
        for (int d = 0; d < draws; ++d) {
            AggregateState s{X, n_p};
            const auto next = aggregate_step(s, P, NoiseMode::ExactMultinomial, r2);
            acc += next.X;
            acc2 += next.X * next.X.transpose();
        }
        acc /= draws;
        acc2 /= draws;
        const Eigen::MatrixXd emp_cov = acc2 - acc * acc.transpose();
        for (int i = 0; i < 4; ++i) {
            const double se_mean = std::sqrt(std::max(cov(i, i), 1e-12) / draws);
            CHECK(std::abs(acc(i) - mean(i)) <= 3.5 * se_mean);
            for (int j = 0; j < 4; ++j) {
                // Conservative stderr for covariance entries.
                const double se_cov =
                    3.0 * std::sqrt((cov(i, i) * cov(j, j) + cov(i, j) * cov(i, j)) /
                                    draws);
                CHECK(std::abs(emp_cov(i, j) - cov(i, j)) <= 3.0 * se_cov + 1e-9);
            }
        }
    }
}

TEST_CASE("brute-force oracle: exact one-step law at n_p = 2 on 4 states") {
    RngStream rng = derive_stream(42, 5);
    const Eigen::MatrixXd P = random_stochastic(4, rng);
    const std::vector<Eigen::MatrixXd> members{P, P};
    for (const auto& label : oracle::all_labels(2, 4)) {
        const auto lm = oracle::brute_force_label_moments(members, label);
        Eigen::VectorXd X(4);
        for (int i = 0; i < 4; ++i) X(i) = label[static_cast<std::size_t>(i)] / 2.0;
        const Eigen::VectorXd mean = 2.0 * (P.transpose() * X);
        const Eigen::MatrixXd cov = 4.0 * sigma_of_x(X, P, 2);
        CHECK((lm.mean - mean).cwiseAbs().maxCoeff() <= 1e-13);
        CHECK((lm.cov - cov).cwiseAbs().maxCoeff() <= 1e-13);
    }
}

TEST_CASE("variance scaling: quadrupling n_p divides the variance by four") {
    RngStream rng = derive_stream(42, 6);
    const Eigen::MatrixXd P = random_stochastic(4, rng, 0.1);
    Eigen::VectorXd X(4);
    X << 0.4, 0.3, 0.2, 0.1;
    auto empirical_var = [&](long n_p, std::uint64_t seed) {
        RngStream r2 = derive_stream(seed, 77);
        const int draws = 20000;
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(4), acc2 = Eigen::VectorXd::Zero(4);
        for (int d = 0; d < draws; ++d) {
            AggregateState s{X, n_p};
            const auto next = aggregate_step(s, P, NoiseMode::ExactMultinomial, r2);
            acc += next.X;
            acc2 += next.X.cwiseProduct(next.X);
        }
        acc /= draws;
        acc2 /= draws;
        return Eigen::VectorXd(acc2 - acc.cwiseProduct(acc));
    };
    const Eigen::VectorXd v250 = empirical_var(250, 5);
    const Eigen::VectorXd v1000 = empirical_var(1000, 6);
    double ratio_sum = 0.0;
    int count = 0;
    for (int i = 0; i < 4; ++i) {
        if (v1000(i) > 1e-8) {
            ratio_sum += v250(i) / v1000(i);
            ++count;
        }
    }
    REQUIRE(count > 0);
    const double ratio = ratio_sum / count;
    CHECK(ratio > 4.0 * 0.75);
    CHECK(ratio < 4.0 * 1.25);
}

TEST_CASE("gaussian limit: standardized multinomial noise looks normal") {
    RngStream rng = derive_stream(42, 7);
    const Eigen::MatrixXd P = random_stochastic(4, rng, 0.2);
    Eigen::VectorXd X(4);
    X << 0.3, 0.3, 0.2, 0.2;
    const long n_p = 10000;
    const Eigen::VectorXd mean = P.transpose() * X;
    const Eigen::MatrixXd cov = sigma_of_x(X, P, n_p);
    const int draws = 10000;
    RngStream r2 = derive_stream(9, 9);
    std::vector<Eigen::VectorXd> zs;
    zs.reserve(draws);
    for (int d = 0; d < draws; ++d) {
        AggregateState s{X, n_p};
        const auto next = aggregate_step(s, P, NoiseMode::ExactMultinomial, r2);
        zs.push_back((next.X - mean).cwiseQuotient(cov.diagonal().cwiseSqrt()));
    }
    for (int i = 0; i < 4; ++i) {
        double m1 = 0, m2 = 0, m3 = 0, m4 = 0;
        for (const auto& z : zs) m1 += z(i);
        m1 /= draws;
        for (const auto& z : zs) {
            const double c = z(i) - m1;
            m2 += c * c;
            m3 += c * c * c;
            m4 += c * c * c * c;
        }
        m2 /= draws;
        m3 /= draws;
        m4 /= draws;
        const double skew = m3 / std::pow(m2, 1.5);
        const double exkurt = m4 / (m2 * m2) - 3.0;
        CHECK(std::abs(skew) < 0.1);
        CHECK(std::abs(exkurt) < 0.2);
    }
}

TEST_CASE("eliminate_state: scalar case and spectrum split") {
    SUBCASE("2-state chain collapses to the scalar 1 - p - q") {
        const double p = 0.3, q = 0.2;
        Eigen::MatrixXd P(2, 2);
        P << 1 - p, p, q, 1 - q;
        const auto rm = eliminate_state(P, 1, 1.0);
        REQUIRE(rm.A.rows() == 1);
        CHECK(rm.A(0, 0) == doctest::Approx(1 - p - q).epsilon(1e-15));
        CHECK(rm.B(0) == doctest::Approx(q).epsilon(1e-15));
        CHECK(rm.C(0) == doctest::Approx(-1.0));
        CHECK(rm.D == doctest::Approx(1.0));
    }
    SUBCASE("lambda(P) = lambda(A) united with 1") {
        const TclParams p = table3();
        const auto part = build_partition(p, 2, 6);
        const auto chain = build_chain(part, p, /*absorbing_tails=*/false);
        const auto rm = eliminate_state(chain, 500);
        Eigen::EigenSolver<Eigen::MatrixXd> ep(chain.P, false), ea(rm.A, false);
        std::vector<std::complex<double>> lp, la;
        for (int i = 0; i < ep.eigenvalues().size(); ++i) lp.push_back(ep.eigenvalues()(i));
        for (int i = 0; i < ea.eigenvalues().size(); ++i) la.push_back(ea.eigenvalues()(i));
        la.push_back({1.0, 0.0});
        auto by_mag = [](const std::complex<double>& a, const std::complex<double>& b) {
            if (std::abs(a) != std::abs(b)) return std::abs(a) < std::abs(b);
            return a.real() < b.real();
        };
        std::sort(lp.begin(), lp.end(), by_mag);
        std::sort(la.begin(), la.end(), by_mag);
        REQUIRE(lp.size() == la.size());
        for (std::size_t i = 0; i < lp.size(); ++i)
            CHECK(std::abs(lp[i] - la[i]) <= 1e-8);
    }
}

TEST_CASE("step response of the eliminated model matches the full mean dynamics") {
    const TclParams p = table3();
    const auto part = build_partition(p, 2, 6);
    for (bool absorbing : {true, false}) {
        const auto chain = build_chain(part, p, absorbing);
        const long n_p = 500;
        const auto rm = eliminate_state(chain, n_p);
        const Eigen::VectorXd X0 = discretize_initial(InitialPointMass{0, 20.0}, part);
        const auto y_full = mean_power_trajectory(
            chain.P, output_row(chain.dim(), n_p, p.p_rate_on()), X0, 50);
        const auto y_red = rm.step_response(rm.initial_state(X0), 50);
        for (std::size_t t = 0; t < y_full.size(); ++t)
            CHECK(std::abs(y_full[t] - y_red[t]) <= 1e-8 * (1.0 + std::abs(y_full[t])));
    }
}

TEST_CASE("balanced truncation") {
    RngStream rng = derive_stream(42, 8);

    auto random_stable = [&](int dim) {
        ReducedModel m;
        Eigen::MatrixXd A(dim, dim);
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j < dim; ++j) A(i, j) = 2.0 * rng.next_uniform() - 1.0;
        A *= 0.85 / spectral_radius(A);
        m.A = A;
        m.B.resize(dim);
        m.C.resize(dim);
        for (int i = 0; i < dim; ++i) {
            m.B(i) = 2.0 * rng.next_uniform() - 1.0;
            m.C(i) = 2.0 * rng.next_uniform() - 1.0;
        }
        m.D = rng.next_uniform();
        m.order = dim;
        return m;
    };

    SUBCASE("full-order truncation preserves the transfer behavior") {
        const auto full = random_stable(8);
        const auto same = reduce_order(full, 8);
        const Eigen::VectorXd x0 = Eigen::VectorXd::Zero(8);
        const auto y1 = full.step_response(x0, 120);
        const auto y2 = same.step_response(same.left_proj.transpose() * x0, 120);
        for (std::size_t t = 0; t < y1.size(); ++t)
            CHECK(std::abs(y1[t] - y2[t]) <= 1e-8 * (1.0 + std::abs(y1[t])));
    }
    SUBCASE("step-response error stays within 2 * tail Hankel sum") {
        for (int rep = 0; rep < 5; ++rep) {
            const auto full = random_stable(10);
            for (int k : {2, 4, 6}) {
                const auto red = reduce_order(full, k);
                const double bound = truncation_error_bound(red.hankel, k);
                const auto y1 = full.step_response(Eigen::VectorXd::Zero(10), 200);
                const auto y2 = red.step_response(Eigen::VectorXd::Zero(k), 200);
                double sup = 0.0;
                for (std::size_t t = 0; t < y1.size(); ++t)
                    sup = std::max(sup, std::abs(y1[t] - y2[t]));
                CHECK(sup <= bound + 1e-12);
            }
        }
    }
    SUBCASE("unstable systems are rejected") {
        auto full = random_stable(6);
        full.A *= 1.3 / spectral_radius(full.A);
        CHECK_THROWS_AS(reduce_order(full, 3), NumericalGuardError);
    }
    SUBCASE("the absorbing-tails chain is rejected as marginally stable") {
        const TclParams p = table3();
        const auto part = build_partition(p, 2, 6);
        const auto chain = build_chain(part, p, /*absorbing_tails=*/true);
        const auto rm = eliminate_state(chain, 100);
        CHECK_THROWS_AS(reduce_order(rm, 4), NumericalGuardError);
    }
}
