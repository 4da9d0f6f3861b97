#include <doctest.h>

#include <cmath>

#include "oracle_utils.hpp"
#include "tclagg/bounds.hpp"

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

// Independent re-derivation of the tail parameters, written from the safety
// recursion rather than the closed form: gamma is the largest value keeping
// both truncation sequences inside the grid after N steps.
double gamma_from_recursions(const TclParams& p, double big_l, int N) {
    const double a = p.a();
    const double aN = std::pow(a, N);
    const double theta_m = p.theta_s + big_l / 2.0;
    const double g1 =
        (1.0 - a) / p.sigma *
        ((aN * theta_m - p.theta_minus()) / (1.0 - aN) + p.theta_a - p.R * p.P_rate);
    const double g2 = (1.0 - a) / p.sigma *
                      ((p.theta_plus() - aN * (p.theta_s - big_l / 2.0)) / (1.0 - aN) -
                       p.theta_a);
    return std::min(g1, g2);
}
} // namespace

TEST_CASE("bound parameters: lambda = 32 and the closed-form gamma") {
    const TclParams p = table3();
    const auto part = build_partition(p, 7, 35);
    const auto bp = compute_bound_params(p, part, 6);
    CHECK(bp.lambda == doctest::Approx(32.0).epsilon(1e-14));
    CHECK(!bp.vacuous);
    CHECK(bp.gamma == doctest::Approx(gamma_from_recursions(p, part.big_l, 6)).epsilon(1e-12));
    CHECK(bp.epsilon ==
          doctest::Approx(std::exp(-0.5 * bp.gamma * bp.gamma) / (bp.gamma * sqrt_2pi))
              .epsilon(1e-14));
    CHECK(bp.q_exact <= bp.epsilon); // certified bound dominates the exact tail
    CHECK_THROWS_AS(compute_bound_params(table3(0.0), part, 6), std::invalid_argument);
}

TEST_CASE("gamma <= 0 flags the certificate as vacuous") {
    // Long horizons shrink a^N until the bracket goes negative.
    const TclParams p = table3();
    const auto part = build_partition(p, 2, 6);
    const auto bp = compute_bound_params(p, part, 1000);
    CHECK(bp.gamma <= 0.0);
    CHECK(bp.vacuous);
    CHECK(std::isnan(bp.epsilon));
    const auto rep = homogeneous_population_bound({p, part, 1000, 10});
    CHECK(rep.vacuous);
    CHECK(std::isinf(rep.population_bound_kw));
}

TEST_CASE("gamma grows affinely in the truncation width") {
    const TclParams p = table3();
    const auto p1 = build_partition(p, 7, 35);
    const auto p2 = build_partition(p, 7, 70);   // L doubled
    const auto p3 = build_partition(p, 7, 105);  // L tripled
    const double g1 = compute_bound_params(p, p1, 6).gamma;
    const double g2 = compute_bound_params(p, p2, 6).gamma;
    const double g3 = compute_bound_params(p, p3, 6).gamma;
    CHECK(g2 > g1);
    CHECK(g3 - g2 == doctest::Approx(g2 - g1).epsilon(1e-9)); // affine in L
}

TEST_CASE("N = 2 collapses the bound to the upsilon term") {
    const TclParams p = table3();
    const auto part = build_partition(p, 7, 35);
    const auto rep = homogeneous_population_bound({p, part, 2, 500});
    const double want = 2.0 * p.a() * part.upsilon / (p.sigma * sqrt_2pi);
    CHECK(rep.single_tcl_bound == doctest::Approx(want).epsilon(1e-14));
    CHECK(rep.population_bound_kw == doctest::Approx(500 * 5.6 * want).epsilon(1e-12));
    CHECK_THROWS_AS(homogeneous_population_bound({p, part, 1, 500}), std::invalid_argument);
}

TEST_CASE("reported alongside: the unreproduced quoted normalized error") {
    // The published normalized-power error for N = 2 with l = 70 is 0.226;
    // neither sigma used in the same experiment reproduces it from the N = 2
    // formula. The test pins our formula against the independent
    // re-derivation and prints the comparison instead of tuning inputs.
    const TclParams p_small = table3(0.0032);
    const TclParams p_large = table3(0.032);
    const auto part = build_partition(p_small, 70, 350);
    const double ours_small =
        homogeneous_population_bound({p_small, part, 2, 1}).single_tcl_bound;
    const double ours_large =
        homogeneous_population_bound({p_large, part, 2, 1}).single_tcl_bound;
    const double quoted = 0.226;
    MESSAGE("normalized N=2 bound: sigma=0.0032 -> ", ours_small, ", sigma=0.032 -> ",
            ours_large, ", quoted value ", quoted);
    // Independent evaluation of the same quantity.
    for (const TclParams& p : {p_small, p_large}) {
        const double independent = 2.0 * std::exp(-(10.0 / 3600.0) / 20.0) *
                                   (0.5 / 140.0) /
                                   (p.sigma * std::sqrt(2.0 * std::numbers::pi));
        const double ours = homogeneous_population_bound({p, part, 2, 1}).single_tcl_bound;
        CHECK(ours == doctest::Approx(independent).epsilon(1e-12));
        CHECK(std::abs(ours - quoted) / quoted > 0.25); // genuinely unreproduced
    }
}

TEST_CASE("bound monotonicity in N, upsilon, and m") {
    const TclParams p = table3();
    SUBCASE("nondecreasing in N") {
        const auto part = build_partition(p, 7, 35);
        double prev = 0.0;
        for (int N = 2; N <= 14; N += 2) {
            const auto rep = homogeneous_population_bound({p, part, N, 1});
            REQUIRE(!rep.vacuous);
            CHECK(rep.single_tcl_bound >= prev);
            prev = rep.single_tcl_bound;
        }
    }
    SUBCASE("increasing in upsilon at fixed L") {
        // Coarser dead-band split with the same truncation width.
        const auto fine = build_partition(p, 14, 70);
        const auto coarse = build_partition(p, 7, 35);
        CHECK(coarse.big_l == doctest::Approx(fine.big_l));
        CHECK(homogeneous_population_bound({p, coarse, 6, 1}).single_tcl_bound >
              homogeneous_population_bound({p, fine, 6, 1}).single_tcl_bound);
    }
    SUBCASE("nonincreasing in m through epsilon") {
        const auto narrow = build_partition(p, 7, 35);
        const auto wide = build_partition(p, 7, 70);
        CHECK(homogeneous_population_bound({p, wide, 10, 1}).single_tcl_bound <=
              homogeneous_population_bound({p, narrow, 10, 1}).single_tcl_bound);
    }
    SUBCASE("halving upsilon halves the upsilon term") {
        const auto part1 = build_partition(p, 7, 35);
        const auto part2 = build_partition(p, 14, 70);
        const auto r1 = homogeneous_population_bound({p, part1, 2, 1});
        const auto r2 = homogeneous_population_bound({p, part2, 2, 1});
        CHECK(r2.upsilon_term == doctest::Approx(0.5 * r1.upsilon_term).epsilon(1e-12));
    }
}

TEST_CASE("local error vector tightens the global bound") {
    const TclParams p = table3();
    const auto part = build_partition(p, 7, 35);
    const auto chain = build_chain(part, p);
    for (int N : {2, 3, 6, 10}) {
        const auto rep = homogeneous_population_bound({p, part, N, 500}, chain);
        REQUIRE(!rep.vacuous);
        // Every truncated-region entry of E_1 is below the uniform bound.
        const int n = chain.n();
        for (int mode = 0; mode <= 1; ++mode)
            for (int b = 1; b < n - 1; ++b)
                CHECK(rep.local_error(mode * n + b) <=
                      rep.single_tcl_bound * (1.0 + 1e-12));
        // And so is the weighted bound for any occupancy on that region.
        const Eigen::VectorXd X0 = discretize_initial(InitialUniformDeadband{0}, part);
        CHECK(rep.tightened_bound_kw(X0, p.p_rate_on()) <=
              rep.population_bound_kw + 1e-12);
    }
}

TEST_CASE("value functions: mask, range, and absorbing pins") {
    const TclParams p = table3();
    const auto part = build_partition(p, 4, 12);
    const auto chain = build_chain(part, p);
    const int n = part.n_bins;
    const auto table = chain_value_functions(chain, 7);

    // W_N is exactly the acceptance indicator.
    const auto& wN = table.W.back();
    for (int i = 0; i < chain.dim(); ++i) CHECK((wN(i) == 0.0 || wN(i) == 1.0));
    // OFF bins above theta_plus and ON bins at or above theta_minus accept.
    CHECK(wN(part.state_of(0, part.bin_of(20.3))) == 1.0);
    CHECK(wN(part.state_of(0, part.bin_of(20.1))) == 0.0);
    CHECK(wN(part.state_of(1, part.bin_of(19.8))) == 1.0);
    CHECK(wN(part.state_of(1, part.bin_of(19.7))) == 0.0);
    // The bin starting exactly at theta_minus belongs to the ON acceptance part.
    const int edge_bin = part.bin_of(p.theta_minus());
    CHECK(part.boundaries[static_cast<std::size_t>(edge_bin - 1)] ==
          doctest::Approx(p.theta_minus()));
    CHECK(wN(part.state_of(1, edge_bin)) == 1.0);

    for (const auto& w : table.W) {
        CHECK(w.minCoeff() >= 0.0);
        CHECK(w.maxCoeff() <= 1.0 + 1e-12);
        CHECK(w(0) == 0.0);
        CHECK(w(n) == 0.0);
        CHECK(w(n - 1) == 1.0);
        CHECK(w(2 * n - 1) == 1.0);
    }
}

TEST_CASE("value function agrees with the Monte Carlo mode oracle") {
    const TclParams p = table3();
    const auto part = build_partition(p, 7, 35);
    const auto chain = build_chain(part, p);
    const int N = 6;
    const auto table = chain_value_functions(chain, N);
    const auto est = mc_expected_mode({0, 20.0}, p, N, 200000, 31);
    const auto rep = homogeneous_population_bound({p, part, N, 1}, chain);
    const double w1 = table.w1()(part.state_of(0, part.bin_of(20.0)));
    CHECK(std::abs(w1 - est.p_hat) <=
          3.0 * est.stderr_ + rep.single_tcl_bound + 1e-12);
    // The chain value is itself a probability.
    CHECK(w1 >= 0.0);
    CHECK(w1 <= 1.0);
}

TEST_CASE("released pins obey the truncation sandwich") {
    // Moderate-noise setting where epsilon is meaningful (about 1e-2).
    const TclParams p = table3(0.08);
    const auto part = build_partition(p, 4, 20);
    const auto open_chain = build_chain(part, p, /*absorbing_tails=*/false);
    const int N = 8;
    const auto bp = compute_bound_params(p, part, N);
    REQUIRE(!bp.vacuous);
    REQUIRE(bp.epsilon < 0.05);
    const auto table = chain_value_functions(open_chain, N);
    const int n = part.n_bins;
    for (int k = 1; k <= N; ++k) {
        const auto& w = table.W[static_cast<std::size_t>(k - 1)];
        const double slack = (N - k) * bp.epsilon + 1e-12;
        CHECK(w(n - 1) >= 1.0 - slack);          // OFF high tail
        CHECK(w(2 * n - 1) >= 1.0 - slack);      // ON high tail
        CHECK(w(0) <= slack);                    // OFF low tail
        CHECK(w(n) <= slack);                    // ON low tail
    }
}

TEST_CASE("adjacent same-region bins satisfy the discrete Lipschitz bound") {
    const TclParams p = table3(0.08);
    const auto part = build_partition(p, 16, 80);
    const auto chain = build_chain(part, p);
    const int N = 6;
    const auto table = chain_value_functions(chain, N);
    const int n = part.n_bins;
    const double per_step = 2.0 * p.a() * part.upsilon / (p.sigma * sqrt_2pi);
    for (int k = 1; k <= N; ++k) {
        const auto& w = table.W[static_cast<std::size_t>(k - 1)];
        const double bound = per_step * (N - k) + 2.0 * (N - k) * 0.05 + 1e-12;
        bool nontrivial = false;
        for (int mode = 0; mode <= 1; ++mode) {
            const double edge = mode == 0 ? p.theta_plus() : p.theta_minus();
            for (int b = 1; b < n - 2; ++b) {
                const double r1 = part.representatives[static_cast<std::size_t>(b)];
                const double r2 = part.representatives[static_cast<std::size_t>(b + 1)];
                // Skip pairs straddling the mode's discontinuity edge.
                if ((r1 - edge) * (r2 - edge) < 0.0) continue;
                const double diff =
                    std::abs(w(mode * n + b) - w(mode * n + b + 1));
                if (k < N) CHECK(diff <= bound);
                if (diff > 1e-6) nontrivial = true;
            }
        }
        if (k < N) CHECK(nontrivial); // the recursion actually varies across bins
    }
}

TEST_CASE("clustered bound: reductions and monotonicity") {
    const TclParams base = table3();
    const auto part = build_partition(base, 7, 35);
    HeterogeneitySpec spec{base, "C", {9.0, 10.0, 11.0}};
    const double h_a = lipschitz_constant(spec, part, LipschitzMode::ClosedFormCapacitance);

    const auto singletons = build_clustered_model(spec, part, 3);
    const auto lumped = build_clustered_model(spec, part, 1);
    const int N = 4;
    const double b3 = clustered_population_bound(spec, singletons, part, N, h_a);
    const double b1 = clustered_population_bound(spec, lumped, part, N, h_a);

    // upsilon_a = 0 reduces to the worst homogeneous bound.
    double worst = 0.0;
    for (double c : spec.values) {
        const TclParams pj = apply_parameter(base, "C", c);
        worst = std::max(worst,
                         homogeneous_population_bound({pj, part, N, 3}).population_bound_kw);
    }
    CHECK(b3 == doctest::Approx(worst).epsilon(1e-12));
    CHECK(b3 <= b1);

    // Monotone nondecreasing in upsilon_a: widen the value range.
    HeterogeneitySpec wide{base, "C", {8.0, 10.0, 12.0}};
    const auto wide_model = build_clustered_model(wide, part, 1);
    CHECK(clustered_population_bound(wide, wide_model, part, N, h_a) >= b1);
}

TEST_CASE("empirical abstraction error stays within the certificate") {
    const TclParams p = table3();
    const auto part = build_partition(p, 7, 35);
    for (int N : {2, 6}) {
        const auto res = empirical_abstraction_error(p, part, N, 200, 20, 77,
                                                     InitialPointMass{0, 20.0});
        REQUIRE(!res.vacuous);
        CHECK(res.observed_error_kw <= res.bound_kw + 3.0 * res.mc_stderr_kw);
    }
    // Degenerate N = 0 case is covered by construction: identical initial
    // output on both sides.
    const auto chain = build_chain(part, p);
    const auto pop = materialize_population(InitialPointMass{0, 20.0}, p, 100, 3);
    const Eigen::VectorXd X0 = discretize_initial(InitialPointMass{0, 20.0}, part);
    CHECK(population_power_kw(pop.states, std::vector<TclParams>(100, p)) ==
          doctest::Approx(output_row(chain.dim(), 100, p.p_rate_on()) * X0));
}
