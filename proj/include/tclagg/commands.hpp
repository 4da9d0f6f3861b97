#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "tclagg/bounds.hpp"
#include "tclagg/config.hpp"
#include "tclagg/control.hpp"
#include "tclagg/heterogeneity.hpp"
#include "tclagg/io.hpp"
#include "tclagg/reduction.hpp"

namespace tclagg {

namespace detail {

inline constexpr std::uint64_t burn_in_run_index = 1000000007ULL;

/// Everything the commands derive from a parsed config.
struct Scenario {
    ScenarioConfig cfg;
    std::vector<TclParams> tcl_params;            ///< per-TCL exact dynamics
    std::optional<HeterogeneitySpec> het;
    PopulationSnapshot population;                ///< after burn-in
};

inline Scenario materialize_scenario(const ScenarioConfig& cfg) {
    Scenario sc;
    sc.cfg = cfg;
    if (cfg.heterogeneity) {
        const auto& h = *cfg.heterogeneity;
        HeterogeneitySpec spec;
        if (h.uniform) {
            spec = sample_uniform_spec(cfg.params, h.parameter, h.lo, h.hi,
                                       cfg.population.n_p, cfg.simulation.seed);
        } else {
            spec.base = cfg.params;
            spec.parameter = h.parameter;
            spec.values = h.values;
            validate_spec(spec);
        }
        sc.het = spec;
        sc.tcl_params.reserve(static_cast<std::size_t>(cfg.population.n_p));
        for (std::size_t jdx = 0; jdx < spec.values.size(); ++jdx)
            sc.tcl_params.push_back(member_params(spec, jdx));
    } else {
        sc.tcl_params.assign(static_cast<std::size_t>(cfg.population.n_p), cfg.params);
    }

    sc.population =
        materialize_population(cfg.population.init, cfg.params, cfg.population.n_p,
                               cfg.simulation.seed);
    if (cfg.population.burn_in_steps > 0) {
        const auto burn = simulate_population(sc.population, sc.tcl_params,
                                              cfg.population.burn_in_steps,
                                              cfg.simulation.seed, true, nullptr,
                                              burn_in_run_index);
        sc.population.states = burn.snapshots.back().states;
    }
    return sc;
}

inline TemperaturePartition partition_of(const ScenarioConfig& cfg) {
    if (cfg.abstraction.method != "stochastic")
        throw ConfigError("this command requires the stochastic abstraction");
    return build_partition(cfg.params, cfg.abstraction.l, cfg.abstraction.m);
}

inline void write_manifest(const std::filesystem::path& outdir, const ScenarioConfig& cfg,
                           const std::string& command) {
    std::filesystem::create_directories(outdir);
    {
        std::ofstream out(outdir / "config_echo.json");
        out << config_echo(cfg).dump(2) << "\n";
    }
    {
        std::ofstream out(outdir / "MANIFEST.txt");
        out << "tclagg " << version_string << "\n"
            << "command: " << command << "\n"
            << "seed: " << cfg.simulation.seed << "\n";
    }
}

/// Reference signal sampled at steps 0..length-1.
inline std::vector<double> reference_signal(const ReferenceConfig& ref, long length) {
    std::vector<double> y(static_cast<std::size_t>(length), 0.0);
    if (ref.type == "constant") {
        std::fill(y.begin(), y.end(), ref.value_kw);
    } else {
        std::size_t seg = 0;
        for (long t = 0; t < length; ++t) {
            while (seg + 1 < ref.times.size() && t >= ref.times[seg + 1]) ++seg;
            y[static_cast<std::size_t>(t)] = ref.values_kw[seg];
        }
    }
    return y;
}

/// Initial occupancy for the abstract models: the binned population when a
/// burn-in ran (so both sides start from the same state), else the
/// discretized initial distribution.
inline Eigen::VectorXd abstract_initial(const Scenario& sc, const MarkovChainModel& chain) {
    if (sc.cfg.population.burn_in_steps > 0) return binned_occupancy(chain, sc.population);
    if (chain.kind == ChainKind::Stochastic)
        return discretize_initial(sc.cfg.population.init, *chain.partition);
    return binned_occupancy(chain, sc.population);
}

} // namespace detail

/// Monte Carlo ground truth: per-step mean and standard error of y(t).
inline void run_simulate(const ScenarioConfig& cfg, const std::filesystem::path& outdir,
                         int threads = 1) {
    const auto sc = detail::materialize_scenario(cfg);
    const auto mc = mc_expected_power(sc.population, sc.tcl_params, cfg.simulation.steps,
                                      cfg.simulation.mc_runs, cfg.simulation.seed, threads);
    detail::write_manifest(outdir, cfg, "simulate");
    std::vector<double> t(mc.mean_kw.size());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
    write_csv(outdir / "simulate.csv", {"t", "y_mean_kW", "y_stderr_kW"},
              {t, mc.mean_kw, mc.stderr_kw});
}

/// Build and export the abstraction(s) plus a validation report.
inline void run_abstract(const ScenarioConfig& cfg, const std::filesystem::path& outdir) {
    detail::write_manifest(outdir, cfg, "abstract");
    std::ofstream report(outdir / "validation.txt");

    auto export_chain = [&](const MarkovChainModel& model, const std::string& name) {
        std::ofstream out(outdir / (name + ".csv"));
        write_chain(out, model);
        report << name << ".states: " << model.dim() << "\n";
        report << name << ".max_row_defect: " << format_double(max_row_defect(model.P), 3)
               << "\n";
        validate_chain(model);
        report << name << ".structure: ok\n";
    };

    if (cfg.abstraction.method == "stochastic") {
        const auto part = detail::partition_of(cfg);
        if (cfg.heterogeneity && cfg.heterogeneity->mode == "averaging") {
            const auto sc = detail::materialize_scenario(cfg);
            const auto avg = build_averaged_model(*sc.het, part, /*retain_members=*/false);
            MarkovChainModel model;
            model.P = avg.P_bar;
            model.kind = ChainKind::Stochastic;
            model.params = cfg.params;
            model.absorbing_tails = true;
            model.anchor_theta_s = cfg.params.theta_s;
            model.partition = part;
            model.bin_edges = part.boundaries;
            model.representatives = part.representatives;
            export_chain(model, "chain_averaged");
        } else if (cfg.heterogeneity && cfg.heterogeneity->mode == "clustering") {
            const auto sc = detail::materialize_scenario(cfg);
            const auto clustered =
                build_clustered_model(*sc.het, part, cfg.heterogeneity->n_clusters);
            int i = 0;
            for (const auto& cl : clustered.clusters) {
                export_chain(cl.chain, "chain_cluster" + std::to_string(i));
                report << "cluster" << i << ".alpha: " << format_double(cl.alpha_rep)
                       << "\ncluster" << i << ".size: " << cl.size << "\n";
                ++i;
            }
            report << "upsilon_a: " << format_double(clustered.upsilon_a) << "\n";
        } else {
            export_chain(build_chain(part, cfg.params), "chain");
        }
    }
    if (cfg.abstraction.n_d)
        export_chain(build_deterministic_baseline(cfg.params, *cfg.abstraction.n_d),
                     "baseline");
}

/// Overlay Monte Carlo truth, the stochastic aggregate, the deterministic
/// baseline, and optionally the reduced-order model.
inline void run_compare(const ScenarioConfig& cfg, const std::filesystem::path& outdir,
                        int threads = 1) {
    const auto sc = detail::materialize_scenario(cfg);
    const long steps = cfg.simulation.steps;
    const auto part = detail::partition_of(cfg);

    const auto mc = mc_expected_power(sc.population, sc.tcl_params, steps,
                                      cfg.simulation.mc_runs, cfg.simulation.seed, threads);

    std::vector<std::string> header{"t", "y_mc_kW", "y_mc_stderr_kW", "y_abs_kW"};
    std::vector<double> t(static_cast<std::size_t>(steps) + 1);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
    std::vector<std::vector<double>> cols{t, mc.mean_kw, mc.stderr_kw};

    // Captured when the aggregate is a single occupancy model, for the
    // optional occupancy-trajectory dump.
    std::optional<Eigen::MatrixXd> agg_P;
    std::optional<Eigen::RowVectorXd> agg_H;
    std::optional<Eigen::VectorXd> agg_X0;

    // Stochastic aggregate mean power.
    std::optional<AveragedAggregateModel> averaged;
    if (sc.het && cfg.heterogeneity->mode == "averaging") {
        averaged = build_averaged_model(*sc.het, part, /*retain_members=*/false);
        MarkovChainModel model;
        model.P = averaged->P_bar;
        model.kind = ChainKind::Stochastic;
        model.params = cfg.params;
        model.partition = part;
        model.bin_edges = part.boundaries;
        model.representatives = part.representatives;
        agg_P = averaged->P_bar;
        agg_H = averaged->H();
        agg_X0 = detail::abstract_initial(sc, model);
        cols.push_back(mean_power_trajectory(*agg_P, *agg_H, *agg_X0, steps));
    } else if (sc.het && cfg.heterogeneity->mode == "clustering") {
        const auto clustered =
            build_clustered_model(*sc.het, part, cfg.heterogeneity->n_clusters);
        if (cfg.population.burn_in_steps > 0) {
            // Per-cluster occupancies of the burned-in population members.
            std::vector<double> y(static_cast<std::size_t>(steps) + 1, 0.0);
            for (const auto& cl : clustered.clusters) {
                Eigen::VectorXd X0 = Eigen::VectorXd::Zero(cl.chain.dim());
                long count = 0;
                for (std::size_t jdx = 0; jdx < sc.het->values.size(); ++jdx) {
                    const double v = sc.het->values[jdx];
                    // Recover this member's cluster by nearest representative.
                    double best = std::numeric_limits<double>::infinity();
                    const ClusteredModel::Cluster* home = nullptr;
                    for (const auto& c2 : clustered.clusters)
                        if (std::abs(v - c2.alpha_rep) < best) {
                            best = std::abs(v - c2.alpha_rep);
                            home = &c2;
                        }
                    if (home != &cl) continue;
                    const auto& s = sc.population.states[jdx];
                    X0(s.mode * cl.chain.n() + cl.chain.bin_of_theta(s.theta)) += 1.0;
                    ++count;
                }
                if (count == 0) continue;
                X0 /= static_cast<double>(count);
                const auto yc = mean_power_trajectory(
                    cl.chain.P,
                    output_row(cl.chain.dim(), count, cl.chain.params.p_rate_on()), X0,
                    steps);
                for (std::size_t i = 0; i < y.size(); ++i) y[i] += yc[i];
            }
            cols.push_back(y);
        } else {
            cols.push_back(clustered_mean_power(clustered, cfg.population.init, steps));
        }
    } else {
        const auto chain = build_chain(part, cfg.params);
        agg_P = chain.P;
        agg_H = output_row(chain.dim(), cfg.population.n_p, cfg.params.p_rate_on());
        agg_X0 = detail::abstract_initial(sc, chain);
        cols.push_back(mean_power_trajectory(*agg_P, *agg_H, *agg_X0, steps));
    }

    // Deterministic benchmark abstraction (at the mean parameter when
    // heterogeneous).
    if (cfg.abstraction.n_d) {
        TclParams base = cfg.params;
        if (sc.het) {
            double mean = 0.0;
            for (double v : sc.het->values) mean += v;
            base = apply_parameter(cfg.params, sc.het->parameter,
                                   mean / static_cast<double>(sc.het->values.size()));
        }
        const auto baseline = build_deterministic_baseline(base, *cfg.abstraction.n_d);
        header.push_back("y_det_kW");
        cols.push_back(mean_power_trajectory(
            baseline.P,
            output_row(baseline.dim(), cfg.population.n_p, base.p_rate_on()),
            detail::abstract_initial(sc, baseline), steps));
    }

    // Reduced-order model of the (averaged) stochastic abstraction. The
    // reduction runs on the open-tail variant, whose elimination is stable.
    if (cfg.reduction && cfg.reduction->enabled) {
        Eigen::MatrixXd P_open;
        double p_on = cfg.params.p_rate_on();
        if (averaged) {
            AveragedAggregateModel open; // rebuilt with open tails
            HeterogeneitySpec spec = *sc.het;
            const int n = part.n_bins;
            Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(2 * n, 2 * n);
            for (std::size_t jdx = 0; jdx < spec.values.size(); ++jdx) {
                const TclParams pj = member_params(spec, jdx);
                acc += assemble_chain(build_marginals(part, pj), part, pj, pj.theta_s,
                                      /*absorbing=*/false);
            }
            P_open = acc / static_cast<double>(spec.values.size());
            p_on = averaged->p_rate_on_bar;
        } else {
            P_open = build_chain(part, cfg.params, /*absorbing_tails=*/false).P;
        }
        const auto full = eliminate_state(P_open, cfg.population.n_p, p_on);
        const auto red = reduce_order(full, cfg.reduction->order);
        MarkovChainModel helper;
        helper.P = P_open;
        helper.kind = ChainKind::Stochastic;
        helper.params = cfg.params;
        helper.partition = part;
        helper.bin_edges = part.boundaries;
        helper.representatives = part.representatives;
        const Eigen::VectorXd X0 = detail::abstract_initial(sc, helper);
        header.push_back("y_red_kW");
        cols.push_back(red.step_response(red.initial_state(X0), steps));
    }

    detail::write_manifest(outdir, cfg, "compare");
    write_csv(outdir / "compare.csv", header, cols);

    // Optional occupancy trajectory of the aggregate model: t, y_abs_kW,
    // then one column per (mode, bin) state.
    if (cfg.simulation.dump_occupancies) {
        if (!agg_P)
            throw ConfigError(
                "simulation.dump_occupancies: the clustered model has no single "
                "occupancy vector to dump");
        const int dim = static_cast<int>(agg_P->rows());
        std::vector<std::string> occ_header{"t", "y_abs_kW"};
        for (int i = 1; i <= dim; ++i) occ_header.push_back("X_" + std::to_string(i));
        std::vector<std::vector<double>> occ(static_cast<std::size_t>(dim) + 2);
        Eigen::VectorXd X = *agg_X0;
        for (long step = 0; step <= steps; ++step) {
            occ[0].push_back(static_cast<double>(step));
            occ[1].push_back((*agg_H) * X);
            for (int i = 0; i < dim; ++i)
                occ[static_cast<std::size_t>(i) + 2].push_back(X(i));
            X = agg_P->transpose() * X;
        }
        write_csv(outdir / "aggregate_trajectory.csv", occ_header, occ);
    }
}

/// Bound report (+ optional empirical verification) for every requested
/// horizon.
inline void run_bounds(const ScenarioConfig& cfg, const std::filesystem::path& outdir) {
    if (!cfg.bounds)
        throw ConfigError("bounds: this command requires the 'bounds' config section");
    if (cfg.heterogeneity && cfg.heterogeneity->mode == "averaging")
        throw ConfigError(
            "bounds: certificates cover homogeneous populations and clustered "
            "heterogeneity; the averaging abstraction has no closed-form certificate");
    const auto part = detail::partition_of(cfg);
    detail::write_manifest(outdir, cfg, "bounds");
    std::ofstream report(outdir / "bounds.txt");

    std::vector<double> col_n, col_gamma, col_lambda, col_eps, col_single, col_pop,
        col_tight, col_observed, col_stderr;
    const bool clustered_mode = cfg.heterogeneity.has_value();

    std::optional<HeterogeneitySpec> het;
    std::optional<ClusteredModel> clustered;
    double h_a = 0.0;
    if (clustered_mode) {
        const auto sc = detail::materialize_scenario(cfg);
        het = sc.het;
        clustered = build_clustered_model(*het, part, cfg.heterogeneity->n_clusters);
        if (het->parameter == "C") {
            h_a = lipschitz_constant(*het, part, LipschitzMode::ClosedFormCapacitance);
        } else {
            // Empirical constant over the cluster representatives only.
            HeterogeneitySpec reps = *het;
            reps.values.clear();
            for (const auto& cl : clustered->clusters) reps.values.push_back(cl.alpha_rep);
            h_a = lipschitz_constant(reps, part, LipschitzMode::Empirical);
        }
        report << "mode: clustered\nh_a: " << format_double(h_a)
               << "\nupsilon_a: " << format_double(clustered->upsilon_a)
               << "\nclusters: " << clustered->clusters.size() << "\n\n";
    }

    const auto chain = build_chain(part, cfg.params);
    for (int N : cfg.bounds->horizons) {
        report << "N: " << N << "\n";
        if (clustered_mode) {
            const double bound =
                clustered_population_bound(*het, *clustered, part, N, h_a);
            report << "  clustered_population_bound_kW: " << format_double(bound) << "\n";
            col_n.push_back(N);
            col_pop.push_back(bound);
        } else {
            const BoundInputs in{cfg.params, part, N, cfg.population.n_p};
            const auto rep = homogeneous_population_bound(in, chain);
            report << "  gamma: " << format_double(rep.params.gamma) << "\n"
                   << "  lambda: " << format_double(rep.params.lambda) << "\n"
                   << "  vacuous: " << (rep.vacuous ? "true" : "false") << "\n";
            col_n.push_back(N);
            col_gamma.push_back(rep.params.gamma);
            col_lambda.push_back(rep.params.lambda);
            if (!rep.vacuous) {
                const Eigen::VectorXd X0 =
                    discretize_initial(cfg.population.init, part);
                const double tightened =
                    rep.tightened_bound_kw(X0, cfg.params.p_rate_on());
                report << "  epsilon: " << format_double(rep.params.epsilon) << "\n"
                       << "  exact_tail: " << format_double(rep.params.q_exact) << "\n"
                       << "  single_tcl_bound: " << format_double(rep.single_tcl_bound)
                       << "\n"
                       << "  population_bound_kW: "
                       << format_double(rep.population_bound_kw) << "\n"
                       << "  tightened_bound_kW: " << format_double(tightened) << "\n";
                col_eps.push_back(rep.params.epsilon);
                col_single.push_back(rep.single_tcl_bound);
                col_pop.push_back(rep.population_bound_kw);
                col_tight.push_back(tightened);
            } else {
                col_eps.push_back(std::numeric_limits<double>::quiet_NaN());
                col_single.push_back(std::numeric_limits<double>::infinity());
                col_pop.push_back(std::numeric_limits<double>::infinity());
                col_tight.push_back(std::numeric_limits<double>::infinity());
            }
            if (cfg.bounds->empirical) {
                const auto res = empirical_abstraction_error(
                    cfg.params, part, N, cfg.population.n_p, cfg.bounds->empirical_runs,
                    cfg.simulation.seed, cfg.population.init);
                report << "  observed_error_kW: " << format_double(res.observed_error_kw)
                       << "\n"
                       << "  mc_stderr_kW: " << format_double(res.mc_stderr_kw) << "\n"
                       << "  within_bound: "
                       << (res.observed_error_kw <=
                                   res.bound_kw + 3.0 * res.mc_stderr_kw
                               ? "true"
                               : "false")
                       << "\n";
                col_observed.push_back(res.observed_error_kw);
                col_stderr.push_back(res.mc_stderr_kw);
            }
        }
        report << "\n";
    }

    std::vector<std::string> header{"N"};
    std::vector<std::vector<double>> cols{col_n};
    if (!clustered_mode) {
        header.insert(header.end(), {"gamma", "lambda", "epsilon", "single_tcl_bound",
                                     "population_bound_kW", "tightened_bound_kW"});
        cols.insert(cols.end(), {col_gamma, col_lambda, col_eps, col_single, col_pop,
                                 col_tight});
        if (cfg.bounds->empirical) {
            header.insert(header.end(), {"observed_error_kW", "mc_stderr_kW"});
            cols.insert(cols.end(), {col_observed, col_stderr});
        }
    } else {
        header.push_back("clustered_population_bound_kW");
        cols.push_back(col_pop);
    }
    write_csv(outdir / "bounds.csv", header, cols);
}

/// Closed-loop tracking with the one-step or SMPC controller.
inline void run_track(const ScenarioConfig& cfg, const std::filesystem::path& outdir) {
    if (!cfg.control || cfg.control->mode == "none")
        throw ConfigError("track: this command requires control.mode onestep or smpc");
    if (!cfg.reference) throw ConfigError("track: missing reference section");
    const auto part = detail::partition_of(cfg);
    const auto sc = detail::materialize_scenario(cfg);

    SwitchedControlModel model;
    if (sc.het) {
        const auto avg = build_averaged_model(*sc.het, part, /*retain_members=*/false);
        model = build_switched_family(avg.marginals_bar, part, cfg.params,
                                      cfg.population.n_p, avg.p_rate_on_bar);
    } else {
        model = build_switched_family(cfg.params, part, cfg.population.n_p);
    }

    ClosedLoopScenario loop;
    loop.init_population = sc.population;
    loop.tcl_params = sc.tcl_params;
    loop.model = model;
    loop.controller = cfg.control->mode == "onestep" ? ControllerKind::OneStep
                                                     : ControllerKind::Smpc;
    loop.steps = cfg.simulation.steps;
    loop.seed = cfg.simulation.seed;
    loop.y_des = detail::reference_signal(*cfg.reference, cfg.simulation.steps + 2);

    const double y0 = population_power_kw(sc.population.states, sc.tcl_params);
    if (!(y0 > 0.0))
        throw ConfigError(
            "track: initial power is zero; configure a burn-in so Rv_fraction has a scale");
    loop.R_v = std::pow(cfg.control->rv_fraction * y0, 2);

    const auto chain = build_chain(part, cfg.params);
    loop.x_hat0 = binned_occupancy(chain, sc.population);

    if (loop.controller == ControllerKind::Smpc) {
        loop.smpc.horizon = cfg.control->horizon;
        loop.smpc.rate_limit = static_cast<int>(
            std::ceil(cfg.control->rate_limit_c_per_step / part.upsilon - 1e-12));
        loop.smpc.y_des.assign(static_cast<std::size_t>(cfg.control->horizon), 0.0);
        if (cfg.control->kappa != 0.0) {
            Eigen::VectorXd kappa = Eigen::VectorXd::Zero(part.dim());
            kappa.tail(part.n_bins).setConstant(cfg.control->kappa);
            loop.smpc.kappa = kappa;
        }
    }

    const auto res = closed_loop_run(loop);
    detail::write_manifest(outdir, cfg, "track");
    std::vector<double> t(res.y_true_kw.size());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
    std::vector<double> theta(res.theta_s_c.begin(), res.theta_s_c.end());
    write_csv(outdir / "track.csv",
              {"t", "y_true_kW", "y_meas_kW", "y_est_kW", "y_des_kW", "theta_s_C"},
              {t, res.y_true_kw, res.y_meas_kw, res.y_est_kw, res.y_des_kw, theta});
}

} // namespace tclagg
