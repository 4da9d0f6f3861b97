#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "tclagg/rng.hpp"

namespace tclagg {

struct NumericalGuardError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/**
 * Physical parameters of one cooling TCL plus derived constants.
 *
 * Unit conventions (they matter and are easy to get wrong):
 *  - R is degC/kW and C is kWh/degC, so R*C has units of HOURS and the
 *    discount a = exp(-h_hours / (R*C)) uses the step length in hours.
 *  - h_seconds is the step length as configured, in seconds; sigma is the
 *    per-step process-noise standard deviation in degC and is taken as given
 *    (configs that derive it from h use h in seconds).
 */
struct TclParams {
    double theta_s = 20.0;   ///< set-point [degC]
    double delta = 0.5;      ///< dead-band width [degC]
    double theta_a = 32.0;   ///< ambient temperature [degC]
    double R = 2.0;          ///< thermal resistance [degC/kW]
    double C = 10.0;         ///< thermal capacitance [kWh/degC]
    double P_rate = 14.0;    ///< energy-transfer rate [kW]
    double eta = 2.5;        ///< coefficient of performance
    double h_seconds = 10.0; ///< discretization step [s]
    double sigma = 0.0;      ///< per-step noise std dev [degC]

    double h_hours() const { return h_seconds / 3600.0; }
    double a() const { return std::exp(-h_hours() / (R * C)); }
    double p_rate_on() const { return P_rate / eta; }
    double theta_minus() const { return theta_s - delta / 2.0; }
    double theta_plus() const { return theta_s + delta / 2.0; }

    void validate() const {
        auto fin = [](double v) { return std::isfinite(v); };
        if (!fin(theta_s) || !fin(delta) || !fin(theta_a) || !fin(R) ||
            !fin(C) || !fin(P_rate) || !fin(eta) || !fin(h_seconds) ||
            !fin(sigma))
            throw std::invalid_argument("TclParams: non-finite parameter");
        if (delta <= 0.0) throw std::invalid_argument("TclParams: delta must be > 0");
        if (eta <= 0.0) throw std::invalid_argument("TclParams: eta must be > 0");
        if (sigma < 0.0) throw std::invalid_argument("TclParams: sigma must be >= 0");
        if (h_seconds <= 0.0) throw std::invalid_argument("TclParams: h_seconds must be > 0");
        if (R <= 0.0 || C <= 0.0 || P_rate <= 0.0)
            throw std::invalid_argument("TclParams: R, C, P_rate must be > 0");
        const double av = a();
        if (!(av > 0.0 && av < 1.0))
            throw std::invalid_argument("TclParams: derived a outside (0,1)");
        // Cooling feasibility: the dead-band must sit inside what the unit
        // can actually reach, [theta_a - R*P_rate, theta_a].
        if (theta_minus() < theta_a - R * P_rate || theta_plus() > theta_a)
            throw std::invalid_argument(
                "TclParams: dead-band outside [theta_a - R*P_rate, theta_a]");
    }
};

/// Hybrid state of one TCL: binary mode (0 = OFF, 1 = ON) and temperature.
struct TclState {
    int mode = 0;
    double theta = 0.0;
};

/**
 * Thermostat switching rule. Strict inequalities: a temperature exactly on
 * either dead-band edge keeps the current mode.
 */
inline int thermostat(int mode, double theta, double theta_minus,
                      double theta_plus) {
    if (theta < theta_minus) return 0;
    if (theta > theta_plus) return 1;
    return mode;
}

/// Noiseless one-step temperature map for a fixed mode (cooling sign).
inline double next_theta(double theta, int mode, const TclParams& p) {
    const double a = p.a();
    return a * theta + (1.0 - a) * (p.theta_a - mode * p.R * p.P_rate);
}

/**
 * One exact simulation step. The mode update uses the pre-step temperature,
 * and the temperature update uses the pre-step mode; both see time-t values.
 * An optional set-point override moves the dead-band (population control).
 */
inline TclState tcl_step(TclState s, const TclParams& p, double noise_draw,
                         std::optional<double> theta_s_override = {}) {
    if (!std::isfinite(s.theta) || !std::isfinite(noise_draw))
        throw std::invalid_argument("tcl_step: non-finite state or noise");
    const double ts = theta_s_override.value_or(p.theta_s);
    TclState out;
    out.mode = thermostat(s.mode, s.theta, ts - p.delta / 2.0, ts + p.delta / 2.0);
    out.theta = next_theta(s.theta, s.mode, p) + noise_draw;
    return out;
}

/// Ordered population state at one time index.
struct PopulationSnapshot {
    std::vector<TclState> states;
    long time_index = 0;
};

struct SimulationResult {
    std::vector<double> power_kw;               ///< y(t), t = 0..steps
    std::vector<PopulationSnapshot> snapshots;  ///< filled when requested
};

inline double population_power_kw(const std::vector<TclState>& states,
                                  const std::vector<TclParams>& params) {
    double y = 0.0;
    for (std::size_t j = 0; j < states.size(); ++j)
        y += states[j].mode * params[j].p_rate_on();
    return y;
}

/**
 * Seeded Monte Carlo simulation of a TCL population.
 *
 * Per-TCL noise streams are derived as (seed, run, tcl), so trajectories are
 * reproducible independently of evaluation order. The returned power series
 * has steps+1 entries including the initial output. A per-step set-point
 * schedule (values applied at steps t = 0..steps-1) supports closed-loop use.
 */
inline SimulationResult simulate_population(
    const PopulationSnapshot& init, const std::vector<TclParams>& params,
    long steps, std::uint64_t seed, bool record_snapshots = false,
    const std::vector<double>* setpoint_schedule = nullptr,
    std::uint64_t run_index = 0) {
    if (steps < 1) throw std::invalid_argument("simulate_population: steps must be >= 1");
    if (params.size() != init.states.size())
        throw std::invalid_argument("simulate_population: params/population size mismatch");
    if (setpoint_schedule && static_cast<long>(setpoint_schedule->size()) < steps)
        throw std::invalid_argument("simulate_population: set-point schedule too short");
    for (const auto& p : params) p.validate();

    const std::size_t n_p = init.states.size();
    std::vector<TclState> cur = init.states;
    std::vector<RngStream> streams;
    streams.reserve(n_p);
    for (std::size_t j = 0; j < n_p; ++j)
        streams.push_back(derive_stream(seed, 0x4d43 /* mc */, run_index * 1000003ULL + j));

    SimulationResult res;
    res.power_kw.reserve(steps + 1);
    res.power_kw.push_back(population_power_kw(cur, params));
    if (record_snapshots) res.snapshots.push_back({cur, init.time_index});

    for (long t = 0; t < steps; ++t) {
        const std::optional<double> ts =
            setpoint_schedule ? std::optional<double>((*setpoint_schedule)[t])
                              : std::nullopt;
        for (std::size_t j = 0; j < n_p; ++j) {
            const double w = params[j].sigma > 0.0
                                 ? streams[j].next_normal(0.0, params[j].sigma)
                                 : 0.0;
            cur[j] = tcl_step(cur[j], params[j], w, ts);
        }
        res.power_kw.push_back(population_power_kw(cur, params));
        if (record_snapshots)
            res.snapshots.push_back({cur, init.time_index + t + 1});
    }
    return res;
}

/// Homogeneous convenience overload.
inline SimulationResult simulate_population(
    const PopulationSnapshot& init, const TclParams& params, long steps,
    std::uint64_t seed, bool record_snapshots = false,
    const std::vector<double>* setpoint_schedule = nullptr,
    std::uint64_t run_index = 0) {
    return simulate_population(init,
                               std::vector<TclParams>(init.states.size(), params),
                               steps, seed, record_snapshots, setpoint_schedule,
                               run_index);
}

struct McPowerResult {
    std::vector<double> mean_kw;    ///< per-step sample mean of y(t)
    std::vector<double> stderr_kw;  ///< per-step standard error across runs
};

/**
 * Monte Carlo estimate of E[y(t)] over independent runs. Run r uses noise
 * streams (seed, r, tcl); runs=1 reproduces simulate_population exactly.
 * Runs are independent, so they may be computed on several threads; the
 * reduction is performed in run order either way.
 */
inline McPowerResult mc_expected_power(const PopulationSnapshot& init,
                                       const std::vector<TclParams>& params,
                                       long steps, long runs,
                                       std::uint64_t seed, int threads = 1) {
    if (runs < 1) throw std::invalid_argument("mc_expected_power: runs must be >= 1");
    std::vector<std::vector<double>> per_run(static_cast<std::size_t>(runs));
    auto worker = [&](long first, long stride) {
        for (long r = first; r < runs; r += stride)
            per_run[static_cast<std::size_t>(r)] =
                simulate_population(init, params, steps, seed, false, nullptr,
                                    static_cast<std::uint64_t>(r))
                    .power_kw;
    };
    if (threads <= 1 || runs == 1) {
        worker(0, 1);
    } else {
        std::vector<std::thread> pool;
        const int nt = static_cast<int>(std::min<long>(threads, runs));
        pool.reserve(static_cast<std::size_t>(nt));
        for (int k = 0; k < nt; ++k) pool.emplace_back(worker, k, nt);
        for (auto& th : pool) th.join();
    }
    std::vector<double> sum(steps + 1, 0.0), sumsq(steps + 1, 0.0);
    for (long r = 0; r < runs; ++r) {
        for (long t = 0; t <= steps; ++t) {
            const double y = per_run[static_cast<std::size_t>(r)][static_cast<std::size_t>(t)];
            sum[t] += y;
            sumsq[t] += y * y;
        }
    }
    McPowerResult out;
    out.mean_kw.resize(steps + 1);
    out.stderr_kw.resize(steps + 1, 0.0);
    for (long t = 0; t <= steps; ++t) {
        const double m = sum[t] / runs;
        out.mean_kw[t] = m;
        if (runs > 1) {
            double var = (sumsq[t] - runs * m * m) / (runs - 1);
            if (var < 0.0) var = 0.0;
            out.stderr_kw[t] = std::sqrt(var / runs);
        }
    }
    return out;
}

inline McPowerResult mc_expected_power(const PopulationSnapshot& init,
                                       const TclParams& params, long steps,
                                       long runs, std::uint64_t seed,
                                       int threads = 1) {
    return mc_expected_power(init,
                             std::vector<TclParams>(init.states.size(), params),
                             steps, runs, seed, threads);
}

struct ModeEstimate {
    double p_hat = 0.0;    ///< estimate of P(m(N) = 1)
    double stderr_ = 0.0;  ///< binomial standard error
    long runs = 0;
};

/**
 * Monte Carlo estimate of E[m(N) | m0, theta0] for a single TCL; the oracle
 * used to check chain value functions.
 */
inline ModeEstimate mc_expected_mode(TclState initial, const TclParams& params,
                                     long horizon_n, long runs,
                                     std::uint64_t seed) {
    if (horizon_n < 1) throw std::invalid_argument("mc_expected_mode: N must be >= 1");
    if (runs < 1) throw std::invalid_argument("mc_expected_mode: runs must be >= 1");
    params.validate();
    long on_count = 0;
    for (long r = 0; r < runs; ++r) {
        RngStream rng = derive_stream(seed, 0x6d6f /* mode */, static_cast<std::uint64_t>(r));
        TclState s = initial;
        for (long t = 0; t < horizon_n; ++t) {
            const double w = params.sigma > 0.0 ? rng.next_normal(0.0, params.sigma) : 0.0;
            s = tcl_step(s, params, w);
        }
        on_count += s.mode;
    }
    ModeEstimate est;
    est.runs = runs;
    est.p_hat = static_cast<double>(on_count) / runs;
    est.stderr_ = std::sqrt(est.p_hat * (1.0 - est.p_hat) / runs);
    return est;
}

} // namespace tclagg
