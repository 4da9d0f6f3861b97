#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "tclagg/aggregate.hpp"
#include "tclagg/chain.hpp"
#include "tclagg/rng.hpp"

namespace tclagg {

/**
 * Switched family of occupancy dynamics indexed by the admissible set-point
 * grid theta_s + k*upsilon, k = -l..l. All members share the temperature
 * grid and the Gaussian marginals; moving the set-point only re-anchors the
 * dead-band, i.e. which rows land in which mode block. F[k] is the state
 * matrix P(theta_k)^T acting on occupancy vectors.
 */
struct SwitchedControlModel {
    std::vector<Eigen::MatrixXd> F;
    TemperaturePartition partition;
    TclParams params;
    long n_p = 0;
    double p_rate_on = 0.0;
    Eigen::RowVectorXd H;

    int family_size() const { return static_cast<int>(F.size()); }
    int nominal_index() const { return family_size() / 2; }
    double setpoint_of(int index) const {
        return partition.theta_k(index - nominal_index());
    }
    int dim() const { return static_cast<int>(F.front().rows()); }

    /// Transition matrix (row-stochastic) of family member k.
    Eigen::MatrixXd chain_matrix(int index) const {
        return F[static_cast<std::size_t>(index)].transpose();
    }
};

/**
 * Build the switched family from precomputed marginals (the heterogeneous
 * averaging abstraction passes its averaged marginals here). Requires
 * 2l <= m so every shifted dead-band stays inside the truncated grid.
 */
inline SwitchedControlModel build_switched_family(const KernelMarginals& marginals,
                                                  const TemperaturePartition& partition,
                                                  const TclParams& params, long n_p,
                                                  double p_rate_on) {
    if (2 * partition.l_steps > partition.m_steps)
        throw std::invalid_argument(
            "build_switched_family: a shifted dead-band exits the grid (need 2l <= m)");
    SwitchedControlModel model;
    model.partition = partition;
    model.params = params;
    model.n_p = n_p;
    model.p_rate_on = p_rate_on;
    model.H = output_row(partition.dim(), n_p, p_rate_on);
    model.F.reserve(static_cast<std::size_t>(2 * partition.l_steps) + 1);
    for (int k = -partition.l_steps; k <= partition.l_steps; ++k) {
        const double theta_s = partition.theta_k(k);
        model.F.push_back(
            assemble_chain(marginals, partition, params, theta_s, /*absorbing=*/true)
                .transpose());
    }
    return model;
}

inline SwitchedControlModel build_switched_family(const TclParams& params,
                                                  const TemperaturePartition& partition,
                                                  long n_p) {
    return build_switched_family(build_marginals(partition, params), partition, params,
                                 n_p, params.p_rate_on());
}

/**
 * Kalman filter state for the occupancy estimate. The covariance is kept
 * symmetric; the estimate itself is not projected onto the simplex (the raw
 * value feeds the controllers), but the state-dependent noise covariance is
 * evaluated on a nonnegative copy so it stays positive semidefinite.
 */
struct FilterState {
    Eigen::VectorXd x_hat;
    Eigen::MatrixXd P_cov;
    double R_v = 0.0; ///< measurement noise variance [kW^2]
};

inline FilterState make_filter(const Eigen::VectorXd& x0, double r_v,
                               double p0_scale = 1e-4) {
    if (!(r_v > 0.0)) throw std::invalid_argument("make_filter: R_v must be > 0");
    FilterState f;
    f.x_hat = x0;
    f.P_cov = p0_scale * Eigen::MatrixXd::Identity(x0.size(), x0.size());
    f.R_v = r_v;
    return f;
}

/**
 * One combined time + measurement update with state-dependent process noise:
 *   x^-    = F x,   P^- = F P F^T + Sigma(x)
 *   K      = P^- H^T / (H P^- H^T + R_v)
 *   x' = x^- + K (y - H x^-),   P' = (I - K H) P^-
 */
inline FilterState kf_step(const FilterState& f, const Eigen::MatrixXd& F_sigma,
                           double y_meas, const Eigen::RowVectorXd& H, long n_p) {
    if (!(f.R_v > 0.0)) throw std::invalid_argument("kf_step: R_v must be > 0");
    const Eigen::MatrixXd sigma =
        sigma_of_x(f.x_hat.cwiseMax(0.0), F_sigma.transpose(), n_p);
    const Eigen::VectorXd x_pred = F_sigma * f.x_hat;
    Eigen::MatrixXd p_pred = F_sigma * f.P_cov * F_sigma.transpose() + sigma;
    p_pred = 0.5 * (p_pred + p_pred.transpose());

    const double innovation_var = (H * p_pred * H.transpose())(0) + f.R_v;
    const Eigen::VectorXd gain = p_pred * H.transpose() / innovation_var;
    FilterState out;
    out.R_v = f.R_v;
    out.x_hat = x_pred + gain * (y_meas - (H * x_pred)(0));
    Eigen::MatrixXd p_new =
        (Eigen::MatrixXd::Identity(p_pred.rows(), p_pred.cols()) - gain * H) * p_pred;
    out.P_cov = 0.5 * (p_new + p_new.transpose());
    return out;
}

/**
 * One-step regulation: pick the family member minimizing the predicted
 * output error |H F_k x_hat - y_des|. Ties prefer the set-point closest to
 * nominal, then the lower index.
 */
inline int one_step_regulate(const Eigen::VectorXd& x_hat,
                             const SwitchedControlModel& model, double y_des) {
    int best = -1;
    double best_err = 0.0;
    for (int k = 0; k < model.family_size(); ++k) {
        const double err =
            std::abs((model.H * (model.F[static_cast<std::size_t>(k)] * x_hat))(0) - y_des);
        if (best < 0 || err < best_err - 1e-12 ||
            (std::abs(err - best_err) <= 1e-12 &&
             std::abs(k - model.nominal_index()) <
                 std::abs(best - model.nominal_index()))) {
            best = k;
            best_err = err;
        }
    }
    return best;
}

/**
 * Receding-horizon tracking problem. y_des[j] is the reference for step
 * t+1+j; rate_limit caps |schedule step| in grid cells per move, including
 * the first move away from the current set-point. kappa (optional) weights
 * the terminal occupancy linearly.
 */
struct SmpcProblem {
    int horizon = 1;
    std::vector<double> y_des;
    Eigen::VectorXd kappa; ///< empty means zero terminal weight
    int rate_limit = 1;

    void validate(int dim) const {
        if (horizon < 1) throw std::invalid_argument("SmpcProblem: horizon must be >= 1");
        if (static_cast<int>(y_des.size()) != horizon)
            throw std::invalid_argument("SmpcProblem: y_des length must equal the horizon");
        if (rate_limit < 0) throw std::invalid_argument("SmpcProblem: negative rate limit");
        if (kappa.size() != 0 && kappa.size() != dim)
            throw std::invalid_argument("SmpcProblem: kappa dimension mismatch");
    }
};

namespace detail {

/// R(C, D) = C^{o2} D - (C D)^{o2} for a row vector C.
inline Eigen::RowVectorXd hadamard_residue(const Eigen::RowVectorXd& c,
                                           const Eigen::MatrixXd& d) {
    return c.array().square().matrix() * d - (c * d).array().square().matrix();
}

inline void check_schedule(const SmpcProblem& problem, const std::vector<int>& schedule,
                           int family, int current_index) {
    if (static_cast<int>(schedule.size()) != problem.horizon)
        throw std::invalid_argument("smpc: schedule length must equal the horizon");
    int prev = current_index;
    for (int idx : schedule) {
        if (idx < 0 || idx >= family)
            throw std::invalid_argument("smpc: schedule index out of range");
        if (std::abs(idx - prev) > problem.rate_limit)
            throw std::invalid_argument("smpc: schedule violates the rate limit");
        prev = idx;
    }
}

} // namespace detail

/**
 * Explicit SMPC cost of a schedule sigma(t..T-1):
 *   J = sum_tau [H Phi(tau,t) X - y_des(tau)]^2 + Psi(T,t) X .
 * The noise part of Psi, contracted against X, telescopes across the double
 * sum of Hadamard residues to
 *   (1/n_p) [ sum_tau (H^{o2}) x_tau  -  sum_tau (H Phi(tau,t))^{o2} x_t ],
 * so the evaluation needs one state and one row recursion along the
 * schedule. The matrix routes below serve as its cross-check.
 */
inline double smpc_cost(const SmpcProblem& problem, const std::vector<int>& schedule,
                        const Eigen::VectorXd& x, const SwitchedControlModel& model,
                        int current_index) {
    problem.validate(model.dim());
    detail::check_schedule(problem, schedule, model.family_size(), current_index);
    const int T = problem.horizon;
    auto F = [&](int j) -> const Eigen::MatrixXd& {
        return model.F[static_cast<std::size_t>(schedule[static_cast<std::size_t>(j)])];
    };
    const Eigen::RowVectorXd h_sq = model.H.array().square().matrix();

    std::vector<Eigen::VectorXd> xs(static_cast<std::size_t>(T) + 1);
    xs[0] = x;
    double tracking = 0.0;
    double noise = 0.0;
    for (int tau = 1; tau <= T; ++tau) {
        xs[static_cast<std::size_t>(tau)] = F(tau - 1) * xs[static_cast<std::size_t>(tau) - 1];
        const double e = (model.H * xs[static_cast<std::size_t>(tau)])(0) -
                         problem.y_des[static_cast<std::size_t>(tau - 1)];
        tracking += e * e;
        // Telescoped noise contribution (H^{o2}) x_tau - (H Phi(tau,t))^{o2} x.
        Eigen::RowVectorXd rho = model.H;
        for (int k = tau - 1; k >= 0; --k) rho = rho * F(k);
        noise += (h_sq * xs[static_cast<std::size_t>(tau)])(0) -
                 (rho.array().square().matrix() * x)(0);
    }
    noise /= static_cast<double>(model.n_p);

    double terminal = 0.0;
    if (problem.kappa.size() != 0)
        terminal = problem.kappa.dot(xs[static_cast<std::size_t>(T)]);
    return tracking + noise + terminal;
}

/**
 * Noise-plus-terminal row Psi(T, t) by the explicit double sum; the
 * backward-recursion twin below must agree with it. Validation surfaces for
 * the closed-form cost.
 */
inline Eigen::RowVectorXd psi_double_sum(const std::vector<int>& schedule,
                                         const SwitchedControlModel& model,
                                         const Eigen::VectorXd& kappa) {
    const int T = static_cast<int>(schedule.size());
    const int dim = model.dim();
    auto F = [&](int j) -> const Eigen::MatrixXd& {
        return model.F[static_cast<std::size_t>(schedule[static_cast<std::size_t>(j)])];
    };
    // Phi(j, 0) products, Phi(0,0) = I.
    std::vector<Eigen::MatrixXd> phi(static_cast<std::size_t>(T) + 1);
    phi[0] = Eigen::MatrixXd::Identity(dim, dim);
    for (int j = 0; j < T; ++j) phi[static_cast<std::size_t>(j) + 1] = F(j) * phi[static_cast<std::size_t>(j)];

    Eigen::RowVectorXd psi = kappa.size() ? Eigen::RowVectorXd(kappa.transpose() * phi[static_cast<std::size_t>(T)])
                                          : Eigen::RowVectorXd(Eigen::RowVectorXd::Zero(dim));
    for (int j1 = 0; j1 < T; ++j1) {
        for (int j2 = j1 + 1; j2 <= T; ++j2) {
            Eigen::RowVectorXd h = model.H; // H Phi(j2, j1+1)
            for (int k = j2 - 1; k >= j1 + 1; --k) h = h * F(k);
            psi += detail::hadamard_residue(h, F(j1)) * phi[static_cast<std::size_t>(j1)] /
                   static_cast<double>(model.n_p);
        }
    }
    return psi;
}

/// Psi(T, t) by the backward recursion Psi(T,j) = Psi(T,j+1) F_j + noise row.
inline Eigen::RowVectorXd psi_recursion(const std::vector<int>& schedule,
                                        const SwitchedControlModel& model,
                                        const Eigen::VectorXd& kappa) {
    const int T = static_cast<int>(schedule.size());
    const int dim = model.dim();
    auto F = [&](int j) -> const Eigen::MatrixXd& {
        return model.F[static_cast<std::size_t>(schedule[static_cast<std::size_t>(j)])];
    };
    Eigen::RowVectorXd psi =
        kappa.size() ? Eigen::RowVectorXd(kappa.transpose())
                     : Eigen::RowVectorXd(Eigen::RowVectorXd::Zero(dim));
    for (int j = T - 1; j >= 0; --j) {
        Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(dim);
        for (int tau = j + 1; tau <= T; ++tau) {
            Eigen::RowVectorXd h = model.H; // H Phi(tau, j+1)
            for (int k = tau - 1; k >= j + 1; --k) h = h * F(k);
            acc += detail::hadamard_residue(h, F(j));
        }
        psi = psi * F(j) + acc / static_cast<double>(model.n_p);
    }
    return psi;
}

/// Matrix-route cost used to validate the vectorized smpc_cost.
inline double smpc_cost_matrix(const SmpcProblem& problem, const std::vector<int>& schedule,
                               const Eigen::VectorXd& x, const SwitchedControlModel& model) {
    const int T = problem.horizon;
    const Eigen::VectorXd kappa =
        problem.kappa.size() ? problem.kappa : Eigen::VectorXd::Zero(model.dim());
    double cost = (psi_double_sum(schedule, model, kappa) * x)(0);
    Eigen::VectorXd xt = x;
    for (int j = 0; j < T; ++j) {
        xt = model.F[static_cast<std::size_t>(schedule[static_cast<std::size_t>(j)])] * xt;
        const double e = (model.H * xt)(0) - problem.y_des[static_cast<std::size_t>(j)];
        cost += e * e;
    }
    return cost;
}

struct PlanResult {
    std::vector<int> schedule;
    double cost = 0.0;
    long evaluated = 0;
};

namespace detail {

/// Prefer the earlier deviation toward nominal, then the lower index.
inline bool schedule_preferred(const std::vector<int>& a, const std::vector<int>& b,
                               int nominal) {
    for (std::size_t j = 0; j < a.size(); ++j) {
        const int da = std::abs(a[j] - nominal);
        const int db = std::abs(b[j] - nominal);
        if (da != db) return da < db;
        if (a[j] != b[j]) return a[j] < b[j];
    }
    return false;
}

template <typename CostFn>
PlanResult enumerate_schedules(int horizon, int rate_limit, int family,
                               int current_index, CostFn&& cost_fn, int nominal) {
    // Count before enumerating; the search is exhaustive by design.
    double estimate = 1.0;
    for (int j = 0; j < horizon; ++j) estimate *= 2.0 * rate_limit + 1.0;
    if (estimate > 1e6)
        throw NumericalGuardError(
            "smpc_plan: schedule enumeration exceeds 1e6; lower the horizon or rate limit");

    PlanResult best;
    std::vector<int> cur(static_cast<std::size_t>(horizon));
    std::function<void(int, int)> dfs = [&](int depth, int prev) {
        if (depth == horizon) {
            const double c = cost_fn(cur);
            ++best.evaluated;
            if (best.schedule.empty() || c < best.cost - 1e-12 ||
                (std::abs(c - best.cost) <= 1e-12 &&
                 schedule_preferred(cur, best.schedule, nominal))) {
                best.cost = c;
                best.schedule = cur;
            }
            return;
        }
        const int lo = std::max(0, prev - rate_limit);
        const int hi = std::min(family - 1, prev + rate_limit);
        for (int k = lo; k <= hi; ++k) {
            cur[static_cast<std::size_t>(depth)] = k;
            dfs(depth + 1, k);
        }
    };
    dfs(0, current_index);
    return best;
}

} // namespace detail

/// Exhaustive rate-limited minimization of the SMPC cost (receding horizon:
/// apply schedule[0]).
inline PlanResult smpc_plan(const SmpcProblem& problem, const Eigen::VectorXd& x_hat,
                            const SwitchedControlModel& model, int current_index) {
    problem.validate(model.dim());
    return detail::enumerate_schedules(
        problem.horizon, problem.rate_limit, model.family_size(), current_index,
        [&](const std::vector<int>& s) {
            return smpc_cost(problem, s, x_hat, model, current_index);
        },
        model.nominal_index());
}

/// Expected-energy-cost minimization over the price profile lambda(t+1..T).
inline PlanResult energy_cost_plan(const std::vector<double>& price, int horizon,
                                   int rate_limit, const Eigen::VectorXd& x_hat,
                                   const SwitchedControlModel& model, int current_index) {
    if (static_cast<int>(price.size()) != horizon)
        throw std::invalid_argument("energy_cost_plan: price length must equal horizon");
    const double h_hours = model.params.h_hours();
    return detail::enumerate_schedules(
        horizon, rate_limit, model.family_size(), current_index,
        [&](const std::vector<int>& s) {
            Eigen::VectorXd x = x_hat;
            double cost = 0.0;
            for (int j = 0; j < horizon; ++j) {
                x = model.F[static_cast<std::size_t>(s[static_cast<std::size_t>(j)])] * x;
                cost += price[static_cast<std::size_t>(j)] * h_hours * (model.H * x)(0);
            }
            return cost;
        },
        model.nominal_index());
}

// ---------------------------------------------------------------------------
// Closed loop
// ---------------------------------------------------------------------------

enum class ControllerKind { None, OneStep, Smpc };

struct ClosedLoopScenario {
    PopulationSnapshot init_population;
    std::vector<TclParams> tcl_params; ///< per-TCL exact dynamics
    SwitchedControlModel model;
    ControllerKind controller = ControllerKind::OneStep;
    SmpcProblem smpc;                ///< horizon/rate/kappa for ControllerKind::Smpc
    std::vector<double> y_des;       ///< reference, length >= steps + 2
    double R_v = 1.0;                ///< measurement noise variance [kW^2]
    Eigen::VectorXd x_hat0;          ///< initial occupancy estimate
    long steps = 0;
    std::uint64_t seed = 0;
};

struct ClosedLoopResult {
    std::vector<double> y_true_kw;
    std::vector<double> y_meas_kw;
    std::vector<double> y_est_kw;
    std::vector<double> y_des_kw;
    std::vector<double> theta_s_c;    ///< set-point applied at each step
    std::vector<int> sigma_index;
    std::vector<Eigen::VectorXd> x_hat; ///< estimate after each measurement
};

/**
 * Measure -> filter -> optimize -> apply, exactly the one-step pipeline: the
 * set-point chosen from the estimate at t+1 is applied to every TCL during
 * step t+1. The population is simulated exactly; the controller only sees
 * the noisy total power.
 */
inline ClosedLoopResult closed_loop_run(const ClosedLoopScenario& sc) {
    const long n_p = static_cast<long>(sc.init_population.states.size());
    if (sc.tcl_params.size() != sc.init_population.states.size())
        throw std::invalid_argument("closed_loop_run: per-TCL parameter list mismatch");
    if (static_cast<long>(sc.y_des.size()) < sc.steps + 2)
        throw std::invalid_argument("closed_loop_run: reference shorter than the run");

    ClosedLoopResult res;
    std::vector<TclState> states = sc.init_population.states;
    std::vector<RngStream> streams;
    streams.reserve(static_cast<std::size_t>(n_p));
    for (long j = 0; j < n_p; ++j)
        streams.push_back(derive_stream(sc.seed, 0x4d43 /* mc */, static_cast<std::uint64_t>(j)));
    RngStream meas_stream = derive_stream(sc.seed, 0x6d656173 /* meas */);

    FilterState filter = make_filter(sc.x_hat0, sc.R_v);
    int sigma = sc.model.nominal_index();

    const double y0 = population_power_kw(states, sc.tcl_params);
    res.y_true_kw.push_back(y0);
    res.y_meas_kw.push_back(y0);
    res.y_est_kw.push_back((sc.model.H * filter.x_hat)(0));
    res.y_des_kw.push_back(sc.y_des[0]);
    res.theta_s_c.push_back(sc.model.setpoint_of(sigma));
    res.sigma_index.push_back(sigma);
    res.x_hat.push_back(filter.x_hat);

    for (long t = 0; t < sc.steps; ++t) {
        // Exact population step under the applied set-point.
        const double theta_s = sc.model.setpoint_of(sigma);
        for (long j = 0; j < n_p; ++j) {
            const auto& pj = sc.tcl_params[static_cast<std::size_t>(j)];
            const double w =
                pj.sigma > 0.0 ? streams[static_cast<std::size_t>(j)].next_normal(0.0, pj.sigma)
                               : 0.0;
            states[static_cast<std::size_t>(j)] =
                tcl_step(states[static_cast<std::size_t>(j)], pj, w, theta_s);
        }
        const double y_true = population_power_kw(states, sc.tcl_params);
        const double y_meas =
            y_true + (sc.R_v > 0.0 ? meas_stream.next_normal(0.0, std::sqrt(sc.R_v)) : 0.0);

        filter = kf_step(filter, sc.model.F[static_cast<std::size_t>(sigma)], y_meas,
                         sc.model.H, sc.model.n_p);

        // Choose the set-point for the next step from the fresh estimate.
        int next_sigma = sigma;
        if (sc.controller == ControllerKind::OneStep) {
            const std::size_t ref_idx =
                std::min(static_cast<std::size_t>(t) + 2, sc.y_des.size() - 1);
            next_sigma = one_step_regulate(filter.x_hat, sc.model, sc.y_des[ref_idx]);
        } else if (sc.controller == ControllerKind::Smpc) {
            SmpcProblem prob = sc.smpc;
            prob.y_des.resize(static_cast<std::size_t>(prob.horizon));
            for (int j = 0; j < prob.horizon; ++j) {
                const std::size_t ref_idx =
                    std::min(static_cast<std::size_t>(t) + 2 + static_cast<std::size_t>(j),
                             sc.y_des.size() - 1);
                prob.y_des[static_cast<std::size_t>(j)] = sc.y_des[ref_idx];
            }
            next_sigma = smpc_plan(prob, filter.x_hat, sc.model, sigma).schedule.front();
        }
        sigma = next_sigma;

        res.y_true_kw.push_back(y_true);
        res.y_meas_kw.push_back(y_meas);
        res.y_est_kw.push_back((sc.model.H * filter.x_hat)(0));
        res.y_des_kw.push_back(sc.y_des[static_cast<std::size_t>(t) + 1]);
        res.theta_s_c.push_back(sc.model.setpoint_of(sigma));
        res.sigma_index.push_back(sigma);
        res.x_hat.push_back(filter.x_hat);
    }
    return res;
}

/// Quasi-stationary mean power of a family member. Mass diffusing into the
/// absorbing tail bins is renormalized away each step, so the iteration
/// converges to the bulk's quasi-stationary occupancy instead of slowly
/// absorbing everything on long horizons.
inline double steady_state_power(const SwitchedControlModel& model, int index,
                                 long iters = 20000) {
    Eigen::VectorXd x =
        discretize_initial(InitialUniformDeadband{0}, model.partition);
    const auto& F = model.F[static_cast<std::size_t>(index)];
    for (long i = 0; i < iters; ++i) {
        x = F * x;
        x /= x.sum();
        const int n = model.partition.n_bins;
        x(0) = x(n - 1) = x(n) = x(2 * n - 1) = 0.0;
    }
    return (model.H * x)(0);
}

} // namespace tclagg
