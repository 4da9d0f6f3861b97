#pragma once

#include <json.hpp>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "tclagg/chain.hpp"
#include "tclagg/tcl.hpp"

namespace tclagg {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PopulationConfig {
    long n_p = 0;
    InitialSpec init = InitialPointMass{};
    long burn_in_steps = 0;
};

struct HeterogeneityConfig {
    std::string parameter;
    bool uniform = true;
    double lo = 0.0, hi = 0.0;          ///< uniform distribution bounds
    std::vector<double> values;         ///< explicit sample list
    std::string mode = "averaging";     ///< averaging | clustering
    int n_clusters = 1;
};

struct AbstractionConfig {
    std::string method = "stochastic"; ///< stochastic | deterministic
    int l = 0, m = 0;                  ///< stochastic grid
    std::optional<int> n_d;            ///< baseline bins
};

struct ControlConfig {
    std::string mode = "none"; ///< none | onestep | smpc
    int horizon = 5;
    double rate_limit_c_per_step = 0.025;
    double kappa = 0.0;
    double rv_fraction = 0.005;
};

struct ReferenceConfig {
    std::string type = "constant"; ///< constant | piecewise
    double value_kw = 0.0;
    std::vector<long> times;
    std::vector<double> values_kw;
};

struct SimulationConfig {
    long steps = 0;
    long mc_runs = 1;
    std::uint64_t seed = 0;
    bool dump_occupancies = false; ///< add X_1..X_2n columns to the aggregate trajectory
};

struct BoundsConfig {
    std::vector<int> horizons;
    bool empirical = false;
    long empirical_runs = 50;
};

struct ReductionConfig {
    bool enabled = false;
    int order = 6;
};

struct ScenarioConfig {
    int version = 1;
    PopulationConfig population;
    TclParams params;
    std::optional<HeterogeneityConfig> heterogeneity;
    AbstractionConfig abstraction;
    std::optional<ControlConfig> control;
    std::optional<ReferenceConfig> reference;
    SimulationConfig simulation;
    std::optional<BoundsConfig> bounds;
    std::optional<ReductionConfig> reduction;
};

namespace detail {

using nlohmann::json;

inline void require_keys(const json& j, const std::string& path,
                         const std::set<std::string>& allowed,
                         const std::set<std::string>& required) {
    if (!j.is_object()) throw ConfigError(path + ": expected an object");
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key))
            throw ConfigError(path + ": unknown key '" + key + "'");
    for (const auto& key : required)
        if (!j.contains(key))
            throw ConfigError(path + ": missing required key '" + key + "'");
}

inline double get_num(const json& j, const std::string& path, const std::string& key) {
    if (!j.at(key).is_number())
        throw ConfigError(path + "." + key + ": expected a number");
    return j.at(key).get<double>();
}

inline long get_int(const json& j, const std::string& path, const std::string& key) {
    if (!j.at(key).is_number_integer())
        throw ConfigError(path + "." + key + ": expected an integer");
    return j.at(key).get<long>();
}

inline std::string get_str(const json& j, const std::string& path, const std::string& key) {
    if (!j.at(key).is_string())
        throw ConfigError(path + "." + key + ": expected a string");
    return j.at(key).get<std::string>();
}

inline InitialSpec parse_init(const json& j, const std::string& path) {
    require_keys(j, path, {"type", "mode", "theta", "mean", "std"}, {"type", "mode"});
    const std::string type = get_str(j, path, "type");
    const int mode = static_cast<int>(get_int(j, path, "mode"));
    if (mode != 0 && mode != 1) throw ConfigError(path + ".mode: must be 0 or 1");
    if (type == "point") {
        if (!j.contains("theta")) throw ConfigError(path + ": point init needs 'theta'");
        return InitialPointMass{mode, get_num(j, path, "theta")};
    }
    if (type == "uniform_deadband") return InitialUniformDeadband{mode};
    if (type == "gaussian") {
        if (!j.contains("mean") || !j.contains("std"))
            throw ConfigError(path + ": gaussian init needs 'mean' and 'std'");
        return InitialGaussian{mode, get_num(j, path, "mean"), get_num(j, path, "std")};
    }
    throw ConfigError(path + ".type: unknown initial distribution '" + type + "'");
}

} // namespace detail

inline ScenarioConfig parse_config(const nlohmann::json& j) {
    using detail::get_int;
    using detail::get_num;
    using detail::get_str;
    using detail::require_keys;

    require_keys(j, "config",
                 {"version", "population", "params", "heterogeneity", "abstraction",
                  "control", "reference", "simulation", "bounds", "reduction"},
                 {"version", "population", "params", "abstraction", "simulation"});
    ScenarioConfig cfg;
    cfg.version = static_cast<int>(get_int(j, "config", "version"));
    if (cfg.version != 1) throw ConfigError("config.version: only version 1 is supported");

    {
        const auto& p = j.at("population");
        require_keys(p, "population", {"n_p", "init", "burn_in_steps"}, {"n_p", "init"});
        cfg.population.n_p = get_int(p, "population", "n_p");
        if (cfg.population.n_p < 1) throw ConfigError("population.n_p: must be >= 1");
        cfg.population.init = detail::parse_init(p.at("init"), "population.init");
        if (p.contains("burn_in_steps")) {
            cfg.population.burn_in_steps = get_int(p, "population", "burn_in_steps");
            if (cfg.population.burn_in_steps < 0)
                throw ConfigError("population.burn_in_steps: must be >= 0");
        }
    }
    {
        const auto& p = j.at("params");
        require_keys(p, "params",
                     {"theta_s", "delta", "theta_a", "R", "C", "P_rate", "eta",
                      "h_seconds", "sigma"},
                     {"theta_s", "delta", "theta_a", "R", "C", "P_rate", "eta",
                      "h_seconds", "sigma"});
        cfg.params.theta_s = get_num(p, "params", "theta_s");
        cfg.params.delta = get_num(p, "params", "delta");
        cfg.params.theta_a = get_num(p, "params", "theta_a");
        cfg.params.R = get_num(p, "params", "R");
        cfg.params.C = get_num(p, "params", "C");
        cfg.params.P_rate = get_num(p, "params", "P_rate");
        cfg.params.eta = get_num(p, "params", "eta");
        cfg.params.h_seconds = get_num(p, "params", "h_seconds");
        cfg.params.sigma = get_num(p, "params", "sigma");
        try {
            cfg.params.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("params: ") + e.what());
        }
    }
    if (j.contains("heterogeneity")) {
        const auto& h = j.at("heterogeneity");
        require_keys(h, "heterogeneity",
                     {"parameter", "distribution", "mode", "n_clusters"},
                     {"parameter", "distribution", "mode"});
        HeterogeneityConfig hc;
        hc.parameter = get_str(h, "heterogeneity", "parameter");
        const auto& d = h.at("distribution");
        require_keys(d, "heterogeneity.distribution", {"type", "lo", "hi", "values"},
                     {"type"});
        const std::string dtype = get_str(d, "heterogeneity.distribution", "type");
        if (dtype == "uniform") {
            hc.uniform = true;
            hc.lo = get_num(d, "heterogeneity.distribution", "lo");
            hc.hi = get_num(d, "heterogeneity.distribution", "hi");
            if (!(hc.lo < hc.hi))
                throw ConfigError("heterogeneity.distribution: need lo < hi");
        } else if (dtype == "values") {
            hc.uniform = false;
            if (!d.contains("values") || !d.at("values").is_array())
                throw ConfigError("heterogeneity.distribution.values: expected an array");
            for (const auto& v : d.at("values")) hc.values.push_back(v.get<double>());
        } else {
            throw ConfigError("heterogeneity.distribution.type: unknown type '" + dtype + "'");
        }
        hc.mode = get_str(h, "heterogeneity", "mode");
        if (hc.mode != "averaging" && hc.mode != "clustering")
            throw ConfigError("heterogeneity.mode: must be 'averaging' or 'clustering'");
        if (hc.mode == "clustering") {
            if (!h.contains("n_clusters"))
                throw ConfigError("heterogeneity: clustering requires n_clusters");
            hc.n_clusters = static_cast<int>(get_int(h, "heterogeneity", "n_clusters"));
            if (hc.n_clusters < 1) throw ConfigError("heterogeneity.n_clusters: must be >= 1");
        }
        cfg.heterogeneity = hc;
    }
    {
        const auto& a = j.at("abstraction");
        require_keys(a, "abstraction", {"method", "l", "m", "n_d"}, {"method"});
        cfg.abstraction.method = get_str(a, "abstraction", "method");
        if (cfg.abstraction.method == "stochastic") {
            if (!a.contains("l") || !a.contains("m"))
                throw ConfigError("abstraction: stochastic method requires 'l' and 'm'");
            cfg.abstraction.l = static_cast<int>(get_int(a, "abstraction", "l"));
            cfg.abstraction.m = static_cast<int>(get_int(a, "abstraction", "m"));
            if (cfg.abstraction.l < 1 || cfg.abstraction.l >= cfg.abstraction.m)
                throw ConfigError("abstraction: need 0 < l < m");
        } else if (cfg.abstraction.method != "deterministic") {
            throw ConfigError("abstraction.method: unknown method '" +
                              cfg.abstraction.method + "'");
        }
        if (a.contains("n_d")) {
            const int nd = static_cast<int>(get_int(a, "abstraction", "n_d"));
            if (nd < 2) throw ConfigError("abstraction.n_d: must be >= 2");
            cfg.abstraction.n_d = nd;
        }
        if (cfg.abstraction.method == "deterministic" && !cfg.abstraction.n_d)
            throw ConfigError("abstraction: deterministic method requires 'n_d'");
    }
    if (j.contains("control")) {
        const auto& c = j.at("control");
        require_keys(c, "control",
                     {"mode", "horizon", "rate_limit_c_per_step", "kappa", "Rv_fraction"},
                     {"mode"});
        ControlConfig cc;
        cc.mode = get_str(c, "control", "mode");
        if (cc.mode != "none" && cc.mode != "onestep" && cc.mode != "smpc")
            throw ConfigError("control.mode: must be none, onestep, or smpc");
        if (c.contains("horizon")) {
            cc.horizon = static_cast<int>(get_int(c, "control", "horizon"));
            if (cc.horizon < 1) throw ConfigError("control.horizon: must be >= 1");
        }
        if (c.contains("rate_limit_c_per_step")) {
            cc.rate_limit_c_per_step = get_num(c, "control", "rate_limit_c_per_step");
            if (cc.rate_limit_c_per_step < 0.0)
                throw ConfigError("control.rate_limit_c_per_step: must be >= 0");
        }
        if (c.contains("kappa")) cc.kappa = get_num(c, "control", "kappa");
        if (c.contains("Rv_fraction")) {
            cc.rv_fraction = get_num(c, "control", "Rv_fraction");
            if (!(cc.rv_fraction > 0.0))
                throw ConfigError("control.Rv_fraction: must be > 0");
        }
        cfg.control = cc;
    }
    if (j.contains("reference")) {
        const auto& r = j.at("reference");
        require_keys(r, "reference", {"type", "value_kw", "times", "values_kw"}, {"type"});
        ReferenceConfig rc;
        rc.type = get_str(r, "reference", "type");
        if (rc.type == "constant") {
            if (!r.contains("value_kw"))
                throw ConfigError("reference: constant type requires 'value_kw'");
            rc.value_kw = get_num(r, "reference", "value_kw");
        } else if (rc.type == "piecewise") {
            if (!r.contains("times") || !r.contains("values_kw"))
                throw ConfigError("reference: piecewise type requires 'times' and 'values_kw'");
            for (const auto& t : r.at("times")) rc.times.push_back(t.get<long>());
            for (const auto& v : r.at("values_kw")) rc.values_kw.push_back(v.get<double>());
            if (rc.times.size() != rc.values_kw.size() || rc.times.empty())
                throw ConfigError("reference: times and values_kw must have equal nonzero length");
            if (rc.times.front() != 0)
                throw ConfigError("reference.times: first entry must be 0");
            for (std::size_t i = 1; i < rc.times.size(); ++i)
                if (rc.times[i] <= rc.times[i - 1])
                    throw ConfigError("reference.times: must be strictly increasing");
        } else {
            throw ConfigError("reference.type: unknown type '" + rc.type + "'");
        }
        cfg.reference = rc;
    }
    {
        const auto& s = j.at("simulation");
        require_keys(s, "simulation", {"steps", "mc_runs", "seed", "dump_occupancies"},
                     {"steps", "seed"});
        cfg.simulation.steps = get_int(s, "simulation", "steps");
        if (cfg.simulation.steps < 1) throw ConfigError("simulation.steps: must be >= 1");
        if (s.contains("mc_runs")) {
            cfg.simulation.mc_runs = get_int(s, "simulation", "mc_runs");
            if (cfg.simulation.mc_runs < 1)
                throw ConfigError("simulation.mc_runs: must be >= 1");
        }
        cfg.simulation.seed = s.at("seed").get<std::uint64_t>();
        if (s.contains("dump_occupancies"))
            cfg.simulation.dump_occupancies = s.at("dump_occupancies").get<bool>();
    }
    if (j.contains("bounds")) {
        const auto& b = j.at("bounds");
        require_keys(b, "bounds", {"horizons", "empirical", "empirical_runs"}, {"horizons"});
        BoundsConfig bc;
        for (const auto& n : b.at("horizons")) {
            bc.horizons.push_back(n.get<int>());
            if (bc.horizons.back() < 2)
                throw ConfigError("bounds.horizons: every horizon must be >= 2");
        }
        if (bc.horizons.empty()) throw ConfigError("bounds.horizons: must be nonempty");
        if (b.contains("empirical")) bc.empirical = b.at("empirical").get<bool>();
        if (b.contains("empirical_runs")) {
            bc.empirical_runs = get_int(b, "bounds", "empirical_runs");
            if (bc.empirical_runs < 1)
                throw ConfigError("bounds.empirical_runs: must be >= 1");
        }
        cfg.bounds = bc;
    }
    if (j.contains("reduction")) {
        const auto& r = j.at("reduction");
        require_keys(r, "reduction", {"enabled", "order"}, {"enabled"});
        ReductionConfig rc;
        rc.enabled = r.at("enabled").get<bool>();
        if (r.contains("order")) {
            rc.order = static_cast<int>(get_int(r, "reduction", "order"));
            if (rc.order < 1) throw ConfigError("reduction.order: must be >= 1");
        }
        cfg.reduction = rc;
    }

    // Cross-section constraints.
    if (cfg.control && cfg.control->mode != "none") {
        if (!cfg.reference)
            throw ConfigError("control: tracking needs a 'reference' section");
        if (cfg.abstraction.method != "stochastic")
            throw ConfigError("control: requires the stochastic abstraction");
        if (cfg.heterogeneity && cfg.heterogeneity->mode == "clustering")
            throw ConfigError(
                "control: closed-loop control supports homogeneous populations and "
                "heterogeneity via averaging, not clustering");
    }
    if (cfg.heterogeneity && !cfg.heterogeneity->uniform &&
        static_cast<long>(cfg.heterogeneity->values.size()) != cfg.population.n_p)
        throw ConfigError("heterogeneity.distribution.values: length must equal population.n_p");
    return cfg;
}

inline ScenarioConfig parse_config_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    return parse_config(j);
}

/// Canonical serialization of the parsed config (sorted keys, stable floats).
inline nlohmann::json config_echo(const ScenarioConfig& cfg) {
    nlohmann::json j;
    j["version"] = cfg.version;
    auto& p = j["population"];
    p["n_p"] = cfg.population.n_p;
    p["burn_in_steps"] = cfg.population.burn_in_steps;
    auto& init = p["init"];
    if (const auto* pm = std::get_if<InitialPointMass>(&cfg.population.init)) {
        init["type"] = "point";
        init["mode"] = pm->mode;
        init["theta"] = pm->theta;
    } else if (const auto* u = std::get_if<InitialUniformDeadband>(&cfg.population.init)) {
        init["type"] = "uniform_deadband";
        init["mode"] = u->mode;
    } else {
        const auto& g = std::get<InitialGaussian>(cfg.population.init);
        init["type"] = "gaussian";
        init["mode"] = g.mode;
        init["mean"] = g.mean;
        init["std"] = g.stddev;
    }
    auto& pr = j["params"];
    pr["theta_s"] = cfg.params.theta_s;
    pr["delta"] = cfg.params.delta;
    pr["theta_a"] = cfg.params.theta_a;
    pr["R"] = cfg.params.R;
    pr["C"] = cfg.params.C;
    pr["P_rate"] = cfg.params.P_rate;
    pr["eta"] = cfg.params.eta;
    pr["h_seconds"] = cfg.params.h_seconds;
    pr["sigma"] = cfg.params.sigma;
    if (cfg.heterogeneity) {
        auto& h = j["heterogeneity"];
        h["parameter"] = cfg.heterogeneity->parameter;
        h["mode"] = cfg.heterogeneity->mode;
        if (cfg.heterogeneity->mode == "clustering")
            h["n_clusters"] = cfg.heterogeneity->n_clusters;
        if (cfg.heterogeneity->uniform) {
            h["distribution"] = {{"type", "uniform"},
                                 {"lo", cfg.heterogeneity->lo},
                                 {"hi", cfg.heterogeneity->hi}};
        } else {
            h["distribution"] = {{"type", "values"},
                                 {"values", cfg.heterogeneity->values}};
        }
    }
    auto& a = j["abstraction"];
    a["method"] = cfg.abstraction.method;
    if (cfg.abstraction.method == "stochastic") {
        a["l"] = cfg.abstraction.l;
        a["m"] = cfg.abstraction.m;
    }
    if (cfg.abstraction.n_d) a["n_d"] = *cfg.abstraction.n_d;
    if (cfg.control) {
        auto& c = j["control"];
        c["mode"] = cfg.control->mode;
        c["horizon"] = cfg.control->horizon;
        c["rate_limit_c_per_step"] = cfg.control->rate_limit_c_per_step;
        c["kappa"] = cfg.control->kappa;
        c["Rv_fraction"] = cfg.control->rv_fraction;
    }
    if (cfg.reference) {
        auto& r = j["reference"];
        r["type"] = cfg.reference->type;
        if (cfg.reference->type == "constant") {
            r["value_kw"] = cfg.reference->value_kw;
        } else {
            r["times"] = cfg.reference->times;
            r["values_kw"] = cfg.reference->values_kw;
        }
    }
    auto& s = j["simulation"];
    s["steps"] = cfg.simulation.steps;
    s["mc_runs"] = cfg.simulation.mc_runs;
    s["seed"] = cfg.simulation.seed;
    s["dump_occupancies"] = cfg.simulation.dump_occupancies;
    if (cfg.bounds) {
        auto& b = j["bounds"];
        b["horizons"] = cfg.bounds->horizons;
        b["empirical"] = cfg.bounds->empirical;
        b["empirical_runs"] = cfg.bounds->empirical_runs;
    }
    if (cfg.reduction) {
        auto& r = j["reduction"];
        r["enabled"] = cfg.reduction->enabled;
        r["order"] = cfg.reduction->order;
    }
    return j;
}

} // namespace tclagg
