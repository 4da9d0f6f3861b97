// tclagg: TCL population aggregation, abstraction-error certificates, and
// set-point tracking experiments driven by JSON configs.

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "tclagg/tclagg.hpp"

namespace {

tclagg::ScenarioConfig load_config(const std::string& path,
                                   std::optional<std::uint64_t> seed_override) {
    std::ifstream in(path);
    if (!in) throw tclagg::ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    auto cfg = tclagg::parse_config_text(ss.str());
    if (seed_override) cfg.simulation.seed = *seed_override;
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"TCL population abstraction and control experiments"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed_override;
    int threads = 1;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "scenario config (JSON)")->required();
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--seed", seed_override, "override the config seed");
        cmd->add_option("--threads", threads, "worker threads for Monte Carlo runs")
            ->check(CLI::PositiveNumber);
    };

    auto* simulate = app.add_subcommand("simulate", "Monte Carlo population ground truth");
    auto* abstract_cmd = app.add_subcommand("abstract", "build and export the chain models");
    auto* compare = app.add_subcommand("compare", "overlay truth, abstractions, reduced model");
    auto* bounds = app.add_subcommand("bounds", "abstraction-error certificates");
    auto* track = app.add_subcommand("track", "closed-loop set-point tracking");
    for (auto* cmd : {simulate, abstract_cmd, compare, bounds, track}) add_common(cmd);

    CLI11_PARSE(app, argc, argv);

    try {
        const auto cfg = load_config(config_path, seed_override);
        if (simulate->parsed()) tclagg::run_simulate(cfg, out_dir, threads);
        if (abstract_cmd->parsed()) tclagg::run_abstract(cfg, out_dir);
        if (compare->parsed()) tclagg::run_compare(cfg, out_dir, threads);
        if (bounds->parsed()) tclagg::run_bounds(cfg, out_dir);
        if (track->parsed()) tclagg::run_track(cfg, out_dir);
    } catch (const tclagg::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const tclagg::NumericalGuardError& e) {
        std::cerr << "numerical guard: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
