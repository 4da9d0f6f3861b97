#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "tclagg/tclagg.hpp"

using namespace tclagg;
namespace fs = std::filesystem;

namespace {

const char* minimal_config = R"({
  "version": 1,
  "population": {"n_p": 40, "init": {"type": "point", "mode": 0, "theta": 20.0}},
  "params": {"theta_s": 20.0, "delta": 0.5, "theta_a": 32.0, "R": 2.0, "C": 10.0,
             "P_rate": 14.0, "eta": 2.5, "h_seconds": 10.0, "sigma": 0.032},
  "abstraction": {"method": "stochastic", "l": 2, "m": 6, "n_d": 4},
  "simulation": {"steps": 50, "mc_runs": 3, "seed": 9}
})";

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "tclagg_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("config parsing") {
    SUBCASE("minimal config parses") {
        const auto cfg = parse_config_text(minimal_config);
        CHECK(cfg.population.n_p == 40);
        CHECK(cfg.abstraction.l == 2);
        CHECK(cfg.simulation.mc_runs == 3);
        CHECK(!cfg.control);
        CHECK(!cfg.heterogeneity);
    }
    SUBCASE("missing required field names the path") {
        nlohmann::json j = nlohmann::json::parse(minimal_config);
        j["population"].erase("n_p");
        try {
            parse_config(j);
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("population") != std::string::npos);
            CHECK(std::string(e.what()).find("n_p") != std::string::npos);
        }
    }
    SUBCASE("unknown keys are rejected with their path") {
        nlohmann::json j = nlohmann::json::parse(minimal_config);
        j["params"]["sigmma"] = 0.01;
        try {
            parse_config(j);
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("sigmma") != std::string::npos);
        }
        nlohmann::json j2 = nlohmann::json::parse(minimal_config);
        j2["banana"] = 1;
        CHECK_THROWS_AS(parse_config(j2), ConfigError);
    }
    SUBCASE("cross-field constraints") {
        nlohmann::json j = nlohmann::json::parse(minimal_config);
        j["control"] = {{"mode", "onestep"}};
        CHECK_THROWS_AS(parse_config(j), ConfigError); // tracking needs a reference
        j["reference"] = {{"type", "constant"}, {"value_kw", 100.0}};
        CHECK_NOTHROW(parse_config(j));
        j["heterogeneity"] = {{"parameter", "C"},
                              {"distribution", {{"type", "uniform"}, {"lo", 8.0}, {"hi", 12.0}}},
                              {"mode", "clustering"},
                              {"n_clusters", 3}};
        CHECK_THROWS_AS(parse_config(j), ConfigError); // no clustered control
        j["heterogeneity"]["mode"] = "averaging";
        CHECK_NOTHROW(parse_config(j));
    }
    SUBCASE("invalid physical parameters are config errors") {
        nlohmann::json j = nlohmann::json::parse(minimal_config);
        j["params"]["delta"] = -1.0;
        CHECK_THROWS_AS(parse_config(j), ConfigError);
        nlohmann::json j2 = nlohmann::json::parse(minimal_config);
        j2["abstraction"]["l"] = 10; // l >= m
        CHECK_THROWS_AS(parse_config(j2), ConfigError);
    }
    SUBCASE("piecewise reference validation") {
        nlohmann::json j = nlohmann::json::parse(minimal_config);
        j["reference"] = {{"type", "piecewise"},
                          {"times", {0, 10, 5}},
                          {"values_kw", {1.0, 2.0, 3.0}}};
        CHECK_THROWS_AS(parse_config(j), ConfigError);
        j["reference"]["times"] = {0, 5, 10};
        CHECK_NOTHROW(parse_config(j));
    }
}

TEST_CASE("config echo round-trips to an identical parsed config") {
    for (const char* text : {minimal_config}) {
        const auto cfg = parse_config_text(text);
        const auto echo = config_echo(cfg);
        const auto cfg2 = parse_config(echo);
        CHECK(config_echo(cfg2).dump(2) == echo.dump(2));
    }
    // Every shipped sample config round-trips too.
    for (const auto& entry : fs::directory_iterator("configs")) {
        const auto cfg = parse_config_text(read_file(entry.path()));
        const auto echo = config_echo(cfg);
        CHECK(config_echo(parse_config(echo)).dump(2) == echo.dump(2));
    }
}

TEST_CASE("chain file round-trip is bit exact") {
    const auto cfg = parse_config_text(minimal_config);
    const auto part = build_partition(cfg.params, 2, 6);
    const auto chain = build_chain(part, cfg.params);
    std::stringstream ss;
    write_chain(ss, chain);
    const auto file = read_chain(ss);
    REQUIRE(file.P.rows() == chain.dim());
    CHECK((file.P - chain.P).cwiseAbs().maxCoeff() == 0.0);
    CHECK(file.header.at("n") == "14"); // bins per mode = 2m+2
    CHECK(file.header.at("l") == "2");
    CHECK(file.header.at("m") == "6");
    char hash[20];
    std::snprintf(hash, sizeof(hash), "%016llx",
                  static_cast<unsigned long long>(params_hash(cfg.params)));
    CHECK(file.header.at("params_hash") == hash);
}

TEST_CASE("commands are pure functions of config and seed") {
    const auto cfg = parse_config_text(minimal_config);

    SUBCASE("simulate twice gives identical bytes") {
        const auto d1 = fresh_dir("sim1");
        const auto d2 = fresh_dir("sim2");
        run_simulate(cfg, d1);
        run_simulate(cfg, d2, /*threads=*/3); // thread count must not matter
        CHECK(read_file(d1 / "simulate.csv") == read_file(d2 / "simulate.csv"));
        CHECK(read_file(d1 / "config_echo.json") == read_file(d2 / "config_echo.json"));
        CHECK(read_file(d1 / "MANIFEST.txt") == read_file(d2 / "MANIFEST.txt"));
        CHECK(!read_file(d1 / "simulate.csv").empty());
    }
    SUBCASE("a different seed changes the trajectory") {
        auto cfg2 = cfg;
        cfg2.simulation.seed = 10;
        const auto d1 = fresh_dir("sim3");
        const auto d2 = fresh_dir("sim4");
        run_simulate(cfg, d1);
        run_simulate(cfg2, d2);
        CHECK(read_file(d1 / "simulate.csv") != read_file(d2 / "simulate.csv"));
    }
    SUBCASE("compare emits every requested overlay column") {
        auto cfg2 = cfg;
        cfg2.reduction = ReductionConfig{true, 3};
        const auto dir = fresh_dir("cmp");
        run_compare(cfg2, dir);
        std::ifstream in(dir / "compare.csv");
        std::string header;
        std::getline(in, header);
        CHECK(header == "t,y_mc_kW,y_mc_stderr_kW,y_abs_kW,y_det_kW,y_red_kW");
        const auto again = fresh_dir("cmp2");
        run_compare(cfg2, again);
        CHECK(read_file(dir / "compare.csv") == read_file(again / "compare.csv"));
    }
    SUBCASE("abstract exports a readable chain and validation report") {
        const auto dir = fresh_dir("abs");
        run_abstract(cfg, dir);
        std::ifstream chain_in(dir / "chain.csv");
        const auto file = read_chain(chain_in);
        CHECK(file.P.rows() == 28); // 2 * (2*6 + 2)
        const std::string report = read_file(dir / "validation.txt");
        CHECK(report.find("chain.structure: ok") != std::string::npos);
        CHECK(report.find("baseline.structure: ok") != std::string::npos);
    }
    SUBCASE("bounds writes the report and sweep") {
        auto cfg2 = cfg;
        cfg2.bounds = BoundsConfig{{2, 4}, true, 5};
        const auto dir = fresh_dir("bnd");
        run_bounds(cfg2, dir);
        const std::string report = read_file(dir / "bounds.txt");
        CHECK(report.find("lambda: 32") != std::string::npos);
        CHECK(report.find("within_bound: true") != std::string::npos);
        std::ifstream csv(dir / "bounds.csv");
        std::string header;
        std::getline(csv, header);
        CHECK(header.rfind("N,gamma,lambda", 0) == 0);
    }
    SUBCASE("bounds for the averaging abstraction is a config error") {
        auto cfg2 = cfg;
        HeterogeneityConfig h;
        h.parameter = "C";
        h.uniform = true;
        h.lo = 8.0;
        h.hi = 12.0;
        h.mode = "averaging";
        cfg2.heterogeneity = h;
        cfg2.bounds = BoundsConfig{{2}, false, 1};
        CHECK_THROWS_AS(run_bounds(cfg2, fresh_dir("bnd_avg")), ConfigError);
    }
}

TEST_CASE("track command runs a short closed loop deterministically") {
    auto cfg = parse_config_text(minimal_config);
    cfg.population.n_p = 60;
    cfg.population.init = InitialUniformDeadband{0};
    cfg.population.burn_in_steps = 400;
    cfg.abstraction.l = 2;
    cfg.abstraction.m = 8;
    cfg.simulation.steps = 40;
    ControlConfig cc;
    cc.mode = "onestep";
    cfg.control = cc;
    ReferenceConfig rc;
    rc.type = "constant";
    rc.value_kw = 60 * 5.6 * 12.0 / 28.0;
    cfg.reference = rc;

    const auto d1 = fresh_dir("trk1");
    const auto d2 = fresh_dir("trk2");
    run_track(cfg, d1);
    run_track(cfg, d2);
    CHECK(read_file(d1 / "track.csv") == read_file(d2 / "track.csv"));
    std::ifstream in(d1 / "track.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "t,y_true_kW,y_meas_kW,y_est_kW,y_des_kW,theta_s_C");
    int rows = 0;
    std::string line;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 41);
}
