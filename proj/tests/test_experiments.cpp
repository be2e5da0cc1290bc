#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>
#include <sstream>

#include "contagion/experiments.hpp"

using namespace contagion;
using nlohmann::json;

namespace {

const std::filesystem::path kConfigs = std::filesystem::path(CONTAGION_SOURCE_DIR) / "configs";

ExperimentConfig small(int paths = 400) {
    ExperimentConfig cfg = load_config(kConfigs / "benchmark-inferred.json");
    cfg.paths.n_paths = paths;
    cfg.paths.n_steps = 50;
    return cfg;
}

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

// Drops the leading `fields` columns; the label may be a quoted field.
std::string drop_fields(const std::string& row, int fields = 1) {
    std::size_t pos = 0;
    for (int f = 0; f < fields; ++f) {
        if (row[pos] == '"') pos = row.find('"', pos + 1) + 1;
        pos = row.find(',', pos) + 1;
    }
    return row.substr(pos);
}

}  // namespace

TEST_CASE("shipped configs load and round trip") {
    for (const char* name : {"benchmark-inferred.json", "crisis.json", "power.json", "sweep-table2.json",
                             "sweep-table3.json", "param-set-1.json", "param-set-2.json"}) {
        CAPTURE(name);
        const ExperimentConfig cfg = load_config(kConfigs / name);
        const ExperimentConfig again = ExperimentConfig::from_json(cfg.to_json());
        CHECK(again.to_json() == cfg.to_json());
        CHECK_NOTHROW(cfg.market().validate());
    }
    const ExperimentConfig bench = load_config(kConfigs / "benchmark-inferred.json");
    CHECK(bench.r == 0.05);
    CHECK(bench.loss_p == 0.30);
    CHECK(bench.paths.initial_prices == std::vector<double>{100.0, 100.0});
    CHECK(bench.h_bar == 0.1);
    const ExperimentConfig sweep = load_config(kConfigs / "sweep-table2.json");
    CHECK(sweep.sweep.size() == 8);
    CHECK(sweep.sweep[0].changes.size() == 2);
    CHECK(load_config(kConfigs / "sweep-table3.json").sweep[0].mode == SweepMode::perturbed_world);
}

TEST_CASE("config errors") {
    json j = small().to_json();
    j["market"]["mu_Q"] = 0.1;
    CHECK_THROWS(ExperimentConfig::from_json(j));
    json top = small().to_json();
    top["extra"] = 1;
    CHECK_THROWS(ExperimentConfig::from_json(top));
    json util = small().to_json();
    util["utility"]["kind"] = "exponential";
    CHECK_THROWS(ExperimentConfig::from_json(util));

    ExperimentConfig cfg = small();
    CHECK_THROWS_AS(apply_parameter(cfg, "beta", 1.0), std::invalid_argument);
    apply_parameter(cfg, "k1", 0.4);
    apply_parameter(cfg, "sigma_P", 0.5);
    apply_parameter(cfg, "L_S", 0.25);
    CHECK(cfg.intensity.k_own == 0.4);
    CHECK(cfg.sigma_p == 0.5);
    CHECK(cfg.loss_s == 0.25);
    CHECK_THROWS(load_config(kConfigs / "missing.json"));
}

TEST_CASE("constant intensity equal to h_bar makes the strategies coincide") {
    ExperimentConfig cfg = small();
    cfg.intensity.family = "constant";
    cfg.intensity.rate = 0.1;
    const ComparisonResult r = run_comparison(cfg);
    const auto rows = lines(comparison_csv(r));
    REQUIRE(rows.size() == 7);
    for (int k = 1; k < 7; k += 2) CHECK(drop_fields(rows[k]) == drop_fields(rows[k + 1]));
    CHECK(r.initial_active == r.initial_passive);
    CHECK(r.active.with_default->n + r.active.without_default->n == r.n_paths);
}

TEST_CASE("zero premium and zero intensity keep wealth in the bank account") {
    ExperimentConfig cfg = small(200);
    cfg.mu_s = cfg.mu_p = cfg.r;
    cfg.intensity.family = "constant";
    cfg.intensity.rate = 0.0;
    cfg.h_bar = 0.0;
    const ComparisonResult r = run_comparison(cfg);
    const double bank = cfg.x0 * std::exp(cfg.r * cfg.paths.horizon);
    for (const CohortReport* rep : {&r.active, &r.passive}) {
        CHECK(rep->all.mean == doctest::Approx(bank).epsilon(1e-12));
        CHECK(rep->all.std <= 1e-10 * bank);
        CHECK(rep->all.q_low == doctest::Approx(bank).epsilon(1e-12));
        CHECK_FALSE(rep->with_default);
    }
    CHECK(r.n_default == 0);
}

TEST_CASE("benchmark comparison starts from identical controls") {
    const ComparisonResult r = run_comparison(small(200));
    CHECK(r.initial_active == r.initial_passive);
    CHECK(r.health.kt_fallbacks == 0);
}

TEST_CASE("a sweep entry equal to the benchmark gives zero deltas") {
    ExperimentConfig cfg = small(300);
    cfg.kind = "sweep";
    cfg.sweep = {{"same h0", {{"h0", 10.0}}, SweepMode::misspecified_investor},
                 {"same mu", {{"mu_S", 0.10}}, SweepMode::perturbed_world}};
    const SweepResult r = run_sweep(cfg);
    for (const SweepRow& row : r.rows)
        for (const std::string& d : row.deltas) CHECK(d == "(0.00%)");
    const auto rows = lines(sweep_csv(r));
    REQUIRE(rows.size() == 4);
    CHECK(rows[0] == "label,mode,n,mean,std,q023,q977,d_mean,d_std,d_q023,d_q977");
    CHECK(rows[1].find("benchmark,benchmark,300,") == 0);
    CHECK(rows[2].find(",misspecified-investor,") != std::string::npos);
    CHECK(rows[3].find(",perturbed-world,") != std::string::npos);
    CHECK(drop_fields(rows[2], 2) == drop_fields(rows[1], 2));
}

TEST_CASE("misestimated intensity level and weights") {
    ExperimentConfig cfg = small(2000);
    cfg.sweep = {{"h0=5", {{"h0", 5.0}}, SweepMode::misspecified_investor},
                 {"h0=15", {{"h0", 15.0}}, SweepMode::misspecified_investor},
                 {"k1=0.5 k2=0.5", {{"k_own", 0.5}, {"k_cross", 0.5}}, SweepMode::misspecified_investor}};
    const SweepResult r = run_sweep(cfg);
    const double b = r.benchmark.std;
    const double low = r.rows[0].stats.std - b, high = r.rows[1].stats.std - b;
    MESSAGE("std deltas " << r.rows[0].deltas[1] << " " << r.rows[1].deltas[1] << ", k mean delta "
                          << r.rows[2].deltas[0]);
    CHECK(low * high < 0.0);
    CHECK(std::abs(r.rows[2].stats.mean / r.benchmark.mean - 1.0) < 0.01);
    CHECK_THROWS_AS(run_sweep([&] {
                        ExperimentConfig bad = cfg;
                        bad.sweep = {{"bad", {{"nope", 1.0}}, SweepMode::perturbed_world}};
                        return bad;
                    }()),
                    std::invalid_argument);
}

TEST_CASE("crisis setup") {
    const ExperimentConfig cfg = load_config(kConfigs / "crisis.json");
    const IntensityModel h = cfg.intensity_model();
    const std::vector<double> start = cfg.paths.initial_prices;
    const double total = h.rate(0, DefaultState::none(2), start) + h.rate(1, DefaultState::none(2), start);
    CHECK(total == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(cfg.h_bar == 0.1);
    CHECK_THROWS_AS(run_crisis(small()), std::invalid_argument);
}

TEST_CASE("power comparison with h equal to h_bar makes the strategies coincide") {
    ExperimentConfig cfg = load_config(kConfigs / "power.json");
    cfg.paths.n_paths = 200;
    cfg.paths.n_steps = 50;
    cfg.grid.delta = 25.0;
    cfg.grid.s_max = cfg.grid.p_max = 200.0;
    cfg.grid.control_points = 11;
    cfg.intensity.family = "constant";
    cfg.intensity.rate = cfg.h_bar;
    const ComparisonResult r = run_power_comparison(cfg);
    const auto rows = lines(comparison_csv(r));
    for (int k = 1; k < 7; k += 2) CHECK(drop_fields(rows[k]) == drop_fields(rows[k + 1]));
    CHECK(r.health.grid_dt.at("h(S,P)") == r.health.grid_dt.at("constant h"));

    // Matching seeds give the log comparison the same market paths.
    ExperimentConfig log_cfg = small(200);
    log_cfg.paths = cfg.paths;
    CHECK(run_comparison(log_cfg).rng_digest == r.rng_digest);
    CHECK_THROWS_AS(run_power_comparison(small()), std::invalid_argument);
}

TEST_CASE("results do not depend on the worker count or backend") {
    const ExperimentConfig cfg = small(300);
    set_worker_count(1);
    const std::string one = comparison_csv(run_comparison(cfg));
    set_worker_count(3);
    const ComparisonResult three = run_comparison(cfg);
    set_worker_count(0);
    const ComparisonResult serial = run_comparison(cfg, Backend::serial);
    CHECK(comparison_csv(three) == one);
    CHECK(comparison_csv(serial) == one);
    CHECK(three.rng_digest == serial.rng_digest);
    ExperimentConfig other = cfg;
    other.paths.master_seed += 1;
    CHECK(run_comparison(other).rng_digest != serial.rng_digest);
}

TEST_CASE("log control table") {
    const std::string csv = log_control_table_csv(small(), {50.0, 100.0}, {80.0, 100.0, 120.0});
    const auto rows = lines(csv);
    CHECK(rows[0] == "z_bits,s,p,h_S,h_P,pi_S,pi_P,case");
    CHECK(rows.size() == 1 + 6 + 3 + 2);
    CHECK(rows[1].find("00,50,80,") == 0);
    CHECK(rows[7].find("10,") == 0);
    CHECK(rows[10].find("01,") == 0);
}

TEST_CASE("content hashes and run manifests") {
    CHECK(git_blob_sha1("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
    CHECK(git_blob_sha1("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");

    const auto dir = std::filesystem::temp_directory_path() / "contagion_manifest_test";
    std::filesystem::remove_all(dir);
    ExperimentConfig cfg = small();
    cfg.prefix = "unit";
    SolverHealth health;
    health.grid_dt["h(S,P)"] = 0.01;
    const json m = write_run(dir, "compare", cfg, {{"unit_table.csv", "a,b\n1,2\n"}}, 1.5, health);
    std::ifstream table(dir / "unit_table.csv");
    std::stringstream content;
    content << table.rdbuf();
    CHECK(content.str() == "a,b\n1,2\n");
    std::ifstream manifest_file(dir / "unit_manifest.json");
    const json on_disk = json::parse(manifest_file);
    CHECK(on_disk == m);
    CHECK(m["command"] == "compare");
    CHECK(m["seed"] == cfg.paths.master_seed);
    CHECK(m["content_hash"]["unit_table.csv"] == git_blob_sha1("a,b\n1,2\n"));
    CHECK(m["solver_health"]["grid_dt"]["h(S,P)"] == 0.01);
    CHECK(ExperimentConfig::from_json(m["config"]).to_json() == cfg.to_json());
    std::filesystem::remove_all(dir);
}
