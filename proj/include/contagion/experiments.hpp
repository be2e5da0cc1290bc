#ifndef CONTAGION_EXPERIMENTS_HPP
#define CONTAGION_EXPERIMENTS_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "contagion/dynamics.hpp"
#include "contagion/logopt.hpp"
#include "contagion/model.hpp"
#include "contagion/parallel.hpp"
#include "contagion/powergrid.hpp"
#include "contagion/stats.hpp"

namespace contagion {

struct IntensitySpec {
    std::string family = "power_clamp";  // constant | power_clamp | reciprocal
    double rate = 0.1;                    // constant
    double h0 = 10.0, k_own = 0.7, k_cross = 0.3, alpha = 1.0, h_min = 0.05, h_max = 1.0;
    double c = 20.0;                      // reciprocal
    double cap = 1.0;                     // declared bound for constant and reciprocal

    IntensityModel build(std::size_t n) const;
};

enum class SweepMode { misspecified_investor, perturbed_world };

struct SweepEntry {
    std::string label;
    std::vector<std::pair<std::string, double>> changes;
    SweepMode mode = SweepMode::misspecified_investor;
};

struct ExperimentConfig {
    // Two-stock market, S first.
    double r = 0.05, mu_s = 0.10, mu_p = 0.15, sigma_s = 0.30, sigma_p = 0.40, rho = 0.0;
    double loss_s = 0.20, loss_p = 0.30;
    IntensitySpec intensity;
    std::string utility = "log";  // log | power
    double gamma = 0.5;
    AdmissibleBox box{{-1.0, -1.0}, {0.5, 0.5}, 0.01};
    PathConfig paths{1.0, 250, 10000, 20240101, {100.0, 100.0}};
    double x0 = 100.0;
    std::string kind = "compare";  // compare | sweep | crisis | power-compare
    double h_bar = 0.1;
    std::vector<SweepEntry> sweep;
    GridSpec grid{5.0, 0.1, 1.0, 400.0, 400.0, 41, true};
    std::string out_dir = "out";
    std::string prefix = "run";
    int dump_paths = 20;

    static ExperimentConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;

    MarketParams market() const;
    IntensityModel intensity_model() const;
    LogControlProblem log_problem() const;
    PowerProblem power_problem(const IntensityModel& intensity) const;
};

ExperimentConfig load_config(const std::filesystem::path& path);

// Sets a named model parameter (r, mu_S, mu_P, sigma_S, sigma_P, rho, L_S,
// L_P, h0, k_own/k1, k_cross/k2, alpha, h_min, h_max, c, h_bar). Throws
// std::invalid_argument for an unknown name.
void apply_parameter(ExperimentConfig& cfg, const std::string& name, double value);

struct SolverHealth {
    long kt_fallbacks = 0;
    long out_of_domain = 0;
    std::map<std::string, double> grid_dt;  // label -> CFL-stable dt actually used

    nlohmann::json to_json() const;
};

struct ComparisonResult {
    CohortReport active;   // state-dependent intensity
    CohortReport passive;  // constant intensity h_bar
    std::size_t n_paths = 0;
    std::size_t n_default = 0;
    std::uint64_t rng_digest = 0;
    std::array<double, 2> initial_active{};
    std::array<double, 2> initial_passive{};
    SolverHealth health;
};

ComparisonResult run_comparison(const ExperimentConfig& cfg, Backend backend = Backend::openmp);
// Comparison under a reciprocal intensity; rejects other families.
ComparisonResult run_crisis(const ExperimentConfig& cfg, Backend backend = Backend::openmp);
ComparisonResult run_power_comparison(const ExperimentConfig& cfg,
                                      Backend backend = Backend::openmp);

// Six rows: All/Default/No-default for each strategy.
std::string comparison_csv(const ComparisonResult& result);

struct SweepRow {
    std::string label;
    SweepMode mode = SweepMode::misspecified_investor;
    SampleStats stats;
    std::array<std::string, 4> deltas;  // mean, std, q023, q977 against the benchmark
};

struct SweepResult {
    SampleStats benchmark;
    std::vector<SweepRow> rows;
    SolverHealth health;
};

SweepResult run_sweep(const ExperimentConfig& cfg, Backend backend = Backend::openmp);
std::string sweep_csv(const SweepResult& result);

// Log-utility controls over a price lattice plus the single-survivor controls.
std::string log_control_table_csv(const ExperimentConfig& cfg, const std::vector<double>& s_values,
                                  const std::vector<double>& p_values);

struct PowerSolveResult {
    std::shared_ptr<const ValueGrid> grid;
    double dt_used = 0.0;
};
PowerSolveResult solve_power_from_config(const ExperimentConfig& cfg, const IntensityModel& intensity,
                                         Backend backend = Backend::openmp);

// Git blob hash ("blob <size>\0" + content), lowercase hex SHA-1.
std::string git_blob_sha1(const std::string& content);

std::string_view to_string(SweepMode mode);

struct OutputFile {
    std::string name;
    std::string content;
};

// Writes every file under `dir` plus <prefix>_manifest.json holding the
// config echo, seed, worker count, per-file content hashes, wall time and
// solver health. Returns the manifest.
nlohmann::json write_run(const std::filesystem::path& dir, const std::string& command,
                         const ExperimentConfig& cfg, const std::vector<OutputFile>& files,
                         double wall_seconds, const SolverHealth& health);

}  // namespace contagion

#endif  // CONTAGION_EXPERIMENTS_HPP
