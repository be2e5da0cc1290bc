#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "contagion/experiments.hpp"

using namespace contagion;

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> paths;
    std::optional<std::string> out;
    int threads = 0;
};

std::shared_ptr<const Strategy> active_strategy(const ExperimentConfig& cfg, SolverHealth& health) {
    if (cfg.utility == "log") return make_log_strategy(cfg.log_problem(), LogMode::state_dependent());
    const IntensityModel model = cfg.intensity_model();
    const PowerSolveResult solved = solve_power_from_config(cfg, model);
    health.grid_dt["h(S,P)"] = solved.dt_used;
    return make_power_strategy(solved.grid, cfg.power_problem(model));
}

std::vector<OutputFile> simulate(const ExperimentConfig& cfg, SolverHealth& health) {
    const MarketParams market = cfg.market();
    const IntensityModel model = cfg.intensity_model();
    const std::vector<MarketPath> paths = simulate_paths(market, model, cfg.paths);
    long any = 0, s_defaults = 0, p_defaults = 0;
    for (const MarketPath& p : paths) {
        any += p.default_count() > 0;
        s_defaults += p.default_step[0] >= 0;
        p_defaults += p.default_step[1] >= 0;
    }
    const auto strategy = active_strategy(cfg, health);
    const std::size_t dumped = std::min<std::size_t>(paths.size(), std::max(cfg.dump_paths, 0));
    std::vector<WealthPath> wealth;
    for (std::size_t i = 0; i < dumped; ++i) wealth.push_back(evolve_wealth(paths[i], market, *strategy, cfg.x0));
    std::ostringstream dump;
    write_path_dump(dump, std::span(paths.data(), dumped), wealth);

    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "n_paths,paths_with_default,default_fraction,defaults_S,defaults_P\n%zu,%ld,%.6g,%ld,%ld\n",
                  paths.size(), any, static_cast<double>(any) / paths.size(), s_defaults, p_defaults);
    return {{cfg.prefix + "_paths.csv", dump.str()}, {cfg.prefix + "_summary.csv", buf}};
}

std::vector<OutputFile> solve_log(const ExperimentConfig& cfg) {
    std::vector<double> s_values, p_values;
    const double s0 = cfg.paths.initial_prices[0];
    const double p0 = cfg.paths.initial_prices[1];
    for (int k = 1; k <= 20; ++k) {
        s_values.push_back(s0 * k / 10.0);
        p_values.push_back(p0 * k / 10.0);
    }
    return {{cfg.prefix + "_log_controls.csv", log_control_table_csv(cfg, s_values, p_values)}};
}

std::vector<OutputFile> solve_power(const ExperimentConfig& cfg, SolverHealth& health) {
    const IntensityModel model = cfg.intensity_model();
    const PowerSolveResult solved = solve_power_from_config(cfg, model);
    health.grid_dt["h(S,P)"] = solved.dt_used;
    const ValueGrid& g = *solved.grid;
    // Export only the nominal time slices; CFL substeps stay internal.
    const int stride = static_cast<int>(std::lround(cfg.grid.dt / solved.dt_used));
    std::ostringstream grid_csv;
    write_value_grid_csv(grid_csv, g, stride);

    const int i = static_cast<int>(std::lround(cfg.paths.initial_prices[0] / g.spec.delta));
    const int j = static_cast<int>(std::lround(cfg.paths.initial_prices[1] / g.spec.delta));
    char buf[240];
    std::snprintf(buf, sizeof buf, "s,p,f0,pi_S,pi_P,dt_used,n_steps\n%.6g,%.6g,%.10g,%.10g,%.10g,%.10g,%d\n",
                  i * g.spec.delta, j * g.spec.delta, g.value(0, i, j), g.control(0, i, j)[0],
                  g.control(0, i, j)[1], solved.dt_used, g.n_slices - 1);
    return {{cfg.prefix + "_value_grid.csv", grid_csv.str()}, {cfg.prefix + "_power_summary.csv", buf}};
}

std::vector<OutputFile> comparison_files(const ExperimentConfig& cfg, const ComparisonResult& r,
                                         SolverHealth& health) {
    health = r.health;
    char buf[200];
    std::snprintf(buf, sizeof buf, "n_paths,paths_with_default,default_fraction\n%zu,%zu,%.6g\n", r.n_paths,
                  r.n_default, static_cast<double>(r.n_default) / r.n_paths);
    return {{cfg.prefix + "_table.csv", comparison_csv(r)}, {cfg.prefix + "_defaults.csv", buf}};
}

int run(const std::string& command, const Options& opt) {
    ExperimentConfig cfg = load_config(opt.config);
    if (opt.seed) cfg.paths.master_seed = *opt.seed;
    if (opt.paths) cfg.paths.n_paths = *opt.paths;
    if (opt.out) cfg.out_dir = *opt.out;
    cfg.paths.validate(2);
    set_worker_count(opt.threads);

    const auto start = std::chrono::steady_clock::now();
    SolverHealth health;
    std::vector<OutputFile> files;
    if (command == "simulate") files = simulate(cfg, health);
    else if (command == "solve-log") files = solve_log(cfg);
    else if (command == "solve-power") files = solve_power(cfg, health);
    else if (command == "compare") files = comparison_files(cfg, run_comparison(cfg), health);
    else if (command == "crisis") files = comparison_files(cfg, run_crisis(cfg), health);
    else if (command == "power-compare") files = comparison_files(cfg, run_power_comparison(cfg), health);
    else if (command == "sweep") {
        SweepResult r = run_sweep(cfg);
        health = r.health;
        files = {{cfg.prefix + "_sweep.csv", sweep_csv(r)}};
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_run(cfg.out_dir, command, cfg, files, wall, health);
    for (const OutputFile& f : files) std::cout << (std::filesystem::path(cfg.out_dir) / f.name).string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Portfolio control under looping default contagion"};
    app.require_subcommand(1);
    Options opt;
    const std::vector<std::pair<std::string, std::string>> commands{
        {"simulate", "Simulate market paths and dump a sample with wealth"},
        {"solve-log", "Tabulate log-utility controls over a price lattice"},
        {"solve-power", "Solve the power-utility value grid"},
        {"compare", "State-dependent vs constant-intensity log strategies"},
        {"sweep", "Parameter robustness sweep"},
        {"crisis", "Comparison under the reciprocal crisis intensity"},
        {"power-compare", "State-dependent vs constant-intensity power strategies"},
    };
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", opt.config, "JSON experiment config")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", opt.seed, "Master seed override");
        sub->add_option("--paths", opt.paths, "Path count override")->check(CLI::PositiveNumber);
        sub->add_option("--out", opt.out, "Output directory override");
        sub->add_option("--threads", opt.threads, "Worker threads (results do not depend on it)")
            ->check(CLI::NonNegativeNumber);
    }
    CLI11_PARSE(app, argc, argv);
    try {
        return run(app.get_subcommands().front()->get_name(), opt);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
