// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on failure.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "contagion/experiments.hpp"
#include "kt_oracle.hpp"

using namespace contagion;

namespace {

const std::filesystem::path kSource(CONTAGION_SOURCE_DIR);

struct Outcome {
    bool pass = false;
    std::string detail;
};

MarketParams benchmark_market() { return MarketParams::two_stock(0.05, 0.10, 0.15, 0.30, 0.40, 0.0, 0.20, 0.30); }

std::string fmt(const char* format, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, format, args...);
    return buf;
}

Outcome transition_normalization() {
    const ExperimentConfig cfg = load_config(kSource / "configs" / "power.json");
    const PowerProblem prob = cfg.power_problem(cfg.intensity_model());
    GridSpec spec = cfg.grid;
    spec.horizon = cfg.paths.horizon;
    spec = with_stable_dt(prob, spec);
    if (!check_cfl(prob, spec).ok) return {false, "grid is not CFL-valid"};
    const auto lattice = control_lattice(prob, spec.control_points);
    const TwoStockView& v = prob.view();
    const AdmissibleBox& box = prob.box();
    std::mt19937_64 rng(2718);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst_sum = 0.0, min_prob = 1.0, max_prob = 0.0;
    int checked = 0;
    while (checked < 100000) {
        const double s = spec.delta * static_cast<int>(u(rng) * spec.n_s());
        const double p = spec.delta * static_cast<int>(u(rng) * spec.n_p());
        std::array<double, 2> pi;
        if (checked % 2 == 0) {
            pi = lattice[static_cast<std::size_t>(u(rng) * lattice.size())];
        } else {
            pi = {box.lower[0] + (box.upper[0] - box.lower[0]) * u(rng),
                  box.lower[1] + (box.upper[1] - box.lower[1]) * u(rng)};
            if (1.0 - pi[0] - v.loss_p * pi[1] < box.eps_a || 1.0 - v.loss_s * pi[0] - pi[1] < box.eps_a) continue;
        }
        const Transition tr = transition_probs(s, p, pi, spec.delta, spec.dt, v, prob.gamma());
        double sum = 0.0;
        for (double q : tr.prob) {
            min_prob = std::min(min_prob, q);
            max_prob = std::max(max_prob, q);
            sum += q;
        }
        worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
        ++checked;
    }
    const bool ok = min_prob >= 0.0 && max_prob <= 1.0 && worst_sum <= 1e-12;
    return {ok, fmt("%d pairs, dt %.5g, min prob %.3g, max |sum-1| %.3g", checked, spec.dt, min_prob, worst_sum)};
}

Outcome dp_closed_form() {
    const ExperimentConfig cfg = load_config(kSource / "configs" / "power.json");
    const PowerProblem prob = cfg.power_problem(IntensityModel::constant(2, 0.0));
    GridSpec spec = cfg.grid;
    spec.delta = 1.0;
    spec.dt = 0.01;
    spec.s_max = spec.p_max = 10.0;
    spec.horizon = cfg.paths.horizon;
    const ValueGrid g = solve_power_value(prob, spec);
    const TwoStockView& v = prob.view();
    const double gamma = prob.gamma();
    double best = -INFINITY;
    for (const auto& pi : control_lattice(prob, spec.control_points)) {
        const double quad = v.sigma_s * v.sigma_s * pi[0] * pi[0] + 2 * v.rho * v.sigma_s * v.sigma_p * pi[0] * pi[1] +
                            v.sigma_p * v.sigma_p * pi[1] * pi[1];
        best = std::max(best, v.r * gamma + gamma * (v.theta_s() * pi[0] + v.theta_p() * pi[1]) -
                                  0.5 * gamma * (1 - gamma) * quad);
    }
    double worst = 0.0;
    int probes = 0;
    for (int k = 0; k < g.n_slices; ++k)
        for (int i = 1; i + 1 < g.n_s; ++i)
            for (int j = 1; j + 1 < g.n_p; ++j) {
                worst = std::max(worst, std::abs(g.value(k, i, j) / std::exp((1.0 - g.time(k)) * best) - 1.0));
                ++probes;
            }
    return {worst <= 0.01, fmt("%d interior probes, max relative error %.3g", probes, worst)};
}

Outcome kt_oracle() {
    std::mt19937_64 rng(4049);
    int tested = 0, cell_misses = 0;
    double worst_residual = 0.0;
    while (tested < 100) {
        const auto draw = testing::random_problem(rng);
        if (!draw || draw->h_s < 1e-6 || draw->h_p < 1e-6) continue;
        // h_S = 1/s and h_P = 1/p at the query prices.
        const IntensityModel h = IntensityModel::power_clamp(2, 1.0, 1.0, 0.0, 1.0, 1e-9, 10.0);
        const LogControlProblem prob(draw->params, h, draw->box);
        const double s = 1.0 / draw->h_s, p = 1.0 / draw->h_p;
        const auto rates = prob.pre_default_intensities(s, p);
        const KTSolution sol = solve_pre_default_control(prob, s, p);
        const auto grid = testing::grid_argmax(draw->view, draw->box, rates[0], rates[1], 401);
        const double cell_s = (draw->box.upper[0] - draw->box.lower[0]) / 400.0;
        const double cell_p = (draw->box.upper[1] - draw->box.lower[1]) / 400.0;
        if (std::abs(sol.pi[0] - grid[0]) > cell_s * (1 + 1e-9) || std::abs(sol.pi[1] - grid[1]) > cell_p * (1 + 1e-9))
            ++cell_misses;
        worst_residual = std::max(worst_residual, sol.fallback() ? INFINITY : sol.residual);
        ++tested;
    }
    return {cell_misses == 0 && worst_residual <= 1e-8,
            fmt("%d problems, %d outside one cell, max residual %.3g", tested, cell_misses, worst_residual)};
}

Outcome single_survivor_reductions() {
    const MarketParams mp = benchmark_market();
    const double theta = mp.theta(1), sigma = mp.sigma[1];
    const double merton = single_survivor_control(theta, sigma, 0.0, -10.0, 10.0);
    const double zero = single_survivor_control(theta, sigma, theta, -10.0, 10.0);
    // Same reductions through a problem whose post-default intensity is h.
    const AdmissibleBox box{{-1.0, -1.0}, {0.3, 0.7}, 0.01};
    const LogControlProblem none(mp, IntensityModel::constant(2, 0.0), box);
    const LogControlProblem flat(mp, IntensityModel::constant(2, theta), box);
    const double via_none = solve_single_survivor_control(none, 80.0, DefaultState(2, 1u));
    const double via_flat = solve_single_survivor_control(flat, 80.0, DefaultState(2, 1u));
    const double target = theta / (sigma * sigma);
    const bool ok = std::abs(merton - target) <= 1e-12 && std::abs(zero) <= 1e-12 &&
                    std::abs(via_none - target) <= 1e-12 && std::abs(via_flat) <= 1e-12;
    return {ok, fmt("h=0: %.15g (target %.15g), h=theta: %.3g; via problem %.15g, %.3g", merton, target, zero,
                    via_none, via_flat)};
}

Outcome default_frequency() {
    PathConfig cfg{1.0, 250, 10000, 20240101, {100.0, 100.0}};
    const auto paths = simulate_paths(benchmark_market(), IntensityModel::constant(2, 0.1), cfg);
    long hit = 0;
    for (const MarketPath& p : paths) hit += p.default_count() > 0;
    const double expected = 1.0 - std::exp(-0.2);
    const double se = std::sqrt(expected * (1 - expected) / paths.size());
    const double frac = static_cast<double>(hit) / paths.size();
    return {std::abs(frac - expected) <= 3 * se,
            fmt("%ld of %zu paths default, fraction %.4f vs %.4f +/- %.4f", hit, paths.size(), frac, expected, 3 * se)};
}

Outcome bank_account() {
    const ExperimentConfig cfg = load_config(kSource / "configs" / "benchmark-inferred.json");
    const MarketParams mp = cfg.market();
    const ConstantStrategy cash({0.0, 0.0}, zero_box(2));
    const PathSimulator sim(mp, cfg.intensity_model(), cfg.paths);
    const Strategy* strategies[] = {&cash};
    const BundleOutcome out = evaluate_on_bundle(sim, strategies, cfg.x0);
    const double bank = cfg.x0 * std::exp(mp.r * cfg.paths.horizon);
    double worst = 0.0;
    for (double x : out.terminal_wealth[0]) worst = std::max(worst, std::abs(x / bank - 1.0));
    return {worst <= 1e-12, fmt("%zu paths, max relative deviation %.3g", out.terminal_wealth[0].size(), worst)};
}

std::string table1_csv;

Outcome table1_pattern() {
    const ExperimentConfig cfg = load_config(kSource / "configs" / "benchmark-inferred.json");
    set_worker_count(1);
    const ComparisonResult r = run_comparison(cfg);
    set_worker_count(0);
    table1_csv = comparison_csv(r);
    const bool ok = r.active.all.mean >= r.passive.all.mean && r.active.all.std >= r.passive.all.std &&
                    r.initial_active == r.initial_passive && r.n_paths == 10000;
    return {ok, fmt("mean %.3f vs %.3f, std %.3f vs %.3f, initial (%.6f, %.6f) vs (%.6f, %.6f), %zu default paths",
                    r.active.all.mean, r.passive.all.mean, r.active.all.std, r.passive.all.std, r.initial_active[0],
                    r.initial_active[1], r.initial_passive[0], r.initial_passive[1], r.n_default)};
}

Outcome crisis_band() {
    const ExperimentConfig cfg = load_config(kSource / "configs" / "crisis.json");
    const ComparisonResult r = run_crisis(cfg);
    const double frac = static_cast<double>(r.n_default) / r.n_paths;
    const bool cohorts = r.active.with_default && r.passive.with_default && r.active.without_default &&
                         r.passive.without_default;
    if (!cohorts) return {false, "empty cohort"};
    const bool ok = std::abs(frac - 0.8542) <= 0.05 && r.active.with_default->mean > r.passive.with_default->mean &&
                    r.active.without_default->mean < r.passive.without_default->mean;
    return {ok, fmt("default fraction %.4f, Default mean %.3f vs %.3f, No-default mean %.3f vs %.3f", frac,
                    r.active.with_default->mean, r.passive.with_default->mean, r.active.without_default->mean,
                    r.passive.without_default->mean)};
}

Outcome sweep_sanity() {
    ExperimentConfig cfg = load_config(kSource / "configs" / "benchmark-inferred.json");
    cfg.sweep = {{"h0=10", {{"h0", 10.0}}, SweepMode::misspecified_investor},
                 {"mu_S=0.10", {{"mu_S", 0.10}}, SweepMode::perturbed_world}};
    const SweepResult r = run_sweep(cfg);
    int zero = 0, total = 0;
    for (const SweepRow& row : r.rows)
        for (const std::string& d : row.deltas) {
            zero += d == "(0.00%)";
            ++total;
        }
    return {zero == total, fmt("%d of %d deltas print (0.00%%)", zero, total)};
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

Outcome determinism(const std::string& cli) {
    // Full-size benchmark comparison at four threads against the one-thread run above.
    const ExperimentConfig cfg = load_config(kSource / "configs" / "benchmark-inferred.json");
    set_worker_count(4);
    const std::string four = comparison_csv(run_comparison(cfg));
    set_worker_count(0);
    if (four != table1_csv) return {false, "benchmark comparison CSV differs between 1 and 4 threads"};
    if (cli.empty()) return {false, "no CLI path given"};

    const auto work = std::filesystem::temp_directory_path() / "contagion_acceptance";
    std::filesystem::remove_all(work);
    const std::pair<const char*, const char*> runs[] = {
        {"simulate", "small-log"},  {"solve-log", "small-log"},     {"compare", "small-log"},
        {"sweep", "small-log"},     {"crisis", "small-crisis"},     {"solve-power", "small-power"},
        {"power-compare", "small-power"}};
    int files = 0;
    for (const auto& [command, config] : runs) {
        for (int threads : {1, 4}) {
            const std::string line = cli + " " + command + " --config " +
                                     (kSource / "tests" / "data" / (std::string(config) + ".json")).string() +
                                     " --threads " + std::to_string(threads) + " --out " +
                                     (work / (std::string(command) + std::to_string(threads))).string() + " > /dev/null";
            if (std::system(line.c_str()) != 0) return {false, std::string(command) + " failed"};
        }
        for (const auto& entry : std::filesystem::directory_iterator(work / (std::string(command) + "1"))) {
            if (entry.path().extension() != ".csv") continue;
            const auto other = work / (std::string(command) + "4") / entry.path().filename();
            if (slurp(entry.path()) != slurp(other))
                return {false, std::string(command) + ": " + entry.path().filename().string() + " differs"};
            ++files;
        }
    }
    std::filesystem::remove_all(work);
    return {true, fmt("benchmark table and %d CLI CSV files identical at 1 and 4 threads", files)};
}

}  // namespace

int main(int argc, char** argv) {
    const std::string cli = argc > 1 ? argv[1] : "";
    struct Criterion {
        const char* name;
        double limit_s;
        std::function<Outcome()> run;
    };
    const Criterion criteria[] = {
        {"transition-probability normalization", 5.0, transition_normalization},
        {"DP closed-form oracle", 120.0, dp_closed_form},
        {"KT brute-force oracle", 60.0, kt_oracle},
        {"single-survivor reductions", 1.0, single_survivor_reductions},
        {"default-frequency oracle", 30.0, default_frequency},
        {"bank-account exactness", 30.0, bank_account},
        {"directional benchmark pattern", 300.0, table1_pattern},
        {"crisis band", 300.0, crisis_band},
        {"sweep sanity", 300.0, sweep_sanity},
        {"determinism", 600.0, [&] { return determinism(cli); }},
    };
    int failures = 0, index = 0;
    for (const Criterion& c : criteria) {
        ++index;
        const auto start = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = c.run();
        } catch (const std::exception& e) {
            out = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool pass = out.pass && secs < c.limit_s;
        failures += !pass;
        std::printf("%s criterion %d %s: %s [%.1fs, limit %.0fs]\n", pass ? "PASS" : "FAIL", index, c.name,
                    out.detail.c_str(), secs, c.limit_s);
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
