#include "contagion/experiments.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace contagion {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw std::invalid_argument("config: '" + where + "' must be an object");
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key)) throw std::invalid_argument("config: unknown key '" + key + "' in " + where);
}

template <class T>
void read(const json& j, const char* key, T& into) {
    if (j.contains(key)) into = j.at(key).get<T>();
}

SweepMode parse_mode(const std::string& s) {
    if (s == "misspecified-investor") return SweepMode::misspecified_investor;
    if (s == "perturbed-world") return SweepMode::perturbed_world;
    throw std::invalid_argument("config: unknown sweep mode '" + s + "'");
}

}  // namespace

std::string_view to_string(SweepMode mode) {
    return mode == SweepMode::misspecified_investor ? "misspecified-investor" : "perturbed-world";
}

IntensityModel IntensitySpec::build(std::size_t n) const {
    if (family == "constant") return IntensityModel::constant(n, rate, cap);
    if (family == "power_clamp") return IntensityModel::power_clamp(n, h0, k_own, k_cross, alpha, h_min, h_max);
    if (family == "reciprocal") return IntensityModel::reciprocal(n, c, cap);
    throw std::invalid_argument("config: unknown intensity family '" + family + "'");
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    reject_unknown(j, {"market", "intensity", "utility", "box", "paths", "experiment", "output", "note"}, "config");
    ExperimentConfig c;
    if (j.contains("market")) {
        const json& m = j.at("market");
        reject_unknown(m, {"r", "mu_S", "mu_P", "sigma_S", "sigma_P", "rho", "L_S", "L_P"}, "market");
        read(m, "r", c.r);
        read(m, "mu_S", c.mu_s);
        read(m, "mu_P", c.mu_p);
        read(m, "sigma_S", c.sigma_s);
        read(m, "sigma_P", c.sigma_p);
        read(m, "rho", c.rho);
        read(m, "L_S", c.loss_s);
        read(m, "L_P", c.loss_p);
    }
    if (j.contains("intensity")) {
        const json& h = j.at("intensity");
        reject_unknown(h, {"family", "rate", "h0", "k_own", "k_cross", "alpha", "h_min", "h_max", "c", "cap"},
                       "intensity");
        IntensitySpec& s = c.intensity;
        read(h, "family", s.family);
        read(h, "rate", s.rate);
        read(h, "h0", s.h0);
        read(h, "k_own", s.k_own);
        read(h, "k_cross", s.k_cross);
        read(h, "alpha", s.alpha);
        read(h, "h_min", s.h_min);
        read(h, "h_max", s.h_max);
        read(h, "c", s.c);
        read(h, "cap", s.cap);
    }
    if (j.contains("utility")) {
        const json& u = j.at("utility");
        reject_unknown(u, {"kind", "gamma"}, "utility");
        read(u, "kind", c.utility);
        read(u, "gamma", c.gamma);
        if (c.utility != "log" && c.utility != "power")
            throw std::invalid_argument("config: utility kind must be 'log' or 'power'");
    }
    if (j.contains("box")) {
        const json& b = j.at("box");
        reject_unknown(b, {"lower", "upper", "eps_a"}, "box");
        read(b, "lower", c.box.lower);
        read(b, "upper", c.box.upper);
        read(b, "eps_a", c.box.eps_a);
    }
    bool domain_given = false;
    if (j.contains("paths")) {
        const json& p = j.at("paths");
        reject_unknown(p, {"horizon", "n_steps", "n_paths", "seed", "S0", "P0", "x0"}, "paths");
        read(p, "horizon", c.paths.horizon);
        read(p, "n_steps", c.paths.n_steps);
        read(p, "n_paths", c.paths.n_paths);
        read(p, "seed", c.paths.master_seed);
        read(p, "S0", c.paths.initial_prices[0]);
        read(p, "P0", c.paths.initial_prices[1]);
        read(p, "x0", c.x0);
    }
    if (j.contains("experiment")) {
        const json& e = j.at("experiment");
        reject_unknown(e, {"kind", "h_bar", "sweep", "grid"}, "experiment");
        read(e, "kind", c.kind);
        read(e, "h_bar", c.h_bar);
        static const std::set<std::string> kinds{"compare", "sweep", "crisis", "power-compare"};
        if (!kinds.count(c.kind)) throw std::invalid_argument("config: unknown experiment kind '" + c.kind + "'");
        if (e.contains("sweep")) {
            const json& sw = e.at("sweep");
            reject_unknown(sw, {"mode", "entries"}, "experiment.sweep");
            SweepMode mode = SweepMode::misspecified_investor;
            if (sw.contains("mode")) mode = parse_mode(sw.at("mode").get<std::string>());
            for (const json& entry : sw.value("entries", json::array())) {
                reject_unknown(entry, {"label", "set", "mode"}, "sweep entry");
                SweepEntry se;
                se.mode = entry.contains("mode") ? parse_mode(entry.at("mode").get<std::string>()) : mode;
                for (const auto& [name, value] : entry.at("set").items())
                    se.changes.emplace_back(name, value.get<double>());
                if (entry.contains("label")) {
                    se.label = entry.at("label").get<std::string>();
                } else {
                    for (const auto& [name, value] : se.changes) {
                        char buf[64];
                        std::snprintf(buf, sizeof buf, "%s%s=%g", se.label.empty() ? "" : " ", name.c_str(), value);
                        se.label += buf;
                    }
                }
                ExperimentConfig probe;
                for (const auto& [name, value] : se.changes) apply_parameter(probe, name, value);
                c.sweep.push_back(std::move(se));
            }
        }
        if (e.contains("grid")) {
            const json& g = e.at("grid");
            reject_unknown(g, {"delta", "dt", "s_max", "p_max", "control_points", "refine"}, "experiment.grid");
            read(g, "delta", c.grid.delta);
            read(g, "dt", c.grid.dt);
            read(g, "control_points", c.grid.control_points);
            read(g, "refine", c.grid.refine);
            domain_given = g.contains("s_max") || g.contains("p_max");
            read(g, "s_max", c.grid.s_max);
            read(g, "p_max", c.grid.p_max);
        }
    }
    if (!domain_given) {
        c.grid.s_max = 4.0 * c.paths.initial_prices[0];
        c.grid.p_max = 4.0 * c.paths.initial_prices[1];
    }
    c.grid.horizon = c.paths.horizon;
    if (j.contains("output")) {
        const json& o = j.at("output");
        reject_unknown(o, {"dir", "prefix", "dump_paths"}, "output");
        read(o, "dir", c.out_dir);
        read(o, "prefix", c.prefix);
        read(o, "dump_paths", c.dump_paths);
    }
    if (c.box.lower.size() != 2 || c.box.upper.size() != 2)
        throw std::invalid_argument("config: box bounds must have two entries");
    c.paths.validate(2);
    return c;
}

json ExperimentConfig::to_json() const {
    json j;
    j["market"] = {{"r", r},         {"mu_S", mu_s},     {"mu_P", mu_p}, {"sigma_S", sigma_s},
                   {"sigma_P", sigma_p}, {"rho", rho}, {"L_S", loss_s}, {"L_P", loss_p}};
    json h = {{"family", intensity.family}};
    if (intensity.family == "constant") {
        h["rate"] = intensity.rate;
        h["cap"] = intensity.cap;
    } else if (intensity.family == "reciprocal") {
        h["c"] = intensity.c;
        h["cap"] = intensity.cap;
    } else {
        h.update({{"h0", intensity.h0},
                  {"k_own", intensity.k_own},
                  {"k_cross", intensity.k_cross},
                  {"alpha", intensity.alpha},
                  {"h_min", intensity.h_min},
                  {"h_max", intensity.h_max}});
    }
    j["intensity"] = h;
    j["utility"] = {{"kind", utility}};
    if (utility == "power") j["utility"]["gamma"] = gamma;
    j["box"] = {{"lower", box.lower}, {"upper", box.upper}, {"eps_a", box.eps_a}};
    j["paths"] = {{"horizon", paths.horizon}, {"n_steps", paths.n_steps},
                  {"n_paths", paths.n_paths}, {"seed", paths.master_seed},
                  {"S0", paths.initial_prices[0]}, {"P0", paths.initial_prices[1]},
                  {"x0", x0}};
    json e = {{"kind", kind}, {"h_bar", h_bar}};
    if (!sweep.empty()) {
        json entries = json::array();
        for (const SweepEntry& se : sweep) {
            json set = json::object();
            for (const auto& [name, value] : se.changes) set[name] = value;
            entries.push_back({{"label", se.label}, {"set", set}, {"mode", std::string(to_string(se.mode))}});
        }
        e["sweep"] = {{"entries", entries}};
    }
    e["grid"] = {{"delta", grid.delta},   {"dt", grid.dt},
                 {"s_max", grid.s_max},   {"p_max", grid.p_max},
                 {"control_points", grid.control_points}, {"refine", grid.refine}};
    j["experiment"] = e;
    j["output"] = {{"dir", out_dir}, {"prefix", prefix}, {"dump_paths", dump_paths}};
    return j;
}

MarketParams ExperimentConfig::market() const {
    return MarketParams::two_stock(r, mu_s, mu_p, sigma_s, sigma_p, rho, loss_s, loss_p);
}

IntensityModel ExperimentConfig::intensity_model() const { return intensity.build(2); }

LogControlProblem ExperimentConfig::log_problem() const {
    return LogControlProblem(market(), intensity_model(), box);
}

PowerProblem ExperimentConfig::power_problem(const IntensityModel& model) const {
    return PowerProblem(market(), model, box, PowerParams{gamma});
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw std::invalid_argument("config " + path.string() + ": " + e.what());
    }
    return ExperimentConfig::from_json(j);
}

void apply_parameter(ExperimentConfig& cfg, const std::string& name, double value) {
    IntensitySpec& h = cfg.intensity;
    const std::map<std::string, double*> slots{
        {"r", &cfg.r},           {"mu_S", &cfg.mu_s},       {"mu_P", &cfg.mu_p},
        {"sigma_S", &cfg.sigma_s}, {"sigma_P", &cfg.sigma_p}, {"rho", &cfg.rho},
        {"L_S", &cfg.loss_s},    {"L_P", &cfg.loss_p},      {"h0", &h.h0},
        {"k_own", &h.k_own},     {"k1", &h.k_own},          {"k_cross", &h.k_cross},
        {"k2", &h.k_cross},      {"alpha", &h.alpha},       {"h_min", &h.h_min},
        {"h_max", &h.h_max},     {"c", &h.c},               {"h_bar", &cfg.h_bar},
    };
    const auto it = slots.find(name);
    if (it == slots.end()) throw std::invalid_argument("unknown parameter '" + name + "'");
    *it->second = value;
}

json SolverHealth::to_json() const {
    json j = {{"kt_fallbacks", kt_fallbacks}, {"out_of_domain_queries", out_of_domain}};
    if (!grid_dt.empty()) j["grid_dt"] = grid_dt;
    return j;
}

namespace {

std::array<double, 2> initial_control(const Strategy& s, const ExperimentConfig& cfg) {
    std::array<double, 2> pi{};
    s.allocate(0.0, cfg.x0, cfg.paths.initial_prices, DefaultState::none(2), pi);
    return pi;
}

ComparisonResult compare_on_bundle(const ExperimentConfig& cfg, const Strategy& active,
                                   const Strategy& passive, Backend backend) {
    const PathSimulator sim(cfg.market(), cfg.intensity_model(), cfg.paths);
    const Strategy* strategies[] = {&active, &passive};
    const BundleOutcome out = evaluate_on_bundle(sim, strategies, cfg.x0, backend);
    const Cohorts cohorts = partition_by_default(out.had_default);
    ComparisonResult r;
    r.active = cohort_report("h(S,P)", out.terminal_wealth[0], cohorts);
    r.passive = cohort_report("constant h", out.terminal_wealth[1], cohorts);
    r.n_paths = out.had_default.size();
    r.n_default = cohorts.with_default.size();
    r.rng_digest = out.combined_digest();
    r.initial_active = initial_control(active, cfg);
    r.initial_passive = initial_control(passive, cfg);
    return r;
}

}  // namespace

ComparisonResult run_comparison(const ExperimentConfig& cfg, Backend backend) {
    if (cfg.utility != "log") throw std::invalid_argument("compare: needs log utility (use power-compare)");
    const LogControlProblem prob = cfg.log_problem();
    const auto active = make_log_strategy(prob, LogMode::state_dependent());
    const auto passive = make_log_strategy(prob, LogMode::fixed(cfg.h_bar));
    ComparisonResult r = compare_on_bundle(cfg, *active, *passive, backend);
    r.health.kt_fallbacks = active->fallback_count() + passive->fallback_count();
    return r;
}

ComparisonResult run_crisis(const ExperimentConfig& cfg, Backend backend) {
    if (cfg.intensity.family != "reciprocal")
        throw std::invalid_argument("crisis: intensity family must be 'reciprocal'");
    return run_comparison(cfg, backend);
}

PowerSolveResult solve_power_from_config(const ExperimentConfig& cfg, const IntensityModel& model,
                                         Backend backend) {
    const PowerProblem prob = cfg.power_problem(model);
    GridSpec spec = cfg.grid;
    spec.horizon = cfg.paths.horizon;
    spec = with_stable_dt(prob, spec);
    PowerSolveResult r;
    r.grid = std::make_shared<const ValueGrid>(PowerSolver(prob, spec).solve(backend));
    r.dt_used = spec.dt;
    return r;
}

ComparisonResult run_power_comparison(const ExperimentConfig& cfg, Backend backend) {
    if (cfg.utility != "power") throw std::invalid_argument("power-compare: needs power utility");
    const IntensityModel world = cfg.intensity_model();
    const IntensityModel flat = IntensityModel::constant(2, cfg.h_bar, std::max(1.0, cfg.h_bar));
    const PowerSolveResult active_grid = solve_power_from_config(cfg, world, backend);
    const PowerSolveResult passive_grid = solve_power_from_config(cfg, flat, backend);
    const auto active = make_power_strategy(active_grid.grid, cfg.power_problem(world));
    const auto passive = make_power_strategy(passive_grid.grid, cfg.power_problem(flat));
    ComparisonResult r = compare_on_bundle(cfg, *active, *passive, backend);
    r.health.out_of_domain = active->out_of_domain_count() + passive->out_of_domain_count();
    r.health.grid_dt["h(S,P)"] = active_grid.dt_used;
    r.health.grid_dt["constant h"] = passive_grid.dt_used;
    return r;
}

std::string comparison_csv(const ComparisonResult& result) {
    std::ostringstream out;
    out << stats_csv_header() << '\n';
    const std::pair<const char*, const CohortReport*> strategies[] = {{"h(S,P)", &result.active},
                                                                     {"constant h", &result.passive}};
    for (const char* cohort : {"All samples", "Default", "No-default"}) {
        for (const auto& [name, report] : strategies) {
            std::optional<SampleStats> stats;
            if (cohort[0] == 'A') stats = report->all;
            else if (cohort[0] == 'D') stats = report->with_default;
            else stats = report->without_default;
            out << stats_csv_row(std::string(cohort) + " + " + name, stats) << '\n';
        }
    }
    return out.str();
}

SweepResult run_sweep(const ExperimentConfig& cfg, Backend backend) {
    if (cfg.utility != "log") throw std::invalid_argument("sweep: needs log utility");
    SweepResult result;
    auto evaluate = [&](const ExperimentConfig& world, const ExperimentConfig& investor) {
        const auto strategy = make_log_strategy(investor.log_problem(), LogMode::state_dependent());
        const PathSimulator sim(world.market(), world.intensity_model(), world.paths);
        const Strategy* strategies[] = {strategy.get()};
        const BundleOutcome out = evaluate_on_bundle(sim, strategies, world.x0, backend);
        result.health.kt_fallbacks += strategy->fallback_count();
        return summarize(out.terminal_wealth[0]);
    };
    result.benchmark = evaluate(cfg, cfg);
    const SampleStats& b = result.benchmark;
    for (const SweepEntry& entry : cfg.sweep) {
        ExperimentConfig perturbed = cfg;
        for (const auto& [name, value] : entry.changes) apply_parameter(perturbed, name, value);
        const ExperimentConfig& world = entry.mode == SweepMode::perturbed_world ? perturbed : cfg;
        SweepRow row;
        row.label = entry.label;
        row.mode = entry.mode;
        row.stats = evaluate(world, perturbed);
        row.deltas = {percent_delta(row.stats.mean, b.mean), percent_delta(row.stats.std, b.std),
                      percent_delta(row.stats.q_low, b.q_low), percent_delta(row.stats.q_high, b.q_high)};
        result.rows.push_back(std::move(row));
    }
    return result;
}

std::string sweep_csv(const SweepResult& result) {
    std::ostringstream out;
    out << "label,mode,n,mean,std,q023,q977,d_mean,d_std,d_q023,d_q977\n";
    auto emit = [&](const std::string& label, std::string_view mode, const SampleStats& s,
                    const std::array<std::string, 4>& d) {
        char buf[160];
        std::snprintf(buf, sizeof buf, ",%zu,%.6g,%.6g,%.6g,%.6g", s.n, s.mean, s.std, s.q_low, s.q_high);
        out << csv_field(label) << ',' << mode << buf << ',' << d[0] << ',' << d[1] << ',' << d[2] << ',' << d[3] << '\n';
    };
    const std::string zero = percent_delta(0.0, 0.0);
    emit("benchmark", "benchmark", result.benchmark, {zero, zero, zero, zero});
    for (const SweepRow& row : result.rows) emit(row.label, to_string(row.mode), row.stats, row.deltas);
    return out.str();
}

std::string log_control_table_csv(const ExperimentConfig& cfg, const std::vector<double>& s_values,
                                  const std::vector<double>& p_values) {
    const LogControlProblem prob = cfg.log_problem();
    std::ostringstream out;
    out << "z_bits,s,p,h_S,h_P,pi_S,pi_P,case\n";
    char buf[200];
    for (double s : s_values)
        for (double p : p_values) {
            const auto h = prob.pre_default_intensities(s, p);
            const KTSolution k = solve_pre_default_control(prob, s, p);
            std::snprintf(buf, sizeof buf, "00,%.6g,%.6g,%.6g,%.6g,%.10g,%.10g,", s, p, h[0], h[1],
                          k.pi[0], k.pi[1]);
            out << buf << to_string(k.kt_case) << '\n';
        }
    // Single survivors: "10" means S has defaulted and P survives alone.
    for (double p : p_values) {
        const DefaultState z(2, 1u);
        const std::array<double, 2> prices{0.0, p};
        const double h = prob.intensity().rate(1, z, prices);
        const double pi = solve_single_survivor_control(prob, p, z);
        std::snprintf(buf, sizeof buf, "10,0,%.6g,0,%.6g,0,%.10g,closed_form\n", p, h, pi);
        out << buf;
    }
    for (double s : s_values) {
        const DefaultState z(2, 2u);
        const std::array<double, 2> prices{s, 0.0};
        const double h = prob.intensity().rate(0, z, prices);
        const double pi = solve_single_survivor_control(prob, s, z);
        std::snprintf(buf, sizeof buf, "01,%.6g,0,%.6g,0,%.10g,0,closed_form\n", s, h, pi);
        out << buf;
    }
    return out.str();
}

std::string git_blob_sha1(const std::string& content) {
    const std::string header = "blob " + std::to_string(content.size()) + '\0';
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx, header.data(), header.size()) != 1 ||
        EVP_DigestUpdate(ctx, content.data(), content.size()) != 1 ||
        EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
        EVP_MD_CTX_free(ctx);
        throw std::runtime_error("sha1: digest failed");
    }
    EVP_MD_CTX_free(ctx);
    std::string hex;
    char byte[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(byte, sizeof byte, "%02x", digest[i]);
        hex += byte;
    }
    return hex;
}

json write_run(const std::filesystem::path& dir, const std::string& command,
               const ExperimentConfig& cfg, const std::vector<OutputFile>& files,
               double wall_seconds, const SolverHealth& health) {
    std::filesystem::create_directories(dir);
    json hashes = json::object();
    for (const OutputFile& f : files) {
        std::ofstream out(dir / f.name, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + (dir / f.name).string());
        out << f.content;
        hashes[f.name] = git_blob_sha1(f.content);
    }
    json manifest = {{"command", command},
                     {"config", cfg.to_json()},
                     {"seed", cfg.paths.master_seed},
                     {"threads", worker_count()},
                     {"content_hash", hashes},
                     {"wall_time_s", wall_seconds},
                     {"solver_health", health.to_json()}};
    std::ofstream out(dir / (cfg.prefix + "_manifest.json"));
    out << manifest.dump(2) << '\n';
    return manifest;
}

}  // namespace contagion
