#include "contagion/dynamics.hpp"

#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <ostream>
#include <string>

#include "contagion/rng.hpp"

namespace contagion {

namespace {

// Runs body(i) for i in [0, count); exceptions thrown by workers are
// rethrown on the calling thread.
template <class Body>
void for_each_index(int count, Backend backend, Body&& body) {
    if (backend == Backend::serial) {
        for (int i = 0; i < count; ++i) body(i);
        return;
    }
    std::exception_ptr failure;
    std::mutex failure_mutex;
#pragma omp parallel for schedule(dynamic, 16)
    for (int i = 0; i < count; ++i) {
        try {
            body(i);
        } catch (...) {
            std::lock_guard<std::mutex> lock(failure_mutex);
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);
}

}  // namespace

void PathConfig::validate(std::size_t n_stocks) const {
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw std::invalid_argument("paths: horizon must be > 0");
    if (n_steps < 1) throw std::invalid_argument("paths: n_steps must be >= 1");
    if (n_paths < 1) throw std::invalid_argument("paths: n_paths must be >= 1");
    if (initial_prices.size() != n_stocks) throw std::invalid_argument("paths: initial price count");
    for (double s : initial_prices)
        if (!(s > 0.0)) throw std::invalid_argument("paths: initial prices must be > 0");
}

int MarketPath::default_count() const {
    int c = 0;
    for (int s : default_step) c += s >= 0 ? 1 : 0;
    return c;
}

double MarketPath::default_time(std::size_t i) const {
    return default_step[i] >= 0 ? time(default_step[i]) : -1.0;
}

void ConstantStrategy::allocate(double, double, std::span<const double>, DefaultState state,
                                std::span<double> pi) const {
    for (std::size_t i = 0; i < pi.size(); ++i) pi[i] = state.defaulted(i) ? 0.0 : pi_[i];
}

AdmissibleBox zero_box(std::size_t n) {
    return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0.01};
}

PathSimulator::PathSimulator(MarketParams params, IntensityModel intensity, PathConfig cfg)
    : params_(std::move(params)), intensity_(std::move(intensity)), cfg_(std::move(cfg)) {
    params_.validate(/*allow_zero_volatility=*/true);
    intensity_.validate();
    if (intensity_.n() != params_.n()) throw std::invalid_argument("simulator: intensity dimension");
    cfg_.validate(params_.n());
    chol_ = cholesky_lower(params_.rho);
}

MarketPath PathSimulator::simulate(std::uint64_t path_index) const {
    const std::size_t n = params_.n();
    const int steps = cfg_.n_steps;
    const double dt = cfg_.dt();
    const double sqrt_dt = std::sqrt(dt);

    MarketPath path;
    path.n = n;
    path.n_steps = steps;
    path.dt = dt;
    path.prices.assign((steps + 1) * n, 0.0);
    path.increments.assign(steps * n, 0.0);
    path.intensities.assign(steps * n, 0.0);
    path.states.assign(steps + 1, 0u);
    path.jump_after_step.assign(steps, -1);
    path.default_step.assign(n, -1);

    PathStream rng(cfg_.master_seed, path_index);
    std::vector<double> clock(n), hazard(n, 0.0), next_hazard(n), normals(n);
    for (std::size_t i = 0; i < n; ++i) clock[i] = rng.exponential();

    std::vector<double> s(cfg_.initial_prices);
    std::uint32_t bits = 0;
    for (std::size_t i = 0; i < n; ++i) path.prices[i] = s[i];

    for (int k = 0; k < steps; ++k) {
        const DefaultState state(n, bits);
        double* h = path.intensities.data() + k * n;
        double* dw = path.increments.data() + k * n;
        for (std::size_t i = 0; i < n; ++i)
            h[i] = state.survives(i) ? intensity_.rate(i, state, s) : 0.0;

        for (std::size_t i = 0; i < n; ++i) normals[i] = rng.normal();
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j <= i; ++j) acc += chol_(i, j) * normals[j];
            dw[i] = sqrt_dt * acc;
        }

        for (std::size_t i = 0; i < n; ++i) {
            if (state.defaulted(i)) continue;
            const double sig = params_.sigma[i];
            s[i] *= std::exp((params_.mu[i] - 0.5 * sig * sig) * dt + sig * dw[i]);
        }

        // Left-endpoint hazard; among clocks crossed this step, the earliest
        // interpolated crossing defaults and the others are re-tested next step.
        int first = -1;
        double first_frac = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            next_hazard[i] = hazard[i] + h[i] * dt;
            if (state.defaulted(i) || next_hazard[i] < clock[i]) continue;
            const double frac = (clock[i] - hazard[i]) / (h[i] * dt);
            if (first < 0 || frac < first_frac) {
                first = static_cast<int>(i);
                first_frac = frac;
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            const bool rolled_back = state.survives(i) && static_cast<int>(i) != first &&
                                     next_hazard[i] >= clock[i];
            if (!rolled_back) hazard[i] = next_hazard[i];
        }

        if (first >= 0) {
            const auto d = static_cast<std::size_t>(first);
            for (std::size_t j = 0; j < n; ++j)
                if (j != d && state.survives(j)) s[j] *= 1.0 - params_.loss(j, d);
            s[d] = 0.0;
            bits |= 1u << d;
            path.jump_after_step[k] = first;
            path.default_step[d] = k + 1;
        }

        path.states[k + 1] = bits;
        for (std::size_t i = 0; i < n; ++i) path.prices[(k + 1) * n + i] = s[i];
    }
    path.rng_digest = rng.digest();
    return path;
}

std::vector<MarketPath> simulate_paths(const MarketParams& params, const IntensityModel& intensity,
                                       const PathConfig& cfg, Backend backend) {
    const PathSimulator sim(params, intensity, cfg);
    std::vector<MarketPath> out(cfg.n_paths);
    for_each_index(cfg.n_paths, backend, [&](int i) { out[i] = sim.simulate(i); });
    return out;
}

namespace {

// Walks the wealth recursion in log space; `visit(k, lnx)` sees ln X_k.
template <class Visit>
double walk_log_wealth(const MarketPath& path, const MarketParams& params,
                       const Strategy& strategy, double x0, Visit&& visit) {
    if (!(x0 > 0.0)) throw std::invalid_argument("wealth: x0 must be > 0");
    const std::size_t n = path.n;
    std::vector<double> pi(n);
    double lnx = std::log(x0);
    visit(0, lnx);
    for (int k = 0; k < path.n_steps; ++k) {
        const DefaultState state = path.state_at(k);
        const double t = path.time(k);
        strategy.allocate(t, std::exp(lnx), path.prices_at(k), state, pi);
        if (!is_admissible(pi, strategy.box(), params, state))
            throw std::logic_error("wealth: strategy left the admissible set at step " +
                                   std::to_string(k));
        double drift = params.r;
        double var = 0.0;
        double diffusion = 0.0;
        const double* dw = path.increments.data() + k * n;
        for (std::size_t i = 0; i < n; ++i) {
            if (pi[i] == 0.0) continue;
            drift += pi[i] * params.theta(i);
            diffusion += pi[i] * params.sigma[i] * dw[i];
            for (std::size_t j = 0; j < n; ++j) var += pi[i] * params.covariance(i, j) * pi[j];
        }
        lnx += (drift - 0.5 * var) * path.dt + diffusion;
        const int j = path.jump_after_step[k];
        if (j >= 0) {
            double factor = 1.0;
            for (std::size_t i = 0; i < n; ++i) factor -= params.loss(i, j) * pi[i];
            lnx += std::log(factor);
        }
        visit(k + 1, lnx);
    }
    return lnx;
}

}  // namespace

WealthPath evolve_wealth(const MarketPath& path, const MarketParams& params,
                         const Strategy& strategy, double x0) {
    WealthPath out;
    out.x0 = x0;
    out.wealth.resize(path.n_steps + 1);
    walk_log_wealth(path, params, strategy, x0,
                    [&](int k, double lnx) { out.wealth[k] = k == 0 ? x0 : std::exp(lnx); });
    return out;
}

double terminal_log_wealth(const MarketPath& path, const MarketParams& params,
                           const Strategy& strategy, double x0) {
    return walk_log_wealth(path, params, strategy, x0, [](int, double) {});
}

LogValueEstimate estimate_log_value(const MarketParams& params, const IntensityModel& intensity,
                                    const Strategy& strategy, const PathConfig& cfg, double x0,
                                    Backend backend) {
    const PathSimulator sim(params, intensity, cfg);
    std::vector<double> samples(cfg.n_paths);
    for_each_index(cfg.n_paths, backend, [&](int i) {
        samples[i] = terminal_log_wealth(sim.simulate(i), params, strategy, x0);
    });
    LogValueEstimate est;
    est.n = cfg.n_paths;
    double sum = 0.0;
    for (double v : samples) sum += v;
    est.mean = sum / est.n;
    if (est.n > 1) {
        double ss = 0.0;
        for (double v : samples) ss += (v - est.mean) * (v - est.mean);
        est.std_error = std::sqrt(ss / (est.n - 1) / est.n);
    }
    return est;
}

std::uint64_t BundleOutcome::combined_digest() const {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (std::uint64_t d : rng_digest) h = (h ^ d) * 0x100000001B3ull;
    return h;
}

BundleOutcome evaluate_on_bundle(const PathSimulator& sim,
                                 std::span<const Strategy* const> strategies, double x0,
                                 Backend backend) {
    const int n_paths = sim.config().n_paths;
    BundleOutcome out;
    out.terminal_wealth.assign(strategies.size(), std::vector<double>(n_paths));
    out.had_default.assign(n_paths, 0);
    out.rng_digest.assign(n_paths, 0);
    for_each_index(n_paths, backend, [&](int i) {
        const MarketPath path = sim.simulate(i);
        out.had_default[i] = path.default_count() > 0;
        out.rng_digest[i] = path.rng_digest;
        for (std::size_t k = 0; k < strategies.size(); ++k)
            out.terminal_wealth[k][i] =
                std::exp(terminal_log_wealth(path, sim.params(), *strategies[k], x0));
    });
    return out;
}

void write_path_dump(std::ostream& out, std::span<const MarketPath> paths,
                     std::span<const WealthPath> wealth) {
    if (paths.empty()) return;
    const std::size_t n = paths.front().n;
    out << "path_id,step,t";
    for (std::size_t i = 0; i < n; ++i) out << ",S_" << (i + 1);
    out << ",z_bits,X\n";
    char buf[64];
    for (std::size_t p = 0; p < paths.size(); ++p) {
        const MarketPath& path = paths[p];
        for (int k = 0; k <= path.n_steps; ++k) {
            out << p << ',' << k;
            std::snprintf(buf, sizeof buf, ",%.10g", path.time(k));
            out << buf;
            for (std::size_t i = 0; i < n; ++i) {
                std::snprintf(buf, sizeof buf, ",%.10g", path.prices[k * n + i]);
                out << buf;
            }
            out << ',';
            for (std::size_t i = 0; i < n; ++i) out << (path.state_at(k).defaulted(i) ? '1' : '0');
            out << ',';
            if (p < wealth.size()) {
                std::snprintf(buf, sizeof buf, "%.10g", wealth[p].wealth[k]);
                out << buf;
            }
            out << '\n';
        }
    }
}

}  // namespace contagion
