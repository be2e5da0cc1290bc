#ifndef CONTAGION_DYNAMICS_HPP
#define CONTAGION_DYNAMICS_HPP

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include "contagion/model.hpp"
#include "contagion/parallel.hpp"

namespace contagion {

struct PathConfig {
    double horizon = 1.0;
    int n_steps = 250;
    int n_paths = 10000;
    std::uint64_t master_seed = 1;
    std::vector<double> initial_prices;

    double dt() const { return horizon / n_steps; }
    void validate(std::size_t n_stocks) const;
};

/// One simulated trajectory of the contagion market.
///
/// Arrays are step-major: `prices[k * n + i]` is stock i at t_k, k = 0..n_steps.
/// `increments[k * n + i]` is the correlated Brownian increment over
/// [t_k, t_{k+1}] and `intensities[k * n + i]` the left-endpoint hazard used
/// on that step (0 for defaulted stocks).
struct MarketPath {
    std::size_t n = 0;
    int n_steps = 0;
    double dt = 0.0;
    std::vector<double> prices;
    std::vector<double> increments;
    std::vector<double> intensities;
    std::vector<std::uint32_t> states;  // default bits at t_k, k = 0..n_steps
    std::vector<int> jump_after_step;   // stock defaulting at t_{k+1}, or -1
    std::vector<int> default_step;      // per stock: boundary index of default, or -1
    std::uint64_t rng_digest = 0;

    double time(int k) const { return k * dt; }
    std::span<const double> prices_at(int k) const { return {prices.data() + k * n, n}; }
    DefaultState state_at(int k) const { return {n, states[static_cast<std::size_t>(k)]}; }
    int default_count() const;
    // Default time of stock i, or a negative value if it survives the horizon.
    double default_time(std::size_t i) const;
};

/// Decision rule (t, x, s, z) -> pi. Implementations are immutable after
/// construction and may be shared across workers.
class Strategy {
public:
    virtual ~Strategy() = default;

    // Writes the allocation for every stock into `pi` (size n); defaulted
    // stocks must receive exactly 0.
    virtual void allocate(double t, double wealth, std::span<const double> prices,
                          DefaultState state, std::span<double> pi) const = 0;

    virtual const AdmissibleBox& box() const = 0;
};

class ConstantStrategy final : public Strategy {
public:
    ConstantStrategy(std::vector<double> pi, AdmissibleBox box)
        : pi_(std::move(pi)), box_(std::move(box)) {}

    void allocate(double, double, std::span<const double>, DefaultState state,
                  std::span<double> pi) const override;
    const AdmissibleBox& box() const override { return box_; }

private:
    std::vector<double> pi_;
    AdmissibleBox box_;
};

class FunctionStrategy final : public Strategy {
public:
    using Rule = std::function<void(double, double, std::span<const double>, DefaultState,
                                    std::span<double>)>;

    FunctionStrategy(Rule rule, AdmissibleBox box) : rule_(std::move(rule)), box_(std::move(box)) {}

    void allocate(double t, double wealth, std::span<const double> prices, DefaultState state,
                  std::span<double> pi) const override {
        rule_(t, wealth, prices, state, pi);
    }
    const AdmissibleBox& box() const override { return box_; }

private:
    Rule rule_;
    AdmissibleBox box_;
};

// Box admitting only pi = 0; pairs with a zero ConstantStrategy.
AdmissibleBox zero_box(std::size_t n);

/// Simulates single paths of the contagion market; path i depends only on
/// (params, intensity, cfg, i).
class PathSimulator {
public:
    PathSimulator(MarketParams params, IntensityModel intensity, PathConfig cfg);

    MarketPath simulate(std::uint64_t path_index) const;

    const MarketParams& params() const { return params_; }
    const IntensityModel& intensity() const { return intensity_; }
    const PathConfig& config() const { return cfg_; }

private:
    MarketParams params_;
    IntensityModel intensity_;
    PathConfig cfg_;
    SquareMatrix chol_;
};

std::vector<MarketPath> simulate_paths(const MarketParams& params, const IntensityModel& intensity,
                                       const PathConfig& cfg, Backend backend = Backend::openmp);

struct WealthPath {
    double x0 = 0.0;
    std::vector<double> wealth;  // aligned with the market time grid
    double terminal() const { return wealth.back(); }
};

// Throws std::logic_error if the strategy ever leaves the admissible set.
WealthPath evolve_wealth(const MarketPath& path, const MarketParams& params,
                         const Strategy& strategy, double x0);

// Terminal log-wealth only; avoids materializing the series.
double terminal_log_wealth(const MarketPath& path, const MarketParams& params,
                           const Strategy& strategy, double x0);

struct LogValueEstimate {
    double mean = 0.0;
    double std_error = 0.0;
    int n = 0;
};

// Monte Carlo estimate of E[ln X_T].
LogValueEstimate estimate_log_value(const MarketParams& params, const IntensityModel& intensity,
                                    const Strategy& strategy, const PathConfig& cfg, double x0,
                                    Backend backend = Backend::openmp);

/// Terminal wealth of several strategies evaluated on one shared bundle.
struct BundleOutcome {
    std::vector<std::vector<double>> terminal_wealth;  // [strategy][path]
    std::vector<char> had_default;                     // [path]
    std::vector<std::uint64_t> rng_digest;             // [path]
    std::uint64_t combined_digest() const;
};

BundleOutcome evaluate_on_bundle(const PathSimulator& sim,
                                 std::span<const Strategy* const> strategies, double x0,
                                 Backend backend = Backend::openmp);

// CSV rows (path_id, step, t, S_1..S_n, z_bits, X); wealth may be empty, in
// which case the X column is left blank.
void write_path_dump(std::ostream& out, std::span<const MarketPath> paths,
                     std::span<const WealthPath> wealth);

}  // namespace contagion

#endif  // CONTAGION_DYNAMICS_HPP
