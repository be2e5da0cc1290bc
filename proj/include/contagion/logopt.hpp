#ifndef CONTAGION_LOGOPT_HPP
#define CONTAGION_LOGOPT_HPP

#include <array>
#include <atomic>
#include <memory>
#include <string_view>

#include "contagion/dynamics.hpp"
#include "contagion/model.hpp"

namespace contagion {

/// Two-stock coefficients with S = stock 0 and P = stock 1.
struct TwoStockView {
    double r, mu_s, mu_p, sigma_s, sigma_p, rho;
    double loss_s;  // drop of S when P defaults
    double loss_p;  // drop of P when S defaults

    static TwoStockView from(const MarketParams& params);
    double theta_s() const { return mu_s - r; }
    double theta_p() const { return mu_p - r; }
};

class LogControlProblem {
public:
    // Throws std::invalid_argument unless n = 2, the market is valid and the
    // whole box is admissible.
    LogControlProblem(MarketParams params, IntensityModel intensity, AdmissibleBox box);

    const MarketParams& params() const { return params_; }
    const IntensityModel& intensity() const { return intensity_; }
    const AdmissibleBox& box() const { return box_; }
    const TwoStockView& view() const { return view_; }

    // Pre-default intensities (h^S, h^P) at prices (s, p).
    std::array<double, 2> pre_default_intensities(double s, double p) const;

private:
    MarketParams params_;
    IntensityModel intensity_;
    AdmissibleBox box_;
    TwoStockView view_;
};

// Order matters: it is the enumeration and tie-break order.
enum class KtCase {
    interior,
    s_low,
    s_high,
    p_low,
    p_high,
    low_low,
    low_high,
    high_low,
    high_high,
    grid_fallback,
};

std::string_view to_string(KtCase c);

struct KTSolution {
    std::array<double, 2> pi{};
    KtCase kt_case = KtCase::interior;
    // mu1..mu4 for the constraints pi_S >= a_S, pi_S <= b_S, pi_P >= a_P, pi_P <= b_P.
    std::array<double, 4> multipliers{};
    double residual = 0.0;   // max |dG/dpi| over free coordinates
    double objective = 0.0;  // G at pi
    bool fallback() const { return kt_case == KtCase::grid_fallback; }
};

// G(pi) = -1/2 pi' Sigma pi + theta' pi + h_S ln(1 - pi_S - L^P pi_P)
//         + h_P ln(1 - L^S pi_S - pi_P).
// Throws std::domain_error if either log argument is <= 0.
double g_objective(const TwoStockView& v, double h_s, double h_p, std::array<double, 2> pi);
double g_objective(const LogControlProblem& prob, double s, double p, std::array<double, 2> pi);

// Gradient of G; same domain as g_objective.
std::array<double, 2> g_gradient(const TwoStockView& v, double h_s, double h_p,
                                 std::array<double, 2> pi);

// Kuhn-Tucker enumeration over the nine faces of the box for given
// intensities.
KTSolution solve_kt(const TwoStockView& v, const AdmissibleBox& box, double h_s, double h_p);

KTSolution solve_pre_default_control(const LogControlProblem& prob, double s, double p);

// Closed-form log control for a single surviving stock with drift premium
// theta, volatility sigma and intensity h, clamped to [lower, upper].
double single_survivor_control(double theta, double sigma, double h, double lower, double upper);

// Control of the surviving stock in a one-survivor state; `price` is the
// survivor's price.
double solve_single_survivor_control(const LogControlProblem& prob, double price,
                                     DefaultState state);

struct LogMode {
    enum class Kind { state_dependent, fixed_intensity };
    Kind kind = Kind::state_dependent;
    double h_bar = 0.1;

    static LogMode state_dependent() { return {Kind::state_dependent, 0.0}; }
    static LogMode fixed(double h_bar) { return {Kind::fixed_intensity, h_bar}; }
};

class LogStrategy final : public Strategy {
public:
    LogStrategy(LogControlProblem prob, LogMode mode);

    void allocate(double t, double wealth, std::span<const double> prices, DefaultState state,
                  std::span<double> pi) const override;
    const AdmissibleBox& box() const override { return prob_.box(); }

    const LogControlProblem& problem() const { return prob_; }
    // Number of solves that needed the grid fallback.
    long fallback_count() const { return fallbacks_.load(); }

private:
    LogControlProblem prob_;
    LogMode mode_;
    std::array<double, 2> fixed_pre_{};
    double fixed_s_alone_ = 0.0;
    double fixed_p_alone_ = 0.0;
    mutable std::atomic<long> fallbacks_{0};
};

std::shared_ptr<const LogStrategy> make_log_strategy(const LogControlProblem& prob, LogMode mode);

}  // namespace contagion

#endif  // CONTAGION_LOGOPT_HPP
