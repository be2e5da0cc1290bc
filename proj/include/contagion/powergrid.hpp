#ifndef CONTAGION_POWERGRID_HPP
#define CONTAGION_POWERGRID_HPP

#include <array>
#include <atomic>
#include <iosfwd>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "contagion/dynamics.hpp"
#include "contagion/logopt.hpp"
#include "contagion/model.hpp"
#include "contagion/parallel.hpp"

namespace contagion {

struct PowerParams {
    double gamma = 0.5;
    void validate() const;
};

/// Lattice and time step of the Markov chain approximation. Nodes sit at
/// (i * delta, j * delta) for i * delta <= s_max, j * delta <= p_max.
struct GridSpec {
    double delta = 5.0;
    double dt = 0.1;
    double horizon = 1.0;
    double s_max = 200.0;
    double p_max = 200.0;
    int control_points = 41;  // per axis, over the box
    bool refine = true;       // one local refinement around the coarse argmax

    int n_s() const;
    int n_p() const;
    int n_steps() const;
    void validate() const;
};

/// Power-utility problem for two stocks. The box plays the role of the bounded
/// set O; admissible controls are the box points whose surviving columns keep
/// 1 - L' pi >= eps_a.
class PowerProblem {
public:
    PowerProblem(MarketParams params, IntensityModel intensity, AdmissibleBox box,
                 PowerParams power);

    const MarketParams& params() const { return params_; }
    const IntensityModel& intensity() const { return intensity_; }
    const AdmissibleBox& box() const { return box_; }
    double gamma() const { return power_.gamma; }
    const TwoStockView& view() const { return view_; }

    // Pre-default (h^S, h^P) on the closed orthant, as used at lattice nodes.
    std::array<double, 2> node_intensities(double s, double p) const;

private:
    MarketParams params_;
    IntensityModel intensity_;
    AdmissibleBox box_;
    PowerParams power_;
    TwoStockView view_;
};

class CflViolation : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Post-default value factor exp((r gamma + gamma/(2(1-gamma)) ((mu-r)/sigma)^2)(T-t))
// for a single default-free survivor with drift mu and volatility sigma.
double g1(double t, double horizon, double r, double mu, double sigma, double gamma);

// Merton power control (mu - r) / (sigma^2 (1 - gamma)), clamped to [lower, upper].
double merton_power_control(double theta, double sigma, double gamma, double lower, double upper);
// Control of surviving stock i after the other defaulted, clamped to the box
// and to 1 - pi_i >= eps_a.
double merton_power_control(const PowerProblem& prob, std::size_t survivor);

/// Nine-point transition law of the controlled lattice chain from (s, p).
/// Index order: stay, s+, s-, p+, p-, (s+,p+), (s-,p-), (s+,p-), (s-,p+).
struct Transition {
    std::array<double, 9> prob{};
    static constexpr std::array<std::array<int, 2>, 9> offsets{
        {{0, 0}, {1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {-1, -1}, {1, -1}, {-1, 1}}};
};

// Throws CflViolation if any probability leaves [-1e-12, 1 + 1e-12].
Transition transition_probs(double s, double p, std::array<double, 2> pi, double delta,
                            double dt, const TwoStockView& v, double gamma);

struct DiscountSource {
    double beta = 0.0;
    double g = 0.0;
};

// beta = -r gamma + h^S + h^P - gamma (theta' pi + (gamma - 1)/2 pi' Sigma pi)
// g    = h^S g1_P(t) (1 - pi_S - L^P pi_P)^gamma + h^P g1_S(t) (1 - L^S pi_S - pi_P)^gamma
// where g1_P (g1_S) is the factor of P (S) surviving alone. Throws
// std::domain_error if a post-default wealth factor is <= 0.
DiscountSource discount_and_source(const TwoStockView& v, double gamma, double h_s, double h_p,
                                   double g1_s, double g1_p, std::array<double, 2> pi);
DiscountSource discount_and_source(double s, double p, std::array<double, 2> pi, double t,
                                   const PowerProblem& prob, double horizon);

// Admissible points of the uniform control lattice (points per axis).
std::vector<std::array<double, 2>> control_lattice(const PowerProblem& prob, int points);

struct CflReport {
    bool ok = true;
    double worst_probability = 1.0;
    std::string where;
};

// Checks every node against the control lattice and the box vertices (the
// drift is affine in pi, so vertices bound the refined controls too).
CflReport check_cfl(const PowerProblem& prob, const GridSpec& spec);

// Largest dt for which check_cfl passes at this delta and domain; +inf when
// the drift and diffusion vanish, 0 when no dt works.
double max_stable_dt(const PowerProblem& prob, const GridSpec& spec);

// Copy of spec whose dt is the nominal dt split into the fewest equal
// substeps that satisfy the CFL condition.
GridSpec with_stable_dt(const PowerProblem& prob, GridSpec spec);

/// f(t_k, s_i, p_j) with the maximizing control; slice k = n_steps is terminal.
struct ValueGrid {
    GridSpec spec;
    double gamma = 0.5;
    int n_s = 0;
    int n_p = 0;
    int n_slices = 0;
    std::vector<double> f;
    std::vector<double> control_s;  // slices 0..n_steps-1; terminal repeats the last
    std::vector<double> control_p;

    std::size_t index(int k, int i, int j) const {
        return (static_cast<std::size_t>(k) * n_s + i) * n_p + j;
    }
    double value(int k, int i, int j) const { return f[index(k, i, j)]; }
    std::array<double, 2> control(int k, int i, int j) const {
        return {control_s[index(k, i, j)], control_p[index(k, i, j)]};
    }
    double time(int k) const { return k * spec.dt; }
};

/// One backward step of the dynamic programming principle: given slice k+1,
/// fills slice k (values and argmax controls) at time t_k.
struct SliceResult {
    std::vector<double> f;
    std::vector<double> control_s;
    std::vector<double> control_p;
};

class PowerSolver {
public:
    PowerSolver(PowerProblem prob, GridSpec spec);

    const PowerProblem& problem() const { return prob_; }
    const GridSpec& spec() const { return spec_; }
    const std::vector<std::array<double, 2>>& lattice() const { return lattice_; }

    SliceResult step(const std::vector<double>& next, double t, Backend backend) const;
    ValueGrid solve(Backend backend = Backend::openmp) const;

private:
    // Value of control pi at node (i, j) through the plain formulas.
    double reference_value(int i, int j, std::array<double, 2> pi, const std::vector<double>& next,
                           double t) const;
    SliceResult step_reference(const std::vector<double>& next, double t) const;
    SliceResult step_fast(const std::vector<double>& next, double t) const;

    PowerProblem prob_;
    GridSpec spec_;
    int n_s_, n_p_;
    std::vector<std::array<double, 2>> lattice_;
    std::vector<double> h_s_, h_p_;  // node intensities
};

ValueGrid solve_power_value(const PowerProblem& prob, const GridSpec& spec,
                            Backend backend = Backend::openmp);

// CSV dump: '#' header lines with the grid metadata, then
// slice,t,s,p,f,pi_S,pi_P rows. read_value_grid_csv reverses it. A stride
// above 1 keeps every stride-th slice (n_steps must be a multiple) and
// records the coarser dt.
void write_value_grid_csv(std::ostream& out, const ValueGrid& grid, int slice_stride = 1);
ValueGrid read_value_grid_csv(std::istream& in);

class PowerStrategy final : public Strategy {
public:
    PowerStrategy(std::shared_ptr<const ValueGrid> grid, const PowerProblem& prob);

    void allocate(double t, double wealth, std::span<const double> prices, DefaultState state,
                  std::span<double> pi) const override;
    const AdmissibleBox& box() const override { return box_; }

    long out_of_domain_count() const { return out_of_domain_.load(); }

private:
    std::shared_ptr<const ValueGrid> grid_;
    AdmissibleBox box_;
    double s_alone_ = 0.0;
    double p_alone_ = 0.0;
    mutable std::atomic<long> out_of_domain_{0};
};

std::shared_ptr<const PowerStrategy> make_power_strategy(std::shared_ptr<const ValueGrid> grid,
                                                         const PowerProblem& prob);

}  // namespace contagion

#endif  // CONTAGION_POWERGRID_HPP
