#include "contagion/powergrid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace contagion {

namespace {

constexpr double kProbTol = 1e-12;

int lattice_size(double extent, double delta) {
    return static_cast<int>(std::floor(extent / delta + 1e-9)) + 1;
}

double positive_part(double x) { return x > 0.0 ? x : 0.0; }
double negative_part(double x) { return x < 0.0 ? -x : 0.0; }

// Pre-default column margins (1 - pi_S - L^P pi_P, 1 - L^S pi_S - pi_P).
std::array<double, 2> column_margins(const TwoStockView& v, std::array<double, 2> pi) {
    return {1.0 - pi[0] - v.loss_p * pi[1], 1.0 - v.loss_s * pi[0] - pi[1]};
}

bool in_admissible_set(const PowerProblem& prob, std::array<double, 2> pi) {
    const AdmissibleBox& b = prob.box();
    for (int i = 0; i < 2; ++i)
        if (pi[i] < b.lower[i] || pi[i] > b.upper[i]) return false;
    const auto m = column_margins(prob.view(), pi);
    return m[0] >= b.eps_a && m[1] >= b.eps_a;
}

std::array<double, 2> drift_coefficients(const TwoStockView& v, double gamma,
                                         std::array<double, 2> pi) {
    const double m_pi = v.sigma_s * pi[0] + v.rho * v.sigma_p * pi[1];
    const double n_pi = v.rho * v.sigma_s * pi[0] + v.sigma_p * pi[1];
    return {v.mu_s + gamma * m_pi * v.sigma_s, v.mu_p + gamma * n_pi * v.sigma_p};
}

// Controls whose drift bounds the drift of every control in the box.
std::vector<std::array<double, 2>> drift_extremes(const PowerProblem& prob,
                                                  const std::vector<std::array<double, 2>>& lattice) {
    std::vector<std::array<double, 2>> out(lattice);
    const AdmissibleBox& b = prob.box();
    for (double ps : {b.lower[0], b.upper[0]})
        for (double pp : {b.lower[1], b.upper[1]}) out.push_back({ps, pp});
    return out;
}

}  // namespace

void PowerParams::validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("power utility: gamma must lie in (0, 1)");
}

int GridSpec::n_s() const { return lattice_size(s_max, delta); }
int GridSpec::n_p() const { return lattice_size(p_max, delta); }

int GridSpec::n_steps() const {
    const double ratio = horizon / dt;
    const long steps = std::lround(ratio);
    if (steps < 1 || std::abs(ratio - steps) > 1e-9 * ratio)
        throw std::invalid_argument("grid: horizon must be a whole number of time steps");
    return static_cast<int>(steps);
}

void GridSpec::validate() const {
    if (!(delta > 0.0) || !(dt > 0.0) || !(horizon > 0.0))
        throw std::invalid_argument("grid: delta, dt and horizon must be > 0");
    if (!(s_max >= delta) || !(p_max >= delta)) throw std::invalid_argument("grid: domain smaller than one cell");
    if (control_points < 2) throw std::invalid_argument("grid: need at least 2 control points per axis");
    (void)n_steps();
}

PowerProblem::PowerProblem(MarketParams params, IntensityModel intensity, AdmissibleBox box,
                           PowerParams power)
    : params_(std::move(params)), intensity_(std::move(intensity)), box_(std::move(box)), power_(power) {
    if (params_.n() != 2) throw std::invalid_argument("power problem needs two stocks");
    params_.validate();
    intensity_.validate();
    power_.validate();
    if (box_.lower.size() != 2 || box_.upper.size() != 2) throw std::invalid_argument("power problem: box dimension");
    if (!(box_.eps_a > 0.0 && box_.eps_a < 1.0)) throw std::invalid_argument("power problem: eps_a must lie in (0, 1)");
    view_ = TwoStockView::from(params_);
}

std::array<double, 2> PowerProblem::node_intensities(double s, double p) const {
    const std::array<double, 2> prices{s, p};
    const DefaultState none = DefaultState::none(2);
    return {intensity_.rate_on_closure(0, none, prices), intensity_.rate_on_closure(1, none, prices)};
}

double g1(double t, double horizon, double r, double mu, double sigma, double gamma) {
    if (t > horizon) throw std::invalid_argument("g1: t must not exceed the horizon");
    const double sharpe = (mu - r) / sigma;
    return std::exp((r * gamma + gamma / (2.0 * (1.0 - gamma)) * sharpe * sharpe) * (horizon - t));
}

double merton_power_control(double theta, double sigma, double gamma, double lower, double upper) {
    return std::clamp(theta / (sigma * sigma * (1.0 - gamma)), lower, upper);
}

double merton_power_control(const PowerProblem& prob, std::size_t survivor) {
    const MarketParams& mp = prob.params();
    const AdmissibleBox& b = prob.box();
    const double upper = std::min(b.upper[survivor], 1.0 - b.eps_a);
    return merton_power_control(mp.theta(survivor), mp.sigma[survivor], prob.gamma(),
                                b.lower[survivor], upper);
}

Transition transition_probs(double s, double p, std::array<double, 2> pi, double delta,
                            double dt, const TwoStockView& v, double gamma) {
    const auto drift = drift_coefficients(v, gamma, pi);
    const double b1 = drift[0] * s;
    const double b2 = drift[1] * p;
    const double var_s = (v.sigma_s * s) * (v.sigma_s * s);
    const double var_p = (v.sigma_p * p) * (v.sigma_p * p);
    const double cross = v.rho * v.sigma_s * v.sigma_p * s * p;
    const double abs_cross = std::abs(cross);
    const double h1 = dt / delta;
    const double h2 = dt / (2.0 * delta * delta);

    Transition tr;
    auto& q = tr.prob;
    q[0] = 1.0 - h1 * (std::abs(b1) + std::abs(b2)) - (dt / (delta * delta)) * (var_s + var_p - abs_cross);
    q[1] = h1 * positive_part(b1) + h2 * var_s - h2 * abs_cross;
    q[2] = h1 * negative_part(b1) + h2 * var_s - h2 * abs_cross;
    q[3] = h1 * positive_part(b2) + h2 * var_p - h2 * abs_cross;
    q[4] = h1 * negative_part(b2) + h2 * var_p - h2 * abs_cross;
    q[5] = h2 * positive_part(cross);
    q[6] = h2 * positive_part(cross);
    q[7] = h2 * negative_part(cross);
    q[8] = h2 * negative_part(cross);
    for (std::size_t k = 0; k < q.size(); ++k) {
        if (!(q[k] >= -kProbTol && q[k] <= 1.0 + kProbTol)) {
            char buf[200];
            std::snprintf(buf, sizeof buf,
                          "CFL violation: move %zu has probability %.6g at node (s=%g, p=%g) "
                          "under control (%g, %g)",
                          k, q[k], s, p, pi[0], pi[1]);
            throw CflViolation(buf);
        }
    }
    return tr;
}

DiscountSource discount_and_source(const TwoStockView& v, double gamma, double h_s, double h_p,
                                   double g1_s, double g1_p, std::array<double, 2> pi) {
    const auto margin = column_margins(v, pi);
    if (!(margin[0] > 0.0) || !(margin[1] > 0.0))
        throw std::domain_error("discount/source: post-default wealth factor must be positive");
    const double quad = v.sigma_s * v.sigma_s * pi[0] * pi[0] +
                        2.0 * v.rho * v.sigma_s * v.sigma_p * pi[0] * pi[1] +
                        v.sigma_p * v.sigma_p * pi[1] * pi[1];
    const double linear = v.theta_s() * pi[0] + v.theta_p() * pi[1];
    DiscountSource out;
    out.beta = -v.r * gamma + h_s + h_p - gamma * (linear + 0.5 * (gamma - 1.0) * quad);
    // Jump sum of the generator: a default of S leaves P alone with value factor
    // g1_P and scales wealth by the S-column margin, and symmetrically for P.
    out.g = h_s * g1_p * std::pow(margin[0], gamma) + h_p * g1_s * std::pow(margin[1], gamma);
    return out;
}

DiscountSource discount_and_source(double s, double p, std::array<double, 2> pi, double t,
                                   const PowerProblem& prob, double horizon) {
    const auto h = prob.node_intensities(s, p);
    const TwoStockView& v = prob.view();
    const double g1_s = g1(t, horizon, v.r, v.mu_s, v.sigma_s, prob.gamma());
    const double g1_p = g1(t, horizon, v.r, v.mu_p, v.sigma_p, prob.gamma());
    return discount_and_source(v, prob.gamma(), h[0], h[1], g1_s, g1_p, pi);
}

std::vector<std::array<double, 2>> control_lattice(const PowerProblem& prob, int points) {
    if (points < 2) throw std::invalid_argument("control lattice: need >= 2 points per axis");
    const AdmissibleBox& b = prob.box();
    std::vector<std::array<double, 2>> out;
    for (int i = 0; i < points; ++i) {
        const double ps = b.lower[0] + (b.upper[0] - b.lower[0]) * i / (points - 1);
        for (int j = 0; j < points; ++j) {
            const double pp = b.lower[1] + (b.upper[1] - b.lower[1]) * j / (points - 1);
            if (in_admissible_set(prob, {ps, pp})) out.push_back({ps, pp});
        }
    }
    return out;
}

CflReport check_cfl(const PowerProblem& prob, const GridSpec& spec) {
    spec.validate();
    const TwoStockView& v = prob.view();
    const auto controls = drift_extremes(prob, control_lattice(prob, spec.control_points));
    CflReport report;
    for (int i = 0; i < spec.n_s(); ++i) {
        for (int j = 0; j < spec.n_p(); ++j) {
            const double s = i * spec.delta;
            const double p = j * spec.delta;
            for (const auto& pi : controls) {
                const auto drift = drift_coefficients(v, prob.gamma(), pi);
                const double b1 = drift[0] * s;
                const double b2 = drift[1] * p;
                const double var_s = (v.sigma_s * s) * (v.sigma_s * s);
                const double var_p = (v.sigma_p * p) * (v.sigma_p * p);
                const double abs_cross = std::abs(v.rho * v.sigma_s * v.sigma_p * s * p);
                const double h2 = spec.dt / (2.0 * spec.delta * spec.delta);
                const double stay = 1.0 - spec.dt / spec.delta * (std::abs(b1) + std::abs(b2)) -
                                    2.0 * h2 * (var_s + var_p - abs_cross);
                const double worst = std::min({stay, h2 * (var_s - abs_cross), h2 * (var_p - abs_cross)});
                if (worst < report.worst_probability) {
                    report.worst_probability = worst;
                    if (worst < -kProbTol) {
                        report.ok = false;
                        char buf[160];
                        std::snprintf(buf, sizeof buf, "node (s=%g, p=%g), control (%g, %g)", s, p,
                                      pi[0], pi[1]);
                        report.where = buf;
                    }
                }
            }
        }
    }
    return report;
}

double max_stable_dt(const PowerProblem& prob, const GridSpec& spec) {
    spec.validate();
    const TwoStockView& v = prob.view();
    const auto controls = drift_extremes(prob, control_lattice(prob, spec.control_points));
    double best = std::numeric_limits<double>::infinity();
    const double d = spec.delta;
    for (int i = 0; i < spec.n_s(); ++i) {
        for (int j = 0; j < spec.n_p(); ++j) {
            const double s = i * d;
            const double p = j * d;
            const double var_s = (v.sigma_s * s) * (v.sigma_s * s);
            const double var_p = (v.sigma_p * p) * (v.sigma_p * p);
            const double abs_cross = std::abs(v.rho * v.sigma_s * v.sigma_p * s * p);
            if (var_s < abs_cross || var_p < abs_cross) return 0.0;
            for (const auto& pi : controls) {
                const auto drift = drift_coefficients(v, prob.gamma(), pi);
                const double rate = (std::abs(drift[0] * s) + std::abs(drift[1] * p)) / d +
                                    (var_s + var_p - abs_cross) / (d * d);
                if (rate > 0.0) best = std::min(best, 1.0 / rate);
            }
        }
    }
    return best;
}

GridSpec with_stable_dt(const PowerProblem& prob, GridSpec spec) {
    const int nominal_steps = spec.n_steps();
    const double limit = max_stable_dt(prob, spec);
    if (!(limit > 0.0)) throw CflViolation("grid: no time step satisfies the CFL condition at this delta");
    if (spec.dt <= limit) return spec;
    const int substeps = static_cast<int>(std::ceil(spec.dt / limit * (1.0 + 1e-12)));
    spec.dt = spec.horizon / (static_cast<double>(nominal_steps) * substeps);
    return spec;
}

PowerSolver::PowerSolver(PowerProblem prob, GridSpec spec)
    : prob_(std::move(prob)), spec_(spec), n_s_(spec.n_s()), n_p_(spec.n_p()) {
    spec_.validate();
    lattice_ = control_lattice(prob_, spec_.control_points);
    if (lattice_.empty()) throw std::invalid_argument("power solver: no admissible control on the lattice");
    const CflReport cfl = check_cfl(prob_, spec_);
    if (!cfl.ok) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "CFL violation (probability %.6g) at ", cfl.worst_probability);
        throw CflViolation(buf + cfl.where);
    }
    h_s_.resize(static_cast<std::size_t>(n_s_) * n_p_);
    h_p_.resize(h_s_.size());
    for (int i = 0; i < n_s_; ++i)
        for (int j = 0; j < n_p_; ++j) {
            const auto h = prob_.node_intensities(i * spec_.delta, j * spec_.delta);
            h_s_[i * n_p_ + j] = h[0];
            h_p_[i * n_p_ + j] = h[1];
        }
}

double PowerSolver::reference_value(int i, int j, std::array<double, 2> pi,
                                    const std::vector<double>& next, double t) const {
    const double s = i * spec_.delta;
    const double p = j * spec_.delta;
    const Transition tr = transition_probs(s, p, pi, spec_.delta, spec_.dt, prob_.view(), prob_.gamma());
    const DiscountSource ds = discount_and_source(s, p, pi, t, prob_, spec_.horizon);
    double expected = 0.0;
    for (std::size_t k = 0; k < tr.prob.size(); ++k) {
        int ni = i + Transition::offsets[k][0];
        int nj = j + Transition::offsets[k][1];
        // Moves leaving the lattice stay put.
        if (ni < 0 || ni >= n_s_ || nj < 0 || nj >= n_p_) {
            ni = i;
            nj = j;
        }
        expected += tr.prob[k] * next[ni * n_p_ + nj];
    }
    return ds.g * spec_.dt + std::exp(-ds.beta * spec_.dt) * expected;
}

namespace {

template <class Value>
std::array<double, 2> refine_around(const PowerProblem& prob, const GridSpec& spec,
                                    std::array<double, 2> best, double& best_value, Value&& value) {
    const AdmissibleBox& b = prob.box();
    const double cs = (b.upper[0] - b.lower[0]) / (spec.control_points - 1) / 4.0;
    const double cp = (b.upper[1] - b.lower[1]) / (spec.control_points - 1) / 4.0;
    const std::array<double, 2> centre = best;
    for (int a = -4; a <= 4; ++a) {
        for (int c = -4; c <= 4; ++c) {
            if (a == 0 && c == 0) continue;
            const std::array<double, 2> pi{centre[0] + a * cs, centre[1] + c * cp};
            if (!in_admissible_set(prob, pi)) continue;
            const double v = value(pi);
            if (v > best_value) {
                best_value = v;
                best = pi;
            }
        }
    }
    return best;
}

}  // namespace

SliceResult PowerSolver::step_reference(const std::vector<double>& next, double t) const {
    SliceResult out;
    const std::size_t nodes = static_cast<std::size_t>(n_s_) * n_p_;
    out.f.resize(nodes);
    out.control_s.resize(nodes);
    out.control_p.resize(nodes);
    for (int i = 0; i < n_s_; ++i) {
        for (int j = 0; j < n_p_; ++j) {
            double best_value = -std::numeric_limits<double>::infinity();
            std::array<double, 2> best{};
            for (const auto& pi : lattice_) {
                const double v = reference_value(i, j, pi, next, t);
                if (v > best_value) {
                    best_value = v;
                    best = pi;
                }
            }
            if (spec_.refine)
                best = refine_around(prob_, spec_, best, best_value,
                                     [&](std::array<double, 2> pi) { return reference_value(i, j, pi, next, t); });
            const std::size_t idx = static_cast<std::size_t>(i) * n_p_ + j;
            out.f[idx] = best_value;
            out.control_s[idx] = best[0];
            out.control_p[idx] = best[1];
        }
    }
    return out;
}

SliceResult PowerSolver::step_fast(const std::vector<double>& next, double t) const {
    const TwoStockView& v = prob_.view();
    const double gamma = prob_.gamma();
    const double dt = spec_.dt;
    const double delta = spec_.delta;
    const double h1 = dt / delta;
    const double h2 = dt / (2.0 * delta * delta);
    const double g1_s = g1(t, spec_.horizon, v.r, v.mu_s, v.sigma_s, gamma);
    const double g1_p = g1(t, spec_.horizon, v.r, v.mu_p, v.sigma_p, gamma);

    // Control-only factors: drift slopes, the control part of the discount,
    // and the post-default wealth factors raised to gamma.
    struct ControlTerms {
        double a1, a2, discount, w_s, w_p;
    };
    auto terms_of = [&](std::array<double, 2> pi) {
        const auto drift = drift_coefficients(v, gamma, pi);
        const auto margin = column_margins(v, pi);
        const double quad = v.sigma_s * v.sigma_s * pi[0] * pi[0] +
                            2.0 * v.rho * v.sigma_s * v.sigma_p * pi[0] * pi[1] +
                            v.sigma_p * v.sigma_p * pi[1] * pi[1];
        const double linear = v.theta_s() * pi[0] + v.theta_p() * pi[1];
        const double control_beta = -v.r * gamma - gamma * (linear + 0.5 * (gamma - 1.0) * quad);
        return ControlTerms{drift[0], drift[1], std::exp(-control_beta * dt),
                            std::pow(margin[0], gamma), std::pow(margin[1], gamma)};
    };
    std::vector<ControlTerms> terms;
    terms.reserve(lattice_.size());
    for (const auto& pi : lattice_) terms.push_back(terms_of(pi));

    const std::size_t nodes = static_cast<std::size_t>(n_s_) * n_p_;
    SliceResult out;
    out.f.resize(nodes);
    out.control_s.resize(nodes);
    out.control_p.resize(nodes);

#pragma omp parallel for schedule(static)
    for (int i = 0; i < n_s_; ++i) {
        for (int j = 0; j < n_p_; ++j) {
            const std::size_t idx = static_cast<std::size_t>(i) * n_p_ + j;
            const double s = i * delta;
            const double p = j * delta;
            const double var_s = (v.sigma_s * s) * (v.sigma_s * s);
            const double var_p = (v.sigma_p * p) * (v.sigma_p * p);
            const double cross = v.rho * v.sigma_s * v.sigma_p * s * p;
            const double abs_cross = std::abs(cross);
            const double hazard_discount = std::exp(-(h_s_[idx] + h_p_[idx]) * dt);
            const double src_s = h_s_[idx] * g1_p * dt;
            const double src_p = h_p_[idx] * g1_s * dt;

            std::array<double, 9> nv;
            for (std::size_t k = 0; k < 9; ++k) {
                int ni = i + Transition::offsets[k][0];
                int nj = j + Transition::offsets[k][1];
                if (ni < 0 || ni >= n_s_ || nj < 0 || nj >= n_p_) {
                    ni = i;
                    nj = j;
                }
                nv[k] = next[static_cast<std::size_t>(ni) * n_p_ + nj];
            }
            const double diff_s = h2 * (var_s - abs_cross);
            const double diff_p = h2 * (var_p - abs_cross);
            const double stay_base = 1.0 - 2.0 * h2 * (var_s + var_p - abs_cross);
            const double diag = h2 * (positive_part(cross) * (nv[5] + nv[6]) +
                                      negative_part(cross) * (nv[7] + nv[8]));

            auto evaluate = [&](const ControlTerms& c) {
                const double b1 = c.a1 * s;
                const double b2 = c.a2 * p;
                const double up_s = h1 * positive_part(b1) + diff_s;
                const double dn_s = h1 * negative_part(b1) + diff_s;
                const double up_p = h1 * positive_part(b2) + diff_p;
                const double dn_p = h1 * negative_part(b2) + diff_p;
                const double stay = stay_base - h1 * (std::abs(b1) + std::abs(b2));
                const double expected = stay * nv[0] + up_s * nv[1] + dn_s * nv[2] + up_p * nv[3] +
                                        dn_p * nv[4] + diag;
                return src_s * c.w_s + src_p * c.w_p + c.discount * hazard_discount * expected;
            };

            double best_value = -std::numeric_limits<double>::infinity();
            std::array<double, 2> best{};
            for (std::size_t c = 0; c < terms.size(); ++c) {
                const double val = evaluate(terms[c]);
                if (val > best_value) {
                    best_value = val;
                    best = lattice_[c];
                }
            }
            if (spec_.refine)
                best = refine_around(prob_, spec_, best, best_value,
                                     [&](std::array<double, 2> pi) { return evaluate(terms_of(pi)); });
            out.f[idx] = best_value;
            out.control_s[idx] = best[0];
            out.control_p[idx] = best[1];
        }
    }
    return out;
}

SliceResult PowerSolver::step(const std::vector<double>& next, double t, Backend backend) const {
    if (next.size() != static_cast<std::size_t>(n_s_) * n_p_)
        throw std::invalid_argument("power solver: slice size mismatch");
    return backend == Backend::serial ? step_reference(next, t) : step_fast(next, t);
}

ValueGrid PowerSolver::solve(Backend backend) const {
    ValueGrid grid;
    grid.spec = spec_;
    grid.gamma = prob_.gamma();
    grid.n_s = n_s_;
    grid.n_p = n_p_;
    const int steps = spec_.n_steps();
    grid.n_slices = steps + 1;
    const std::size_t nodes = static_cast<std::size_t>(n_s_) * n_p_;
    grid.f.assign(nodes * grid.n_slices, 1.0);
    grid.control_s.assign(nodes * grid.n_slices, 0.0);
    grid.control_p.assign(nodes * grid.n_slices, 0.0);

    std::vector<double> next(nodes, 1.0);
    for (int k = steps - 1; k >= 0; --k) {
        SliceResult slice = step(next, k * spec_.dt, backend);
        for (std::size_t idx = 0; idx < nodes; ++idx) {
            if (!std::isfinite(slice.f[idx]) || !(slice.f[idx] > 0.0))
                throw std::runtime_error("power solver: non-finite or nonpositive value at slice " +
                                         std::to_string(k));
        }
        std::copy(slice.f.begin(), slice.f.end(), grid.f.begin() + k * nodes);
        std::copy(slice.control_s.begin(), slice.control_s.end(), grid.control_s.begin() + k * nodes);
        std::copy(slice.control_p.begin(), slice.control_p.end(), grid.control_p.begin() + k * nodes);
        next = std::move(slice.f);
    }
    // Terminal slice carries no decision; repeat the last one for lookups.
    std::copy(grid.control_s.begin() + (steps - 1) * nodes, grid.control_s.begin() + steps * nodes,
              grid.control_s.begin() + steps * nodes);
    std::copy(grid.control_p.begin() + (steps - 1) * nodes, grid.control_p.begin() + steps * nodes,
              grid.control_p.begin() + steps * nodes);
    return grid;
}

ValueGrid solve_power_value(const PowerProblem& prob, const GridSpec& spec, Backend backend) {
    return PowerSolver(prob, spec).solve(backend);
}

void write_value_grid_csv(std::ostream& out, const ValueGrid& grid, int slice_stride) {
    const int steps = grid.n_slices - 1;
    if (slice_stride < 1 || steps % slice_stride != 0)
        throw std::invalid_argument("value grid csv: stride must divide the step count");
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "# horizon=%.17g\n# delta=%.17g\n# dt=%.17g\n# s_max=%.17g\n# p_max=%.17g\n"
                  "# gamma=%.17g\n# control_points=%d\n# refine=%d\n",
                  grid.spec.horizon, grid.spec.delta, grid.spec.dt * slice_stride, grid.spec.s_max, grid.spec.p_max,
                  grid.gamma, grid.spec.control_points, grid.spec.refine ? 1 : 0);
    out << buf << "slice,t,s,p,f,pi_S,pi_P\n";
    for (int k = 0; k < grid.n_slices; k += slice_stride)
        for (int i = 0; i < grid.n_s; ++i)
            for (int j = 0; j < grid.n_p; ++j) {
                const std::size_t idx = grid.index(k, i, j);
                std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", k / slice_stride,
                              grid.time(k), i * grid.spec.delta, j * grid.spec.delta, grid.f[idx],
                              grid.control_s[idx], grid.control_p[idx]);
                out << buf;
            }
}

ValueGrid read_value_grid_csv(std::istream& in) {
    ValueGrid grid;
    std::string line;
    auto header_value = [&](const std::string& key) {
        if (!std::getline(in, line) || line.rfind("# " + key + "=", 0) != 0)
            throw std::runtime_error("value grid csv: expected header '" + key + "'");
        return std::stod(line.substr(key.size() + 3));
    };
    grid.spec.horizon = header_value("horizon");
    grid.spec.delta = header_value("delta");
    grid.spec.dt = header_value("dt");
    grid.spec.s_max = header_value("s_max");
    grid.spec.p_max = header_value("p_max");
    grid.gamma = header_value("gamma");
    grid.spec.control_points = static_cast<int>(header_value("control_points"));
    grid.spec.refine = header_value("refine") != 0.0;
    grid.spec.validate();
    grid.n_s = grid.spec.n_s();
    grid.n_p = grid.spec.n_p();
    grid.n_slices = grid.spec.n_steps() + 1;
    const std::size_t total = static_cast<std::size_t>(grid.n_slices) * grid.n_s * grid.n_p;
    grid.f.assign(total, 0.0);
    grid.control_s.assign(total, 0.0);
    grid.control_p.assign(total, 0.0);
    if (!std::getline(in, line)) throw std::runtime_error("value grid csv: missing column header");
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        int k = 0;
        double t = 0, s = 0, p = 0, f = 0, cs = 0, cp = 0;
        if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf,%lf", &k, &t, &s, &p, &f, &cs, &cp) != 7)
            throw std::runtime_error("value grid csv: malformed row");
        const int i = static_cast<int>(std::lround(s / grid.spec.delta));
        const int j = static_cast<int>(std::lround(p / grid.spec.delta));
        if (k < 0 || k >= grid.n_slices || i < 0 || i >= grid.n_s || j < 0 || j >= grid.n_p)
            throw std::runtime_error("value grid csv: row outside the lattice");
        const std::size_t idx = grid.index(k, i, j);
        grid.f[idx] = f;
        grid.control_s[idx] = cs;
        grid.control_p[idx] = cp;
        ++rows;
    }
    if (rows != total) throw std::runtime_error("value grid csv: row count mismatch");
    return grid;
}

PowerStrategy::PowerStrategy(std::shared_ptr<const ValueGrid> grid, const PowerProblem& prob)
    : grid_(std::move(grid)), box_(prob.box()) {
    if (!grid_) throw std::invalid_argument("power strategy: null grid");
    if (grid_->n_s < 2 || grid_->n_p < 2) throw std::invalid_argument("power strategy: grid too small");
    s_alone_ = merton_power_control(prob, 0);
    p_alone_ = merton_power_control(prob, 1);
}

void PowerStrategy::allocate(double t, double, std::span<const double> prices, DefaultState state,
                             std::span<double> pi) const {
    pi[0] = 0.0;
    pi[1] = 0.0;
    switch (state.bits()) {
        case 1u: pi[1] = p_alone_; return;
        case 2u: pi[0] = s_alone_; return;
        case 3u: return;
        default: break;
    }
    const ValueGrid& g = *grid_;
    const int k = std::clamp(static_cast<int>(std::lround(t / g.spec.dt)), 0, g.n_slices - 2);
    double x = prices[0] / g.spec.delta;
    double y = prices[1] / g.spec.delta;
    const double x_max = g.n_s - 1;
    const double y_max = g.n_p - 1;
    if (x < 0.0 || x > x_max || y < 0.0 || y > y_max) {
        out_of_domain_.fetch_add(1, std::memory_order_relaxed);
        x = std::clamp(x, 0.0, x_max);
        y = std::clamp(y, 0.0, y_max);
    }
    const int i = std::min(static_cast<int>(x), g.n_s - 2);
    const int j = std::min(static_cast<int>(y), g.n_p - 2);
    const double fx = x - i;
    const double fy = y - j;
    auto blend = [&](const std::vector<double>& c) {
        const double lo = (1.0 - fy) * c[g.index(k, i, j)] + fy * c[g.index(k, i, j + 1)];
        const double hi = (1.0 - fy) * c[g.index(k, i + 1, j)] + fy * c[g.index(k, i + 1, j + 1)];
        return (1.0 - fx) * lo + fx * hi;
    };
    pi[0] = blend(g.control_s);
    pi[1] = blend(g.control_p);
}

std::shared_ptr<const PowerStrategy> make_power_strategy(std::shared_ptr<const ValueGrid> grid,
                                                         const PowerProblem& prob) {
    return std::make_shared<const PowerStrategy>(std::move(grid), prob);
}

}  // namespace contagion
