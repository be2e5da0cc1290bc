#include "contagion/logopt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

namespace contagion {

namespace {

constexpr double kAcceptTol = 1e-8;
constexpr double kNeg = -std::numeric_limits<double>::infinity();

struct LocalModel {
    double value;
    std::array<double, 2> grad;
    double h_ss, h_sp, h_pp;
};

// G with gradient and Hessian; value is -inf outside the log domain.
LocalModel local_model(const TwoStockView& v, double h_s, double h_p, std::array<double, 2> pi) {
    const double ps = pi[0];
    const double pp = pi[1];
    const double a1 = 1.0 - ps - v.loss_p * pp;
    const double a2 = 1.0 - v.loss_s * ps - pp;
    if (!(a1 > 0.0) || !(a2 > 0.0)) return {kNeg, {0.0, 0.0}, 0.0, 0.0, 0.0};
    const double vs = v.sigma_s * v.sigma_s;
    const double vp = v.sigma_p * v.sigma_p;
    const double cov = v.rho * v.sigma_s * v.sigma_p;
    LocalModel m;
    m.value = -0.5 * (vs * ps * ps + 2.0 * cov * ps * pp + vp * pp * pp) + v.theta_s() * ps +
              v.theta_p() * pp;
    if (h_s != 0.0) m.value += h_s * std::log(a1);
    if (h_p != 0.0) m.value += h_p * std::log(a2);
    const double q1 = h_s / a1;
    const double q2 = h_p / a2;
    m.grad[0] = v.theta_s() - vs * ps - cov * pp - q1 - v.loss_s * q2;
    m.grad[1] = v.theta_p() - vp * pp - cov * ps - v.loss_p * q1 - q2;
    const double c1 = q1 / a1;
    const double c2 = q2 / a2;
    m.h_ss = -vs - c1 - v.loss_s * v.loss_s * c2;
    m.h_sp = -cov - v.loss_p * c1 - v.loss_s * c2;
    m.h_pp = -vp - v.loss_p * v.loss_p * c1 - c2;
    return m;
}

// Damped Newton over the free coordinates (mask); fixed coordinates keep
// their starting value. Steps are halved until G does not decrease.
std::array<double, 2> newton(const TwoStockView& v, double h_s, double h_p,
                             std::array<double, 2> x, std::array<bool, 2> free) {
    LocalModel m = local_model(v, h_s, h_p, x);
    for (int iter = 0; iter < 100; ++iter) {
        std::array<double, 2> step{0.0, 0.0};
        if (free[0] && free[1]) {
            const double det = m.h_ss * m.h_pp - m.h_sp * m.h_sp;
            if (!(det > 0.0)) break;
            step[0] = -(m.h_pp * m.grad[0] - m.h_sp * m.grad[1]) / det;
            step[1] = -(-m.h_sp * m.grad[0] + m.h_ss * m.grad[1]) / det;
        } else if (free[0]) {
            step[0] = -m.grad[0] / m.h_ss;
        } else if (free[1]) {
            step[1] = -m.grad[1] / m.h_pp;
        }
        const double gnorm = std::max(free[0] ? std::abs(m.grad[0]) : 0.0,
                                      free[1] ? std::abs(m.grad[1]) : 0.0);
        if (gnorm < 1e-14) break;
        double t = 1.0;
        bool moved = false;
        for (int halving = 0; halving < 60; ++halving, t *= 0.5) {
            const std::array<double, 2> cand{x[0] + t * step[0], x[1] + t * step[1]};
            const LocalModel cm = local_model(v, h_s, h_p, cand);
            if (cm.value >= m.value) {
                moved = cand != x;
                x = cand;
                m = cm;
                break;
            }
        }
        if (!moved) break;
    }
    return x;
}

struct Face {
    KtCase kt_case;
    int s_bound;  // -1 lower, 0 free, +1 upper
    int p_bound;
};

constexpr std::array<Face, 9> kFaces{{
    {KtCase::interior, 0, 0},
    {KtCase::s_low, -1, 0},
    {KtCase::s_high, 1, 0},
    {KtCase::p_low, 0, -1},
    {KtCase::p_high, 0, 1},
    {KtCase::low_low, -1, -1},
    {KtCase::low_high, -1, 1},
    {KtCase::high_low, 1, -1},
    {KtCase::high_high, 1, 1},
}};

std::optional<KTSolution> try_face(const TwoStockView& v, const AdmissibleBox& box, double h_s,
                                   double h_p, const Face& face) {
    const std::array<double, 2> lo{box.lower[0], box.lower[1]};
    const std::array<double, 2> hi{box.upper[0], box.upper[1]};
    const std::array<int, 2> bound{face.s_bound, face.p_bound};
    const std::array<double, 2> merton{v.theta_s() / (v.sigma_s * v.sigma_s),
                                       v.theta_p() / (v.sigma_p * v.sigma_p)};
    std::array<double, 2> x{};
    std::array<bool, 2> free{};
    for (int i = 0; i < 2; ++i) {
        free[i] = bound[i] == 0;
        x[i] = bound[i] < 0 ? lo[i] : bound[i] > 0 ? hi[i] : std::clamp(merton[i], lo[i], hi[i]);
    }
    if (free[0] || free[1]) x = newton(v, h_s, h_p, x, free);

    const LocalModel m = local_model(v, h_s, h_p, x);
    if (m.value == kNeg) return std::nullopt;

    KTSolution sol;
    sol.kt_case = face.kt_case;
    sol.residual = 0.0;
    for (int i = 0; i < 2; ++i) {
        if (free[i]) {
            const double slack = 1e-12 * std::max(1.0, hi[i] - lo[i]);
            if (!(x[i] > lo[i] - slack && x[i] < hi[i] + slack)) return std::nullopt;
            if (lo[i] == hi[i]) return std::nullopt;  // no interior on a degenerate side
            x[i] = std::clamp(x[i], lo[i], hi[i]);
            sol.residual = std::max(sol.residual, std::abs(m.grad[i]));
        } else if (bound[i] < 0) {
            sol.multipliers[2 * i] = -m.grad[i];
        } else {
            sol.multipliers[2 * i + 1] = m.grad[i];
        }
    }
    if (sol.residual > kAcceptTol) return std::nullopt;
    for (double mult : sol.multipliers)
        if (mult < -kAcceptTol) return std::nullopt;
    sol.pi = x;
    sol.objective = local_model(v, h_s, h_p, x).value;
    return sol;
}

KTSolution grid_fallback(const TwoStockView& v, const AdmissibleBox& box, double h_s, double h_p) {
    std::array<double, 2> lo{box.lower[0], box.lower[1]};
    std::array<double, 2> hi{box.upper[0], box.upper[1]};
    std::array<double, 2> best{lo[0], lo[1]};
    double best_value = kNeg;
    auto scan = [&](int points) {
        const double ds = (hi[0] - lo[0]) / (points - 1);
        const double dp = (hi[1] - lo[1]) / (points - 1);
        for (int i = 0; i < points; ++i)
            for (int j = 0; j < points; ++j) {
                const std::array<double, 2> x{lo[0] + i * ds, lo[1] + j * dp};
                const double g = local_model(v, h_s, h_p, x).value;
                if (g > best_value) {
                    best_value = g;
                    best = x;
                }
            }
        return std::array<double, 2>{ds, dp};
    };
    std::array<double, 2> cell = scan(201);
    for (int round = 0; round < 2; ++round) {
        for (int i = 0; i < 2; ++i) {
            lo[i] = std::max(box.lower[i], best[i] - cell[i]);
            hi[i] = std::min(box.upper[i], best[i] + cell[i]);
        }
        cell = scan(21);
    }
    KTSolution sol;
    sol.kt_case = KtCase::grid_fallback;
    sol.pi = best;
    sol.objective = best_value;
    const LocalModel m = local_model(v, h_s, h_p, best);
    for (int i = 0; i < 2; ++i) {
        const bool at_lo = best[i] <= box.lower[i];
        const bool at_hi = best[i] >= box.upper[i];
        if (at_lo) sol.multipliers[2 * i] = std::max(0.0, -m.grad[i]);
        else if (at_hi) sol.multipliers[2 * i + 1] = std::max(0.0, m.grad[i]);
        else sol.residual = std::max(sol.residual, std::abs(m.grad[i]));
    }
    return sol;
}

}  // namespace

TwoStockView TwoStockView::from(const MarketParams& params) {
    if (params.n() != 2) throw std::invalid_argument("two-stock view needs n = 2");
    return {params.r,        params.mu[0],     params.mu[1],     params.sigma[0],
            params.sigma[1], params.rho(0, 1), params.loss(0, 1), params.loss(1, 0)};
}

LogControlProblem::LogControlProblem(MarketParams params, IntensityModel intensity,
                                     AdmissibleBox box)
    : params_(std::move(params)), intensity_(std::move(intensity)), box_(std::move(box)) {
    if (params_.n() != 2) throw std::invalid_argument("log control problem needs two stocks");
    params_.validate();
    intensity_.validate();
    if (intensity_.n() != 2) throw std::invalid_argument("log control problem: intensity dimension");
    const BoxReport report = validate_box(box_, params_);
    if (!report.ok)
        throw std::invalid_argument("log control problem: box is not admissible (worst margin " +
                                    std::to_string(report.worst_margin) + ")");
    view_ = TwoStockView::from(params_);
}

std::array<double, 2> LogControlProblem::pre_default_intensities(double s, double p) const {
    const std::array<double, 2> prices{s, p};
    const DefaultState none = DefaultState::none(2);
    return {intensity_.rate(0, none, prices), intensity_.rate(1, none, prices)};
}

std::string_view to_string(KtCase c) {
    switch (c) {
        case KtCase::interior: return "interior";
        case KtCase::s_low: return "S-low";
        case KtCase::s_high: return "S-high";
        case KtCase::p_low: return "P-low";
        case KtCase::p_high: return "P-high";
        case KtCase::low_low: return "S-low/P-low";
        case KtCase::low_high: return "S-low/P-high";
        case KtCase::high_low: return "S-high/P-low";
        case KtCase::high_high: return "S-high/P-high";
        case KtCase::grid_fallback: return "grid-fallback";
    }
    return "?";
}

double g_objective(const TwoStockView& v, double h_s, double h_p, std::array<double, 2> pi) {
    const LocalModel m = local_model(v, h_s, h_p, pi);
    if (m.value == kNeg) throw std::domain_error("G: log argument must be positive");
    return m.value;
}

double g_objective(const LogControlProblem& prob, double s, double p, std::array<double, 2> pi) {
    const auto h = prob.pre_default_intensities(s, p);
    return g_objective(prob.view(), h[0], h[1], pi);
}

std::array<double, 2> g_gradient(const TwoStockView& v, double h_s, double h_p,
                                 std::array<double, 2> pi) {
    const LocalModel m = local_model(v, h_s, h_p, pi);
    if (m.value == kNeg) throw std::domain_error("G: log argument must be positive");
    return m.grad;
}

KTSolution solve_kt(const TwoStockView& v, const AdmissibleBox& box, double h_s, double h_p) {
    std::optional<KTSolution> best;
    for (const Face& face : kFaces) {
        auto sol = try_face(v, box, h_s, h_p, face);
        if (sol && (!best || sol->objective > best->objective)) best = sol;
    }
    if (best) return *best;
    return grid_fallback(v, box, h_s, h_p);
}

KTSolution solve_pre_default_control(const LogControlProblem& prob, double s, double p) {
    if (!(s > 0.0 && p > 0.0)) throw std::domain_error("pre-default control: prices must be > 0");
    const auto h = prob.pre_default_intensities(s, p);
    return solve_kt(prob.view(), prob.box(), h[0], h[1]);
}

double single_survivor_control(double theta, double sigma, double h, double lower, double upper) {
    const double var = sigma * sigma;
    const double root =
        (theta + var - std::sqrt((theta - var) * (theta - var) + 4.0 * var * h)) / (2.0 * var);
    return std::clamp(root, lower, upper);
}

double solve_single_survivor_control(const LogControlProblem& prob, double price,
                                     DefaultState state) {
    if (state.n() != 2 || state.survivor_count() != 1)
        throw std::invalid_argument("single-survivor control: state must leave one stock");
    if (!(price > 0.0)) throw std::domain_error("single-survivor control: price must be > 0");
    const std::size_t i = state.survives(0) ? 0 : 1;
    std::array<double, 2> prices{0.0, 0.0};
    prices[i] = price;
    const double h = prob.intensity().rate(i, state, prices);
    const MarketParams& mp = prob.params();
    const double upper = std::min(prob.box().upper[i], 1.0 - prob.box().eps_a);
    return single_survivor_control(mp.theta(i), mp.sigma[i], h, prob.box().lower[i], upper);
}

LogStrategy::LogStrategy(LogControlProblem prob, LogMode mode)
    : prob_(std::move(prob)), mode_(mode) {
    if (mode_.kind == LogMode::Kind::fixed_intensity) {
        if (!(mode_.h_bar >= 0.0)) throw std::invalid_argument("log strategy: h_bar must be >= 0");
        const KTSolution sol = solve_kt(prob_.view(), prob_.box(), mode_.h_bar, mode_.h_bar);
        if (sol.fallback()) fallbacks_.fetch_add(1);
        fixed_pre_ = sol.pi;
        const MarketParams& mp = prob_.params();
        const AdmissibleBox& b = prob_.box();
        fixed_s_alone_ = single_survivor_control(mp.theta(0), mp.sigma[0], mode_.h_bar, b.lower[0],
                                                 std::min(b.upper[0], 1.0 - b.eps_a));
        fixed_p_alone_ = single_survivor_control(mp.theta(1), mp.sigma[1], mode_.h_bar, b.lower[1],
                                                 std::min(b.upper[1], 1.0 - b.eps_a));
    }
}

void LogStrategy::allocate(double, double, std::span<const double> prices, DefaultState state,
                           std::span<double> pi) const {
    pi[0] = 0.0;
    pi[1] = 0.0;
    const bool fixed = mode_.kind == LogMode::Kind::fixed_intensity;
    switch (state.bits()) {
        case 0u: {
            if (fixed) {
                pi[0] = fixed_pre_[0];
                pi[1] = fixed_pre_[1];
                return;
            }
            const KTSolution sol = solve_pre_default_control(prob_, prices[0], prices[1]);
            if (sol.fallback()) fallbacks_.fetch_add(1, std::memory_order_relaxed);
            pi[0] = sol.pi[0];
            pi[1] = sol.pi[1];
            return;
        }
        case 1u:  // S defaulted, P alone
            pi[1] = fixed ? fixed_p_alone_ : solve_single_survivor_control(prob_, prices[1], state);
            return;
        case 2u:  // P defaulted, S alone
            pi[0] = fixed ? fixed_s_alone_ : solve_single_survivor_control(prob_, prices[0], state);
            return;
        default:
            return;
    }
}

std::shared_ptr<const LogStrategy> make_log_strategy(const LogControlProblem& prob, LogMode mode) {
    return std::make_shared<const LogStrategy>(prob, mode);
}

}  // namespace contagion
