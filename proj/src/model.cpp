#include "contagion/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace contagion {

SquareMatrix SquareMatrix::identity(std::size_t n) {
    SquareMatrix m(n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

SquareMatrix cholesky_lower(const SquareMatrix& a) {
    const std::size_t n = a.size();
    SquareMatrix l(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double sum = a(i, j);
            for (std::size_t k = 0; k < j; ++k) sum -= l(i, k) * l(j, k);
            if (i == j) {
                if (!(sum > 0.0)) throw std::domain_error("cholesky: matrix is not positive definite");
                l(i, i) = std::sqrt(sum);
            } else {
                l(i, j) = sum / l(j, j);
            }
        }
    }
    return l;
}

MarketParams MarketParams::two_stock(double r, double mu_s, double mu_p, double sigma_s,
                                     double sigma_p, double rho, double loss_s, double loss_p) {
    MarketParams m;
    m.r = r;
    m.mu = {mu_s, mu_p};
    m.sigma = {sigma_s, sigma_p};
    m.rho = SquareMatrix::identity(2);
    m.rho(0, 1) = m.rho(1, 0) = rho;
    m.loss = SquareMatrix::identity(2);
    m.loss(0, 1) = loss_s;
    m.loss(1, 0) = loss_p;
    return m;
}

void MarketParams::validate(bool allow_zero_volatility) const {
    const std::size_t k = n();
    if (k == 0) throw std::invalid_argument("market: no stocks");
    if (k > 16) throw std::invalid_argument("market: at most 16 stocks are supported");
    if (sigma.size() != k || rho.size() != k || loss.size() != k)
        throw std::invalid_argument("market: dimension mismatch");
    for (std::size_t i = 0; i < k; ++i) {
        const bool sigma_ok = allow_zero_volatility ? sigma[i] >= 0.0 : sigma[i] > 0.0;
        if (!sigma_ok || !std::isfinite(sigma[i]))
            throw std::invalid_argument("market: sigma must be finite and positive");
        if (rho(i, i) != 1.0) throw std::invalid_argument("market: rho diagonal must be 1");
        if (loss(i, i) != 1.0) throw std::invalid_argument("market: loss diagonal must be 1");
        for (std::size_t j = 0; j < k; ++j) {
            if (rho(i, j) != rho(j, i)) throw std::invalid_argument("market: rho must be symmetric");
            if (i != j && !(loss(i, j) >= 0.0 && loss(i, j) < 1.0))
                throw std::invalid_argument("market: off-diagonal losses must lie in [0, 1)");
        }
    }
    try {
        (void)cholesky_lower(rho);
    } catch (const std::domain_error&) {
        throw std::invalid_argument("market: rho is not positive definite");
    }
}

DefaultState::DefaultState(std::size_t n, std::uint32_t bits) : n_(n), bits_(bits) {
    if (n > 16) throw std::invalid_argument("default state: at most 16 stocks");
    if (n < 32 && (bits >> n) != 0u) throw std::invalid_argument("default state: bit out of range");
}

std::size_t DefaultState::survivor_count() const {
    std::size_t c = 0;
    for (std::size_t i = 0; i < n_; ++i) c += survives(i) ? 1 : 0;
    return c;
}

std::vector<std::size_t> DefaultState::survivors() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < n_; ++i)
        if (survives(i)) out.push_back(i);
    return out;
}

DefaultState DefaultState::neighbor(std::size_t i) const {
    if (i >= n_) throw std::out_of_range("default state: stock index");
    if (defaulted(i)) throw std::logic_error("default state: stock already defaulted");
    return {n_, bits_ | (1u << i)};
}

IntensityModel::IntensityModel(std::size_t n) : n_(n), table_(n * (std::size_t{1} << n)) {}

IntensityModel IntensityModel::state_independent(std::vector<IntensityFamily> per_stock) {
    IntensityModel m(per_stock.size());
    const std::uint32_t states = 1u << m.n_;
    for (std::size_t i = 0; i < m.n_; ++i)
        for (std::uint32_t z = 0; z < states; ++z) m.table_[i * states + z] = per_stock[i];
    return m;
}

IntensityModel IntensityModel::constant(std::size_t n, double rate, double cap) {
    return state_independent(std::vector<IntensityFamily>(n, ConstantRate{rate, cap}));
}

IntensityModel IntensityModel::power_clamp(std::size_t n, double h0, double k_own, double k_cross,
                                           double alpha, double h_min, double h_max) {
    std::vector<IntensityFamily> fams;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> w(n, k_cross);
        w[i] = k_own;
        fams.emplace_back(PowerClamp{h0, std::move(w), alpha, h_min, h_max});
    }
    return state_independent(std::move(fams));
}

IntensityModel IntensityModel::reciprocal(std::size_t n, double c, double cap) {
    return state_independent(std::vector<IntensityFamily>(n, Reciprocal{c, cap}));
}

void IntensityModel::set(std::size_t stock, DefaultState state, IntensityFamily family) {
    if (stock >= n_ || state.n() != n_) throw std::out_of_range("intensity: index");
    table_[stock * (std::size_t{1} << n_) + state.bits()] = std::move(family);
}

const IntensityFamily& IntensityModel::family(std::size_t stock, DefaultState state) const {
    if (stock >= n_ || state.n() != n_) throw std::out_of_range("intensity: index");
    return table_[stock * (std::size_t{1} << n_) + state.bits()];
}

double IntensityModel::rate(std::size_t stock, DefaultState state,
                            std::span<const double> prices) const {
    return evaluate(stock, state, prices, false);
}

double IntensityModel::rate_on_closure(std::size_t stock, DefaultState state,
                                       std::span<const double> prices) const {
    return evaluate(stock, state, prices, true);
}

double IntensityModel::evaluate(std::size_t stock, DefaultState state,
                                std::span<const double> prices, bool closure) const {
    if (prices.size() != n_) throw std::invalid_argument("intensity: price vector size");
    if (state.defaulted(stock))
        throw std::logic_error("intensity: stock " + std::to_string(stock) + " already defaulted");
    for (std::size_t j = 0; j < n_; ++j) {
        if (state.defaulted(j)) continue;
        const bool bad = closure ? !(prices[j] >= 0.0) : !(prices[j] > 0.0);
        if (bad) throw std::domain_error("intensity: nonpositive surviving price");
    }
    const IntensityFamily& fam = family(stock, state);
    if (const auto* c = std::get_if<ConstantRate>(&fam)) return c->rate;
    if (const auto* pc = std::get_if<PowerClamp>(&fam)) {
        double weighted = 0.0;
        for (std::size_t j = 0; j < n_; ++j)
            if (state.survives(j)) weighted += pc->weights[j] * prices[j];
        const double raw = weighted > 0.0 ? pc->h0 / std::pow(weighted, pc->alpha)
                                          : std::numeric_limits<double>::infinity();
        return std::min(std::max(raw, pc->h_min), pc->h_max);
    }
    const auto& rc = std::get<Reciprocal>(fam);
    double total = 0.0;
    for (std::size_t j = 0; j < n_; ++j)
        if (state.survives(j)) total += prices[j];
    if (!(total > 0.0)) throw std::domain_error("intensity: reciprocal family at zero price sum");
    return rc.c / total;
}

double IntensityModel::upper_bound() const {
    double bound = 0.0;
    for (const auto& fam : table_) {
        if (const auto* c = std::get_if<ConstantRate>(&fam)) bound = std::max(bound, c->cap);
        else if (const auto* pc = std::get_if<PowerClamp>(&fam)) bound = std::max(bound, pc->h_max);
        else bound = std::max(bound, std::get<Reciprocal>(fam).cap);
    }
    return bound;
}

bool IntensityModel::is_constant() const {
    return std::all_of(table_.begin(), table_.end(),
                       [](const IntensityFamily& f) { return std::holds_alternative<ConstantRate>(f); });
}

void IntensityModel::validate() const {
    if (n_ == 0) throw std::invalid_argument("intensity: empty model");
    for (const auto& fam : table_) {
        if (const auto* c = std::get_if<ConstantRate>(&fam)) {
            if (!(c->rate >= 0.0) || !std::isfinite(c->cap) || c->rate > c->cap)
                throw std::invalid_argument("intensity: constant rate must lie in [0, cap]");
        } else if (const auto* pc = std::get_if<PowerClamp>(&fam)) {
            if (!(pc->h_min > 0.0 && pc->h_min <= pc->h_max) || !std::isfinite(pc->h_max))
                throw std::invalid_argument("intensity: power clamp needs 0 < h_min <= h_max < inf");
            if (pc->weights.size() != n_) throw std::invalid_argument("intensity: weight count");
            if (!(pc->h0 >= 0.0) || !std::isfinite(pc->alpha))
                throw std::invalid_argument("intensity: power clamp h0/alpha");
            for (double w : pc->weights)
                if (!(w >= 0.0)) throw std::invalid_argument("intensity: negative weight");
        } else {
            const auto& rc = std::get<Reciprocal>(fam);
            if (!(rc.c >= 0.0) || !(rc.cap > 0.0) || !std::isfinite(rc.cap))
                throw std::invalid_argument("intensity: reciprocal needs c >= 0 and a finite cap");
        }
    }
}

BoxReport validate_box(const AdmissibleBox& box, const MarketParams& params) {
    const std::size_t n = params.n();
    if (box.lower.size() != n || box.upper.size() != n)
        throw std::invalid_argument("box: dimension mismatch");
    BoxReport report;
    report.worst_margin = std::numeric_limits<double>::infinity();
    std::vector<double> vertex(n);
    for (std::uint32_t corner = 0; corner < (1u << n); ++corner) {
        for (std::size_t i = 0; i < n; ++i)
            vertex[i] = ((corner >> i) & 1u) ? box.upper[i] : box.lower[i];
        for (std::size_t j = 0; j < n; ++j) {
            double margin = 1.0;
            for (std::size_t i = 0; i < n; ++i) margin -= params.loss(i, j) * vertex[i];
            report.worst_margin = std::min(report.worst_margin, margin);
            if (margin < box.eps_a) {
                report.ok = false;
                report.violations.push_back({vertex, j, margin});
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (box.lower[i] > box.upper[i]) {
            report.ok = false;
            report.violations.push_back({box.lower, i, report.worst_margin});
        }
    }
    if (!(box.eps_a > 0.0 && box.eps_a < 1.0)) report.ok = false;
    return report;
}

double min_column_margin(std::span<const double> pi, const MarketParams& params,
                         DefaultState state) {
    const std::size_t n = params.n();
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
        if (state.defaulted(j)) continue;
        double margin = 1.0;
        for (std::size_t i = 0; i < n; ++i)
            if (state.survives(i)) margin -= params.loss(i, j) * pi[i];
        worst = std::min(worst, margin);
    }
    return worst;
}

bool is_admissible(std::span<const double> pi, const AdmissibleBox& box,
                   const MarketParams& params, DefaultState state, double tol) {
    const std::size_t n = params.n();
    if (pi.size() != n) return false;
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(pi[i])) return false;
        if (state.defaulted(i)) {
            if (pi[i] != 0.0) return false;
            continue;
        }
        if (pi[i] < box.lower[i] - tol || pi[i] > box.upper[i] + tol) return false;
    }
    if (state.survivor_count() == 0) return true;
    return min_column_margin(pi, params, state) >= box.eps_a - tol;
}

}  // namespace contagion
