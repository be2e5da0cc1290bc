#ifndef CONTAGION_MODEL_HPP
#define CONTAGION_MODEL_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace contagion {

// Dense row-major square matrix, small n only.
class SquareMatrix {
public:
    SquareMatrix() = default;
    explicit SquareMatrix(std::size_t n, double fill = 0.0) : n_(n), data_(n * n, fill) {}

    static SquareMatrix identity(std::size_t n);

    std::size_t size() const { return n_; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * n_ + j]; }
    double& operator()(std::size_t i, std::size_t j) { return data_[i * n_ + j]; }

private:
    std::size_t n_ = 0;
    std::vector<double> data_;
};

// Lower-triangular Cholesky factor; throws std::domain_error if `a` is not
// positive definite.
SquareMatrix cholesky_lower(const SquareMatrix& a);

/// Market coefficients shared by every stock model in the library.
///
/// `loss(i, j)` is the fractional price drop of stock i when stock j defaults,
/// so column j of the loss matrix describes the impact of a default of j.
struct MarketParams {
    double r = 0.0;
    std::vector<double> mu;
    std::vector<double> sigma;
    SquareMatrix rho;
    SquareMatrix loss;

    std::size_t n() const { return mu.size(); }

    double theta(std::size_t i) const { return mu[i] - r; }
    double covariance(std::size_t i, std::size_t j) const { return rho(i, j) * sigma[i] * sigma[j]; }

    // Two-stock convenience: stock 0 is S, stock 1 is P. loss_s is the drop of
    // S when P defaults, loss_p the drop of P when S defaults.
    static MarketParams two_stock(double r, double mu_s, double mu_p, double sigma_s,
                                  double sigma_p, double rho, double loss_s, double loss_p);

    // Throws std::invalid_argument on a broken invariant. Volatilities must be
    // strictly positive unless `allow_zero_volatility` (deterministic test
    // worlds for the simulator).
    void validate(bool allow_zero_volatility = false) const;
};

/// Default indicator vector; bit i set means stock i has defaulted.
class DefaultState {
public:
    DefaultState() = default;
    DefaultState(std::size_t n, std::uint32_t bits);

    static DefaultState none(std::size_t n) { return {n, 0u}; }

    std::size_t n() const { return n_; }
    std::uint32_t bits() const { return bits_; }
    bool defaulted(std::size_t i) const { return (bits_ >> i) & 1u; }
    bool survives(std::size_t i) const { return !defaulted(i); }
    std::size_t survivor_count() const;
    std::vector<std::size_t> survivors() const;

    // State reached when stock i defaults; i must be surviving.
    DefaultState neighbor(std::size_t i) const;

    friend bool operator==(const DefaultState&, const DefaultState&) = default;

private:
    std::size_t n_ = 0;
    std::uint32_t bits_ = 0;
};

struct ConstantRate {
    double rate = 0.0;
    double cap = 1.0;  // declared bound, validation only
};

// h0 * (sum_j weights[j] * s_j)^(-alpha) clamped to [h_min, h_max]; the sum
// runs over surviving stocks.
struct PowerClamp {
    double h0 = 0.0;
    std::vector<double> weights;
    double alpha = 1.0;
    double h_min = 0.0;
    double h_max = 1.0;
};

// c / (sum of surviving prices); never clamped at evaluation time.
struct Reciprocal {
    double c = 0.0;
    double cap = 1.0;  // declared bound, validation only
};

using IntensityFamily = std::variant<ConstantRate, PowerClamp, Reciprocal>;

/// Hazard rate h_z^i(s) for every stock i and default state z.
class IntensityModel {
public:
    IntensityModel() = default;
    explicit IntensityModel(std::size_t n);

    // Same family for stock i in every default state.
    static IntensityModel state_independent(std::vector<IntensityFamily> per_stock);
    static IntensityModel constant(std::size_t n, double rate, double cap = 1.0);
    // Each stock weighs its own price by k_own and every other surviving price
    // by k_cross.
    static IntensityModel power_clamp(std::size_t n, double h0, double k_own, double k_cross,
                                      double alpha, double h_min, double h_max);
    static IntensityModel reciprocal(std::size_t n, double c, double cap);

    std::size_t n() const { return n_; }

    void set(std::size_t stock, DefaultState state, IntensityFamily family);
    const IntensityFamily& family(std::size_t stock, DefaultState state) const;

    // Requires the stock to survive in `state` and every surviving price > 0.
    double rate(std::size_t stock, DefaultState state, std::span<const double> prices) const;

    // Same formula on the closed orthant: surviving prices may be 0. A power
    // law with a zero weighted sum saturates at h_max; a reciprocal with a
    // zero price sum throws std::domain_error.
    double rate_on_closure(std::size_t stock, DefaultState state,
                           std::span<const double> prices) const;

    // Largest declared bound over all stocks and states.
    double upper_bound() const;

    bool is_constant() const;

    void validate() const;

private:
    double evaluate(std::size_t stock, DefaultState state, std::span<const double> prices,
                    bool closure) const;

    std::size_t n_ = 0;
    std::vector<IntensityFamily> table_;  // [stock * 2^n + state bits]
};

/// Allocation bounds plus the post-default wealth floor.
struct AdmissibleBox {
    std::vector<double> lower;
    std::vector<double> upper;
    double eps_a = 0.01;
};

struct BoxViolation {
    std::vector<double> vertex;
    std::size_t column = 0;
    double margin = 0.0;  // 1 - sum_i L_ij pi_i at the vertex
};

struct BoxReport {
    bool ok = true;
    double worst_margin = 0.0;
    std::vector<BoxViolation> violations;
};

// Checks 1 - sum_i L_ij pi_i >= eps_a at every vertex of the box and every
// column j. Affine in pi, so vertices suffice.
BoxReport validate_box(const AdmissibleBox& box, const MarketParams& params);

// Smallest post-default wealth factor over the surviving columns; defaulted
// coordinates of pi are ignored.
double min_column_margin(std::span<const double> pi, const MarketParams& params,
                         DefaultState state);

// Membership in A: surviving coordinates inside the box, defaulted
// coordinates exactly 0, every surviving column >= eps_a (within tol).
bool is_admissible(std::span<const double> pi, const AdmissibleBox& box,
                   const MarketParams& params, DefaultState state, double tol = 1e-12);

}  // namespace contagion

#endif  // CONTAGION_MODEL_HPP
