#ifndef CONTAGION_RNG_HPP
#define CONTAGION_RNG_HPP

#include <cmath>
#include <cstdint>
#include <limits>

namespace contagion {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Counter-based stream keyed by (master seed, path index). Draw k of path p
/// is a pure function of (seed, p, k), so results never depend on which
/// worker simulates which path.
class PathStream {
public:
    using result_type = std::uint64_t;

    PathStream(std::uint64_t master_seed, std::uint64_t path_index)
        : key_(splitmix64(splitmix64(master_seed) ^ (path_index * 0xD1B54A32D192ED03ull))) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        const std::uint64_t out = splitmix64(key_ + counter_ * 0x9E3779B97F4A7C15ull);
        ++counter_;
        digest_ = (digest_ ^ out) * 0x100000001B3ull;
        return out;
    }

    // Uniform on the open interval (0, 1).
    double uniform() { return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53; }

    double exponential() { return -std::log(uniform()); }

    // Box-Muller; the spare variate is cached so a normal costs half a pair.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * 3.14159265358979323846 * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    std::uint64_t draws() const { return counter_; }
    // FNV-style fold of every raw draw, used to assert common random numbers.
    std::uint64_t digest() const { return digest_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    std::uint64_t digest_ = 0xCBF29CE484222325ull;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace contagion

#endif  // CONTAGION_RNG_HPP
