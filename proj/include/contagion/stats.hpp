#ifndef CONTAGION_STATS_HPP
#define CONTAGION_STATS_HPP

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace contagion {

struct SampleStats {
    std::size_t n = 0;
    double mean = 0.0;
    double std = 0.0;  // sample, n - 1 denominator; 0 when n = 1
    double q_low = 0.0;
    double q_high = 0.0;
};

inline constexpr double kLowQuantile = 0.023;
inline constexpr double kHighQuantile = 0.977;

// Linear interpolation between order statistics at 1-based position
// p (n - 1) + 1. `sorted` must be ascending and nonempty.
double quantile_sorted(std::span<const double> sorted, double p);

// Throws std::invalid_argument on empty input.
SampleStats summarize(std::span<const double> samples);

struct Cohorts {
    std::vector<std::size_t> with_default;
    std::vector<std::size_t> without_default;
};

Cohorts partition_by_default(std::span<const char> had_default);

// Cohort statistics of one strategy; empty cohorts have no stats.
struct CohortReport {
    std::string label;
    SampleStats all;
    std::optional<SampleStats> with_default;
    std::optional<SampleStats> without_default;
};

CohortReport cohort_report(std::string label, std::span<const double> terminal_wealth,
                           const Cohorts& cohorts);

// Quotes a CSV field when it holds a comma, quote or newline.
std::string csv_field(const std::string& text);

// "label,n,mean,std,q023,q977" with 6 significant digits; NA fields for an
// absent cohort.
std::string stats_csv_header();
std::string stats_csv_row(const std::string& label, const std::optional<SampleStats>& stats);

// Percentage change "(x.xx%)" of value against base.
std::string percent_delta(double value, double base);

}  // namespace contagion

#endif  // CONTAGION_STATS_HPP
