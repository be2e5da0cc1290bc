#include "contagion/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace contagion {

double quantile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw std::invalid_argument("quantile: empty sample");
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("quantile: p must lie in [0, 1]");
    const double pos = p * static_cast<double>(sorted.size() - 1);  // 0-based
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(lo);
    if (lo + 1 >= sorted.size() || frac == 0.0) return sorted[lo];
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

SampleStats summarize(std::span<const double> samples) {
    if (samples.empty()) throw std::invalid_argument("summarize: empty sample");
    SampleStats out;
    out.n = samples.size();
    double sum = 0.0;
    for (double v : samples) sum += v;
    out.mean = sum / static_cast<double>(out.n);
    if (out.n > 1) {
        double ss = 0.0;
        for (double v : samples) ss += (v - out.mean) * (v - out.mean);
        out.std = std::sqrt(ss / static_cast<double>(out.n - 1));
    }
    std::vector<double> sorted(samples.begin(), samples.end());
    std::sort(sorted.begin(), sorted.end());
    out.q_low = quantile_sorted(sorted, kLowQuantile);
    out.q_high = quantile_sorted(sorted, kHighQuantile);
    return out;
}

Cohorts partition_by_default(std::span<const char> had_default) {
    Cohorts c;
    for (std::size_t i = 0; i < had_default.size(); ++i)
        (had_default[i] ? c.with_default : c.without_default).push_back(i);
    return c;
}

namespace {

std::optional<SampleStats> subset_stats(std::span<const double> values,
                                        const std::vector<std::size_t>& idx) {
    if (idx.empty()) return std::nullopt;
    std::vector<double> picked;
    picked.reserve(idx.size());
    for (std::size_t i : idx) picked.push_back(values[i]);
    return summarize(picked);
}

}  // namespace

CohortReport cohort_report(std::string label, std::span<const double> terminal_wealth,
                           const Cohorts& cohorts) {
    if (cohorts.with_default.size() + cohorts.without_default.size() != terminal_wealth.size())
        throw std::invalid_argument("cohort report: cohorts do not cover the sample");
    CohortReport r;
    r.label = std::move(label);
    r.all = summarize(terminal_wealth);
    r.with_default = subset_stats(terminal_wealth, cohorts.with_default);
    r.without_default = subset_stats(terminal_wealth, cohorts.without_default);
    return r;
}

std::string stats_csv_header() { return "label,n,mean,std,q023,q977"; }

std::string csv_field(const std::string& text) {
    if (text.find_first_of(",\"\n") == std::string::npos) return text;
    std::string out = "\"";
    for (char c : text) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

std::string stats_csv_row(const std::string& label, const std::optional<SampleStats>& stats) {
    if (!stats) return csv_field(label) + ",0,NA,NA,NA,NA";
    char buf[160];
    std::snprintf(buf, sizeof buf, ",%zu,%.6g,%.6g,%.6g,%.6g", stats->n, stats->mean, stats->std,
                  stats->q_low, stats->q_high);
    return csv_field(label) + buf;
}

std::string percent_delta(double value, double base) {
    double pct = value == base ? 0.0 : 100.0 * (value - base) / base;
    // Changes that round to zero print without a sign.
    if (std::abs(pct) < 0.005) pct = 0.0;
    char buf[48];
    std::snprintf(buf, sizeof buf, "(%.2f%%)", pct);
    return buf;
}

}  // namespace contagion
