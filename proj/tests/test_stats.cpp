#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "contagion/dynamics.hpp"
#include "contagion/stats.hpp"

using namespace contagion;

namespace {

std::vector<char> default_flags(double rate, int n_paths) {
    const MarketParams mp = MarketParams::two_stock(0.05, 0.10, 0.15, 0.30, 0.40, 0.0, 0.20, 0.30);
    PathConfig cfg;
    cfg.n_steps = 50;
    cfg.n_paths = n_paths;
    cfg.master_seed = 4;
    cfg.initial_prices = {100.0, 100.0};
    std::vector<char> flags;
    for (const MarketPath& p : simulate_paths(mp, IntensityModel::constant(2, rate, 1e4), cfg))
        flags.push_back(p.default_count() > 0);
    return flags;
}

}  // namespace

TEST_CASE("constant samples") {
    const std::vector<double> x(17, 3.5);
    const SampleStats s = summarize(x);
    CHECK(s.n == 17);
    CHECK(s.mean == 3.5);
    CHECK(s.std == 0.0);
    CHECK(s.q_low == 3.5);
    CHECK(s.q_high == 3.5);
}

TEST_CASE("quantiles of 1..100 follow the interpolation rule") {
    std::vector<double> x(100);
    std::iota(x.begin(), x.end(), 1.0);
    const SampleStats s = summarize(x);
    CHECK(s.q_low == doctest::Approx(3.277).epsilon(1e-13));
    CHECK(s.q_high == doctest::Approx(97.723).epsilon(1e-13));
    CHECK(quantile_sorted(x, 0.0) == 1.0);
    CHECK(quantile_sorted(x, 1.0) == 100.0);
    CHECK(quantile_sorted(x, 0.5) == doctest::Approx(50.5));
}

TEST_CASE("two samples and a single sample") {
    const SampleStats two = summarize(std::vector<double>{0.0, 2.0});
    CHECK(two.mean == 1.0);
    CHECK(two.std == doctest::Approx(std::sqrt(2.0)));
    const SampleStats one = summarize(std::vector<double>{7.0});
    CHECK(one.std == 0.0);
    CHECK(one.q_low == 7.0);
    CHECK_THROWS_AS(summarize(std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("summaries are permutation invariant and affine equivariant") {
    std::mt19937_64 rng(21);
    std::lognormal_distribution<double> d(4.6, 0.3);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> x(2 + rng() % 500);
        for (double& v : x) v = d(rng);
        const SampleStats base = summarize(x);
        std::vector<double> shuffled = x;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        const SampleStats perm = summarize(shuffled);
        CHECK(perm.mean == doctest::Approx(base.mean).epsilon(1e-13));
        CHECK(perm.std == doctest::Approx(base.std).epsilon(1e-12));
        CHECK(perm.q_low == base.q_low);
        CHECK(perm.q_high == base.q_high);

        for (double a : {2.5, -0.5}) {
            const double b = 13.0;
            std::vector<double> y(x.size());
            std::transform(x.begin(), x.end(), y.begin(), [&](double v) { return a * v + b; });
            const SampleStats t = summarize(y);
            CHECK(t.mean == doctest::Approx(a * base.mean + b).epsilon(1e-12));
            CHECK(t.std == doctest::Approx(std::abs(a) * base.std).epsilon(1e-10));
            const double lo = a > 0 ? base.q_low : base.q_high;
            const double hi = a > 0 ? base.q_high : base.q_low;
            CHECK(t.q_low == doctest::Approx(a * lo + b).epsilon(1e-12));
            CHECK(t.q_high == doctest::Approx(a * hi + b).epsilon(1e-12));
        }
    }
}

TEST_CASE("cohort statistics recombine") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> d(100.0, 20.0);
    std::vector<double> wealth(3001);
    std::vector<char> flags(wealth.size());
    for (std::size_t k = 0; k < wealth.size(); ++k) {
        wealth[k] = d(rng);
        flags[k] = rng() % 5 == 0;
    }
    const Cohorts c = partition_by_default(flags);
    const CohortReport rep = cohort_report("x", wealth, c);
    REQUIRE(rep.with_default);
    REQUIRE(rep.without_default);
    CHECK(rep.with_default->n + rep.without_default->n == rep.all.n);
    const double combined = (rep.with_default->n * rep.with_default->mean +
                             rep.without_default->n * rep.without_default->mean) / rep.all.n;
    CHECK(std::abs(combined / rep.all.mean - 1.0) <= 1e-12);

    Cohorts partial = c;
    partial.without_default.pop_back();
    CHECK_THROWS_AS(cohort_report("x", wealth, partial), std::invalid_argument);
}

TEST_CASE("partition of simulated bundles") {
    const Cohorts none = partition_by_default(default_flags(0.0, 500));
    CHECK(none.with_default.empty());
    CHECK(none.without_default.size() == 500);
    const Cohorts all = partition_by_default(default_flags(1e3, 500));
    CHECK(all.without_default.empty());
    CHECK(all.with_default.size() == 500);

    const Cohorts some = partition_by_default(default_flags(0.1, 10000));
    const double p = 1.0 - std::exp(-0.2);
    const double se = std::sqrt(p * (1 - p) / 10000);
    CHECK(std::abs(some.with_default.size() / 10000.0 - p) <= 3 * se);

    const CohortReport rep = cohort_report("h", std::vector<double>(500, 1.0), none);
    CHECK_FALSE(rep.with_default);
    CHECK(rep.without_default->n == 500);
}

TEST_CASE("CSV formatting") {
    CHECK(stats_csv_header() == "label,n,mean,std,q023,q977");
    SampleStats s;
    s.n = 1752;
    s.mean = 108.83712;
    s.std = 25.2968;
    s.q_low = 60.1234567;
    s.q_high = 170.0;
    CHECK(stats_csv_row("All samples + h(S,P)", s) == "\"All samples + h(S,P)\",1752,108.837,25.2968,60.1235,170");
    CHECK(stats_csv_row("Default + constant h", std::nullopt) == "Default + constant h,0,NA,NA,NA,NA");
    CHECK(csv_field("say \"hi\"") == "\"say \"\"hi\"\"\"");
}

TEST_CASE("percent deltas") {
    CHECK(percent_delta(110.0, 100.0) == "(10.00%)");
    CHECK(percent_delta(99.5, 100.0) == "(-0.50%)");
    CHECK(percent_delta(108.83712, 108.83712) == "(0.00%)");
    CHECK(percent_delta(0.0, 0.0) == "(0.00%)");
    CHECK(percent_delta(99.999, 100.0) == "(0.00%)");
    CHECK(percent_delta(99.99, 100.0) == "(-0.01%)");
}
