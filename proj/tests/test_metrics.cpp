#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "climbemu/metrics.hpp"

using namespace climbemu;

namespace {

// Integral of (F(t) - 1{t >= y})^2 over the real line, computed exactly
// piece by piece between consecutive breakpoints of the two step functions.
double crps_cdf_integral(std::vector<double> x, double y)
{
    std::sort(x.begin(), x.end());
    std::vector<double> knots = x;
    knots.push_back(y);
    std::sort(knots.begin(), knots.end());
    const double n = static_cast<double>(x.size());
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
        const double lo = knots[i];
        const double hi = knots[i + 1];
        if (hi <= lo)
            continue;
        const double mid = 0.5 * (lo + hi);
        const double F = static_cast<double>(std::upper_bound(x.begin(), x.end(), mid) - x.begin()) / n;
        const double H = mid >= y ? 1.0 : 0.0;
        total += (F - H) * (F - H) * (hi - lo);
    }
    return total;
}

Trajectory linear_observed(double f0, double rate, double dt, int n)
{
    Trajectory t;
    t.id = "obs";
    for (int j = 0; j < n; ++j)
        t.observations.push_back({j * dt, f0 + rate * j * dt});
    return t;
}

} // namespace

TEST(Crps, Examples)
{
    const std::vector<double> fives(7, 5.0);
    EXPECT_DOUBLE_EQ(crps_empirical(fives, 3.0), 2.0);
    const std::vector<double> two{0.0, 1.0};
    EXPECT_DOUBLE_EQ(crps_empirical(two, 0.0), 0.25);
    EXPECT_EQ(crps_empirical(fives, 5.0), 0.0);
    const std::vector<double> one{12.5};
    EXPECT_EQ(crps_empirical(one, 10.0), 2.5);
}

TEST(Crps, MatchesCdfIntegral)
{
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(300.0, 40.0);
    std::uniform_int_distribution<int> size(1, 200);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> x(static_cast<std::size_t>(size(rng)));
        for (auto& v : x)
            v = n(rng);
        const double y = n(rng);
        const double c = crps_empirical(x, y);
        EXPECT_GE(c, 0.0);
        EXPECT_NEAR(c, crps_cdf_integral(x, y), 1e-6);
    }
}

TEST(Crps, RejectsBadInput)
{
    EXPECT_THROW(crps_empirical(std::vector<double>{}, 1.0), InvalidArgument);
    EXPECT_THROW(crps_empirical(std::vector<double>{1.0, std::nan("")}, 1.0), InvalidArgument);
}

TEST(SkillScores, Examples)
{
    EXPECT_EQ(skill_vs_point(0.0, 10.0, 12.0), 1.0);
    EXPECT_DOUBLE_EQ(skill_vs_point(0.5, 10.0, 10.0 + std::sqrt(2.0)), 0.75);
    EXPECT_NEAR(skill_vs_point(4.0, 10.0, 12.0), 0.0, 1e-15);
    EXPECT_THROW(skill_vs_point(1.0, 10.0, 10.0), BaselineExact);

    EXPECT_EQ(skill_vs_prob(1.3, 1.3), 0.0);
    EXPECT_EQ(skill_vs_prob(0.0, 2.0), 1.0);
    EXPECT_DOUBLE_EQ(skill_vs_prob(0.3, 1.2), 0.75);
    EXPECT_THROW(skill_vs_prob(0.3, 0.0), BaselineExact);
}

TEST(DeltaZ, Examples)
{
    const auto obs = linear_observed(200.0, 10.0 / 6.0, 6.0, 20); // 10 FL per 6 s gap
    const auto pred = [](double t) { return 200.0 + 10.0 / 6.0 * t; };
    const double target = 250.0;
    EXPECT_NEAR(*delta_z(pred, 30.0, obs, 30.0, target), 0.0, 1e-12);
    // prediction one 6 s gap late: 10 FL short of the target when the aircraft arrives
    const auto slow = [](double t) { return 200.0 + 10.0 / 6.0 * (t - 6.0); };
    EXPECT_NEAR(*delta_z(slow, 36.0, obs, 30.0, target), 10.0, 1e-12);
    // one gap early: the observed climb is 10 FL short at the predicted arrival
    const auto fast = [](double t) { return 200.0 + 10.0 / 6.0 * (t + 6.0); };
    EXPECT_NEAR(*delta_z(fast, 24.0, obs, 30.0, target), 10.0, 1e-12);
    // observed arrival past the radar data and the prediction beyond the last return
    EXPECT_FALSE(delta_z(pred, 150.0, obs, 200.0, target).has_value());
}

TEST(DeltaZ, MatchesDenseGridRecomputation)
{
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.5, 2.0);
    for (int trial = 0; trial < 50; ++trial) {
        const double a = u(rng), b = u(rng), c = u(rng);
        const auto pred = [&](double t) { return 200.0 + a * t + 0.01 * b * t * t; };
        const auto obs = linear_observed(200.0, c, 6.0, 80);
        const double target = 240.0;

        // Arrivals and the level of the other curve at the earlier arrival, on a dense grid.
        const double h = 1e-4;
        double t_pred = 0.0, t_obs = 0.0;
        while (pred(t_pred) < target)
            t_pred += h;
        while (200.0 + c * t_obs < target)
            t_obs += h;
        const double oracle =
            t_obs <= t_pred ? target - pred(t_obs) : target - (200.0 + c * t_pred);

        const double pa = (-a + std::sqrt(a * a + 4.0 * 0.01 * b * 40.0)) / (2.0 * 0.01 * b);
        const double oa = 40.0 / c;
        const auto dz = delta_z(pred, pa, obs, oa, target);
        ASSERT_TRUE(dz.has_value());
        EXPECT_NEAR(*dz, oracle, 1e-2);
    }
}

TEST(Mae, Examples)
{
    const auto obs = linear_observed(200.0, 1.0, 6.0, 10);
    EXPECT_EQ(mae([](double t) { return 200.0 + t; }, obs), 0.0);
    EXPECT_DOUBLE_EQ(mae([](double t) { return 202.0 + t; }, obs), 2.0);

    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 3.0);
    std::vector<double> pred;
    double sum = 0.0;
    for (const auto& o : obs.observations) {
        pred.push_back(o.f + n(rng));
        sum += std::abs(pred.back() - o.f);
    }
    EXPECT_NEAR(mae(pred, obs), sum / 10.0, 1e-12);
}

TEST(Calibration, ObservationsFromFittedGaussians)
{
    std::mt19937_64 rng(4);
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<LevelArrivals> pairs(10000);
    for (auto& p : pairs) {
        const double mu = 100.0 + 400.0 * u(rng);
        const double sd = 2.0 + 20.0 * u(rng);
        for (int s = 0; s < 30; ++s)
            p.samples.push_back(mu + sd * z(rng));
        double m = 0.0;
        for (double v : p.samples)
            m += v;
        m /= 30.0;
        double ss = 0.0;
        for (double v : p.samples)
            ss += (v - m) * (v - m);
        p.observed = m + std::sqrt(ss / 29.0) * z(rng);
    }
    const auto cal = calibration_sharpness(pairs, default_nominal_levels(), 800.0);
    EXPECT_LT(cal.rmsec, 0.02);
    EXPECT_EQ(cal.pairs_used, 10000u);
}

TEST(Calibration, AllOutsideEveryInterval)
{
    std::vector<GaussianArrival> pairs(20, {100.0, 1.0, 200.0});
    const auto cal = calibration_from_gaussians(pairs, default_nominal_levels(), 600.0);
    for (double e : cal.empirical)
        EXPECT_EQ(e, 0.0);
    EXPECT_NEAR(cal.rmsec, std::sqrt(2.85 / 9.0), 1e-12);
}

TEST(Calibration, SharpnessScalesWithStandardDeviation)
{
    std::mt19937_64 rng(5);
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<LevelArrivals> base(50), scaled(50);
    for (std::size_t i = 0; i < base.size(); ++i) {
        base[i].observed = scaled[i].observed = 300.0;
        for (int s = 0; s < 10; ++s) {
            const double d = 5.0 * z(rng);
            base[i].samples.push_back(300.0 + d);
            scaled[i].samples.push_back(300.0 + std::sqrt(2.0) * d);
        }
    }
    const auto a = calibration_sharpness(base, default_nominal_levels(), 700.0);
    const auto b = calibration_sharpness(scaled, default_nominal_levels(), 700.0);
    EXPECT_NEAR(b.sharpness, std::sqrt(2.0) * a.sharpness, 1e-12 * b.sharpness);
}

TEST(Calibration, PoolingIsOrderFree)
{
    std::mt19937_64 rng(6);
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<GaussianArrival> pairs(500);
    for (auto& p : pairs)
        p = {z(rng), 1.0 + std::abs(z(rng)), 1.3 * z(rng)};
    const auto a = calibration_from_gaussians(pairs, default_nominal_levels(), 1.0);
    std::shuffle(pairs.begin(), pairs.end(), rng);
    const auto b = calibration_from_gaussians(pairs, default_nominal_levels(), 1.0);
    EXPECT_EQ(a.rmsec, b.rmsec);
    EXPECT_EQ(a.empirical, b.empirical);
}

TEST(Calibration, ExcludesPairsWithoutSamples)
{
    std::vector<LevelArrivals> pairs{{{1.0, 2.0, 3.0}, 2.0}, {{1.0, std::nan("")}, 1.0}, {{1.0, 2.0}, std::nan("")}};
    const auto cal = calibration_sharpness(pairs, default_nominal_levels(), 10.0);
    EXPECT_EQ(cal.pairs_used, 1u);
    EXPECT_EQ(cal.pairs_excluded, 2u);
    EXPECT_DOUBLE_EQ(cal.sharpness, 0.1);
}

TEST(Histogram, CountsEveryFiniteValue)
{
    const std::vector<double> v{0.0, 0.1, 0.5, 0.99, 1.0, std::nan("")};
    const auto h = histogram(v, 4);
    ASSERT_EQ(h.size(), 4u);
    std::size_t total = 0;
    for (const auto& b : h)
        total += b.count;
    EXPECT_EQ(total, 5u);
    EXPECT_EQ(h[0].count, 2u);
    EXPECT_EQ(h[3].count, 2u);
}
