#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "climbemu/fitting.hpp"
#include "climbemu/synthetic.hpp"

using namespace climbemu;

namespace {

Trajectory sampled(const MonotoneCoefficients& c, int n, double t_end = 0.9)
{
    const MonotoneCurve curve(c);
    Trajectory traj;
    traj.id = "syn";
    for (int j = 0; j < n; ++j) {
        const double t = t_end * j / (n - 1);
        traj.observations.push_back({t, curve(t)});
    }
    traj.features = {traj.last_level() - traj.first_level(), traj.first_level(), 280.0};
    return traj;
}

MonotoneCoefficients random_coefficients(std::mt19937_64& rng, int n_w)
{
    std::normal_distribution<double> n(0.0, 0.4);
    Eigen::VectorXd a(n_w), b(n_w);
    for (int k = 0; k < n_w; ++k) {
        a[k] = n(rng);
        b[k] = n(rng);
    }
    return {200.0, 80.0 + 20.0 * std::abs(n(rng)), n(rng), a, b};
}

Trajectory noisy(std::mt19937_64& rng, const MonotoneCoefficients& truth, int n)
{
    auto traj = sampled(truth, n);
    std::normal_distribution<double> e(0.0, 0.5);
    for (std::size_t j = 1; j < traj.observations.size(); ++j)
        traj.observations[j].f += e(rng);
    return traj;
}

/// Noise-free normalized climb from the synthetic dynamics.
Trajectory curved_climb()
{
    const ClimbFeatures x{100.0, 150.0, 300.0};
    const auto run = run_baseline(x, 1.0, SyntheticConfig{});
    Trajectory traj{"curved", run.trajectory, x};
    return normalize_time(traj, TimeHorizon(1.2 * traj.duration()));
}

} // namespace

TEST(RssLoss, ExactDataGivesZero)
{
    std::mt19937_64 rng(1);
    const auto c = random_coefficients(rng, 10);
    EXPECT_LE(rss_loss(sampled(c, 40), c), 1e-12 * 40 * c.beta0 * c.beta0);
}

TEST(RssLoss, SingleOffsetPoint)
{
    const auto c = MonotoneCoefficients::linear(200.0, 100.0, 3);
    auto traj = sampled(c, 10);
    traj.observations[4].f += 2.0;
    EXPECT_NEAR(rss_loss(traj, c), 4.0, 1e-9);
}

TEST(RssLoss, MatchesPointByPointOracle)
{
    std::mt19937_64 rng(2);
    for (int i = 0; i < 10; ++i) {
        const auto c = random_coefficients(rng, 10);
        const auto traj = noisy(rng, random_coefficients(rng, 10), 30);
        auto pinned = c;
        pinned.beta0 = traj.first_level();
        double want = 0.0;
        for (const auto& o : traj.observations) {
            const std::vector<double> t{o.t};
            const double r = o.f - eval_trajectory(pinned, t)[0];
            want += r * r;
        }
        EXPECT_NEAR(rss_loss(traj, pinned), want, 1e-9 * want);
        const RssObjective objective(traj, std::make_shared<const FourierQuadrature>(10, QuadratureConfig{}));
        EXPECT_NEAR(objective(pinned.to_vector()), want, 1e-9 * want);
    }
}

TEST(LossGradient, ZeroAtLinearPerfectFit)
{
    const auto c = MonotoneCoefficients::linear(200.0, 100.0, 4);
    const auto g = loss_gradient(sampled(c, 25), c);
    EXPECT_LT(g.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(LossGradient, Beta1ClosedFormInLinearCase)
{
    std::mt19937_64 rng(3);
    const auto c = MonotoneCoefficients::linear(200.0, 100.0, 4);
    auto traj = noisy(rng, MonotoneCoefficients::linear(200.0, 90.0, 4), 25);
    double want = 0.0;
    for (const auto& o : traj.observations)
        want += -2.0 * (o.f - (200.0 + 100.0 * o.t)) * o.t;
    EXPECT_NEAR(loss_gradient(traj, c)[0], want, 1e-9 * std::abs(want));
}

TEST(LossGradient, MatchesCentralDifferences)
{
    std::mt19937_64 rng(4);
    const auto quad = std::make_shared<const FourierQuadrature>(10, QuadratureConfig{});
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const auto c = random_coefficients(rng, 10);
        const auto traj = noisy(rng, random_coefficients(rng, 10), 40);
        const RssObjective objective(traj, quad);
        Eigen::VectorXd analytic;
        objective(c.to_vector(), &analytic);
        const auto numeric = finite_difference_gradient(
            [&](const Eigen::VectorXd& y) { return objective(y); }, c.to_vector(), 1e-6);
        for (Eigen::Index l = 0; l < analytic.size(); ++l) {
            const double denom = std::max(std::abs(analytic[l]), 1e-3 * analytic.cwiseAbs().maxCoeff());
            worst = std::max(worst, std::abs(analytic[l] - numeric[l]) / denom);
        }
    }
    EXPECT_LT(worst, 1e-5);
}

TEST(Adagrad, FirstStep)
{
    Eigen::VectorXd y(1), g(1), acc = Eigen::VectorXd::Zero(1);
    y << 1.0;
    g << 2.0;
    const auto [y1, acc1] = adagrad_step(y, g, acc, 0.02, 1e-8);
    EXPECT_NEAR(y1[0], 0.98, 1e-8);
    EXPECT_DOUBLE_EQ(acc1[0], 4.0);
}

TEST(Adagrad, ZeroGradientIsNoOp)
{
    Eigen::VectorXd y(2), g = Eigen::VectorXd::Zero(2), acc(2);
    y << 1.0, -3.0;
    acc << 0.5, 2.0;
    const auto [y1, acc1] = adagrad_step(y, g, acc, 0.02, 1e-8);
    EXPECT_EQ(y1, y);
    EXPECT_EQ(acc1, acc);
}

TEST(Adagrad, SecondStepIsSmaller)
{
    Eigen::VectorXd y(1), g(1), acc = Eigen::VectorXd::Zero(1);
    y << 1.0;
    g << 2.0;
    const auto [y1, acc1] = adagrad_step(y, g, acc, 0.02, 1e-8);
    const auto [y2, acc2] = adagrad_step(y1, g, acc1, 0.02, 1e-8);
    EXPECT_NEAR(y1[0] - y2[0], 0.02 * 2.0 / std::sqrt(8.0), 1e-9);
    EXPECT_LT(y1[0] - y2[0], y[0] - y1[0]);
}

TEST(Adagrad, RejectsBadInput)
{
    Eigen::VectorXd y(1), g(1), acc(1);
    y << 1.0;
    g << std::nan("");
    acc << 0.0;
    EXPECT_THROW(adagrad_step(y, g, acc, 0.02, 1e-8), InvalidArgument);
    g << 1.0;
    acc << -1.0;
    EXPECT_THROW(adagrad_step(y, g, acc, 0.02, 1e-8), InvalidArgument);
}

TEST(FitTrajectory, RecoversLinearClimb)
{
    const auto truth = MonotoneCoefficients::linear(200.0, 100.0, 10);
    const auto res = fit_trajectory(sampled(truth, 50), FitConfig{});
    EXPECT_NEAR(res.coefficients.beta1, 100.0, 1e-3 * 100.0);
    EXPECT_LT(res.final_loss, 1e-6);
}

TEST(FitTrajectory, RecoversExponentialClimb)
{
    const MonotoneCoefficients truth(200.0, 100.0, 0.8, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1));
    FitConfig cfg;
    cfg.n_w = 1;
    cfg.max_iters = 400000;
    cfg.rel_tol = 1e-12;
    const auto res = fit_trajectory(sampled(truth, 60, 1.0), cfg);
    EXPECT_NEAR(res.coefficients.a0, 0.8, 1e-2 * 0.8);
    EXPECT_NEAR(res.coefficients.beta1, 100.0, 1e-2 * 100.0);
    EXPECT_LT(res.final_loss, 1e-6);
}

TEST(FitTrajectory, HigherOrderFitsCurvedClimbBetter)
{
    const auto traj = curved_climb();
    FitConfig low;
    low.n_w = 3;
    FitConfig high;
    high.n_w = 20;
    EXPECT_LT(fit_trajectory(traj, high).final_loss, fit_trajectory(traj, low).final_loss);
}

TEST(FitTrajectory, PinnedAndDeterministic)
{
    std::mt19937_64 rng(5);
    const auto traj = noisy(rng, random_coefficients(rng, 10), 40);
    FitConfig cfg;
    cfg.max_iters = 2000;
    const auto a = fit_trajectory(traj, cfg);
    const auto b = fit_trajectory(traj, cfg);
    EXPECT_EQ(a.coefficients.to_vector(), b.coefficients.to_vector());
    EXPECT_EQ(a.final_loss, b.final_loss);
    EXPECT_EQ(MonotoneCurve(a.coefficients)(0.0), traj.first_level());
}

TEST(FitTrajectory, LossDecreasesOverWindows)
{
    SyntheticConfig sc;
    sc.n_flights = 40;
    sc.seed = 17;
    const auto data = generate_dataset(sc);
    const TimeHorizon h = compute_horizon(data.trajectories);
    int good = 0;
    for (const auto& raw : data.trajectories) {
        std::vector<double> losses;
        FitConfig cfg;
        cfg.max_iters = 3000;
        cfg.progress_every = 1;
        cfg.rel_tol = 1e-12;
        cfg.progress = [&](const std::string&, int, double loss) { losses.push_back(loss); };
        fit_trajectory(normalize_time(raw, h), cfg);
        bool ok = true;
        for (std::size_t i = 100; i < losses.size(); ++i)
            ok = ok && losses[i] <= losses[i - 100];
        good += ok;
    }
    EXPECT_GE(good, static_cast<int>(0.95 * data.trajectories.size()));
}

TEST(FitDataset, SingleTrajectory)
{
    std::mt19937_64 rng(6);
    const std::vector<Trajectory> one{noisy(rng, random_coefficients(rng, 10), 30)};
    FitConfig cfg;
    cfg.max_iters = 1000;
    const auto fit = fit_dataset(one, cfg);
    EXPECT_EQ(fit.epsilon_L, fit.results[0].final_loss);
}

TEST(FitDataset, PermutationAndResummation)
{
    std::mt19937_64 rng(7);
    std::vector<Trajectory> data;
    for (int i = 0; i < 6; ++i) {
        data.push_back(noisy(rng, random_coefficients(rng, 10), 30));
        data.back().id = "f" + std::to_string(i);
    }
    FitConfig cfg;
    cfg.max_iters = 800;
    const auto fit = fit_dataset(data, cfg);
    auto reversed = data;
    std::reverse(reversed.begin(), reversed.end());
    const auto rfit = fit_dataset(reversed, cfg);
    double resum = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        EXPECT_EQ(fit.results[i].coefficients.to_vector(),
                  rfit.results[data.size() - 1 - i].coefficients.to_vector());
        resum += rss_loss(data[i], fit.results[i].coefficients);
    }
    EXPECT_NEAR(fit.epsilon_L, resum, 1e-9 * resum);
    EXPECT_EQ(fit.coefficient_matrix().rows(), 6);
}
