#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "climbemu/gp.hpp"
#include "climbemu/synthetic.hpp"

using namespace climbemu;

namespace {

GPHyperparameters hyper(double s2, std::initializer_list<double> ls, double noise)
{
    GPHyperparameters h;
    h.signal_variance = s2;
    h.lengthscales = Eigen::VectorXd(static_cast<Eigen::Index>(ls.size()));
    Eigen::Index i = 0;
    for (double l : ls)
        h.lengthscales[i++] = l;
    h.noise_variance = noise;
    return h;
}

Eigen::MatrixXd column(std::initializer_list<double> xs)
{
    Eigen::MatrixXd X(static_cast<Eigen::Index>(xs.size()), 1);
    Eigen::Index i = 0;
    for (double x : xs)
        X(i++, 0) = x;
    return X;
}

// Draw of a zero-mean 1-D SE process plus noise at uniform inputs.
std::pair<Eigen::MatrixXd, Eigen::VectorXd> gp_draw(std::mt19937_64& rng, int n, const GPHyperparameters& h)
{
    std::uniform_real_distribution<double> u(0.0, 5.0);
    std::normal_distribution<double> z(0.0, 1.0);
    Eigen::MatrixXd X(n, 1);
    for (int i = 0; i < n; ++i)
        X(i, 0) = u(rng);
    Eigen::MatrixXd K = se_kernel_matrix(X, h);
    K.diagonal().array() += h.noise_variance + 1e-10;
    const Eigen::MatrixXd L = K.llt().matrixL();
    Eigen::VectorXd e(n);
    for (int i = 0; i < n; ++i)
        e[i] = z(rng);
    return {X, L * e};
}

} // namespace

TEST(SeKernel, Examples)
{
    const auto h = hyper(2.0, {1.0}, 1e-6);
    Eigen::VectorXd a(1), b(1);
    a << 0.3;
    b << 1.3;
    EXPECT_DOUBLE_EQ(se_kernel(a, a, h), 2.0);
    EXPECT_NEAR(se_kernel(a, b, h), 2.0 * std::exp(-0.5), 1e-15);
    EXPECT_NEAR(se_kernel(a, b, h), 1.21306, 1e-5);
    b << 0.3 + 20.0;
    EXPECT_LT(se_kernel(a, b, h), 1e-12);
}

TEST(SeKernel, MatrixIsExactlySymmetric)
{
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::MatrixXd X(30, 3);
    for (Eigen::Index i = 0; i < X.size(); ++i)
        X.data()[i] = n(rng);
    const auto K = se_kernel_matrix(X, hyper(1.7, {0.5, 1.0, 2.0}, 1e-6));
    EXPECT_EQ((K - K.transpose()).cwiseAbs().maxCoeff(), 0.0);
    const auto K2 = se_kernel_matrix(X, X, hyper(1.7, {0.5, 1.0, 2.0}, 1e-6));
    EXPECT_LT((K - K2).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(GaussianProcess, TwoPointHandPosterior)
{
    const auto h = hyper(2.0, {1.0}, 0.1);
    Eigen::VectorXd y(2);
    y << 1.5, -0.5;
    const GaussianProcess gp(column({0.0, 1.0}), y, h);

    const double d = 2.0 + 0.1 + gp.jitter();
    const double k = 2.0 * std::exp(-0.5);
    const double det = d * d - k * k;
    const double xs = 0.4;
    const double k1 = 2.0 * std::exp(-0.5 * xs * xs);
    const double k2 = 2.0 * std::exp(-0.5 * (xs - 1.0) * (xs - 1.0));
    // [k1 k2] K^-1 with K^-1 = [[d, -k], [-k, d]] / det
    const double w1 = (k1 * d - k2 * k) / det;
    const double w2 = (k2 * d - k1 * k) / det;
    Eigen::VectorXd x(1);
    x << xs;
    const auto p = gp.predict(x);
    EXPECT_NEAR(p.mean, w1 * y[0] + w2 * y[1], 1e-12);
    EXPECT_NEAR(p.variance, 2.0 - (w1 * k1 + w2 * k2), 1e-12);
}

TEST(GaussianProcess, InterpolatesAtTrainingInputs)
{
    const auto h = hyper(1.5, {0.8}, 1e-20);
    const Eigen::MatrixXd X = column({0.0, 1.0, 2.0, 3.0, 4.0, 5.0});
    Eigen::VectorXd y(6);
    y << 0.3, -1.2, 0.8, 2.0, 1.1, -0.4;
    const GaussianProcess gp(X, y, h);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const auto p = gp.predict(X.row(i).transpose());
        EXPECT_NEAR(p.mean, y[i], 1e-6);
        EXPECT_GE(p.variance, 0.0);
        // bounded by the fixed 1e-8 * signal_variance diagonal jitter
        EXPECT_LE(p.variance, (1e-8 + 1e-14) * h.signal_variance);
    }
}

TEST(GaussianProcess, RevertsToPriorFarAway)
{
    Eigen::VectorXd y(3);
    y << 1.0, 2.0, -1.0;
    const GaussianProcess gp(column({0.0, 0.5, 1.0}), y, hyper(1.3, {0.5}, 1e-4));
    Eigen::VectorXd x(1);
    x << 100.0;
    const auto p = gp.predict(x);
    EXPECT_NEAR(p.mean, 0.0, 1e-12);
    EXPECT_NEAR(p.variance, 1.3, 1e-12);
}

TEST(GaussianProcess, JitterHandlesDuplicateInputs)
{
    Eigen::VectorXd y(3);
    y << 1.0, 1.0, 2.0;
    const GaussianProcess gp(column({0.0, 0.0, 1.0}), y, hyper(1.0, {1.0}, 1e-300));
    EXPECT_GE(gp.jitter(), initial_jitter);
    EXPECT_LE(gp.jitter(), max_jitter);
    EXPECT_TRUE(std::isfinite(gp.log_marginal_likelihood()));
}

TEST(GaussianProcess, RejectsBadInput)
{
    Eigen::VectorXd y(2);
    y << 1.0, 2.0;
    EXPECT_THROW(GaussianProcess(column({0.0, 1.0}), y, hyper(-1.0, {1.0}, 1e-6)), InvalidArgument);
    EXPECT_THROW(GaussianProcess(column({0.0}), y, hyper(1.0, {1.0}, 1e-6)), InvalidArgument);
    EXPECT_THROW(GaussianProcess(column({0.0, 1.0}), y, hyper(1.0, {1.0, 1.0}, 1e-6)), InvalidArgument);
}

TEST(MarginalLikelihood, MatchesGaussianProcessValue)
{
    std::mt19937_64 rng(3);
    const auto h = hyper(1.4, {0.7}, 0.05);
    const auto [X, y] = gp_draw(rng, 25, h);
    const MarginalLikelihood lml(X, y);
    const GaussianProcess gp(X, y, h);
    EXPECT_NEAR(lml(h.to_log()), gp.log_marginal_likelihood(), 1e-9 * std::abs(gp.log_marginal_likelihood()));
}

TEST(MarginalLikelihood, GradientMatchesCentralDifferences)
{
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::MatrixXd X(20, 3);
    for (Eigen::Index i = 0; i < X.size(); ++i)
        X.data()[i] = n(rng);
    Eigen::VectorXd y(20);
    for (Eigen::Index i = 0; i < 20; ++i)
        y[i] = std::sin(X(i, 0)) + 0.3 * X(i, 1) + 0.1 * n(rng);
    const MarginalLikelihood lml(X, y);
    for (int trial = 0; trial < 10; ++trial) {
        Eigen::VectorXd theta(5);
        for (int l = 0; l < 5; ++l)
            theta[l] = 0.5 * n(rng);
        theta[4] -= 3.0;
        Eigen::VectorXd grad;
        lml(theta, &grad);
        const auto numeric = finite_difference_gradient([&](const Eigen::VectorXd& t) { return lml(t); }, theta, 1e-5);
        for (int l = 0; l < 5; ++l)
            EXPECT_NEAR(grad[l], numeric[l], 1e-6 * std::max(1.0, std::abs(grad[l])));
    }
}

TEST(TrainGp, RecoversKnownLengthscale)
{
    std::mt19937_64 rng(5);
    const auto truth = hyper(1.0, {0.5}, 1e-2);
    const auto [X, y] = gp_draw(rng, 200, truth);
    const auto trained = train_gp(X, y);
    const double log_l = std::log(trained.gp.hyperparameters().lengthscales[0]);
    EXPECT_NEAR(log_l, std::log(0.5), 0.3);
}

TEST(TrainGp, ConstantTargetsTerminate)
{
    Eigen::MatrixXd X(12, 2);
    for (Eigen::Index i = 0; i < 12; ++i) {
        X(i, 0) = 0.1 * static_cast<double>(i);
        X(i, 1) = std::cos(static_cast<double>(i));
    }
    const auto trained = train_gp(X, Eigen::VectorXd::Constant(12, 3.0));
    EXPECT_TRUE(std::isfinite(trained.log_marginal_likelihood));
    Eigen::VectorXd x(2);
    x << 0.55, 0.0;
    EXPECT_NEAR(trained.gp.predict(x).mean, 3.0, 0.5);
    EXPECT_NO_THROW(train_gp(X, Eigen::VectorXd::Zero(12)));
}

TEST(TrainGp, MoreRestartsNeverWorse)
{
    std::mt19937_64 rng(6);
    const auto [X, y] = gp_draw(rng, 40, hyper(2.0, {0.3}, 1e-3));
    GPTrainOptions one;
    one.restarts = 1;
    GPTrainOptions four;
    four.restarts = 4;
    const auto a = train_gp(X, y, one);
    const auto b = train_gp(X, y, four);
    EXPECT_GE(b.log_marginal_likelihood, a.log_marginal_likelihood);
    EXPECT_EQ(b.restart_lml[0], a.restart_lml[0]);
    const auto c = train_gp(X, y, four);
    EXPECT_EQ(b.restart_lml, c.restart_lml);
}

TEST(TrainGp, SinglePoint)
{
    Eigen::MatrixXd X(1, 3);
    X << 0.0, 0.0, 0.0;
    Eigen::VectorXd y(1);
    y << 4.0;
    EXPECT_NO_THROW(train_gp(X, y));
}

TEST(FeatureStandardizer, ZScores)
{
    Eigen::MatrixXd X(4, 2);
    X << 1.0, 5.0, 2.0, 5.0, 3.0, 5.0, 4.0, 5.0;
    const auto s = FeatureStandardizer::fit(X);
    EXPECT_DOUBLE_EQ(s.mean[0], 2.5);
    EXPECT_NEAR(s.scale[0], std::sqrt(5.0 / 3.0), 1e-15);
    EXPECT_EQ(s.scale[1], 1.0);
    const auto Z = s.transform_rows(X);
    EXPECT_NEAR(Z.col(0).sum(), 0.0, 1e-12);
    EXPECT_EQ(Z.col(1).cwiseAbs().maxCoeff(), 0.0);
}

TEST(ScoreEmulator, TrainingBox)
{
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::MatrixXd X(20, 3), S(20, 2);
    for (Eigen::Index i = 0; i < 20; ++i) {
        X.row(i) << 40.0 + 80.0 * u(rng), 100.0 + 150.0 * u(rng), 250.0 + 80.0 * u(rng);
        S.row(i) << X(i, 0) * 0.5, std::sin(X(i, 1) / 30.0);
    }
    GPTrainOptions opt;
    opt.restarts = 2;
    const auto t = train_emulator(X, S, opt);
    EXPECT_EQ(t.emulator.n_scores(), 2);
    EXPECT_TRUE(t.emulator.inside_training_box(X.row(3).transpose()));
    Eigen::Vector3d out(200.0, 150.0, 300.0);
    EXPECT_FALSE(t.emulator.inside_training_box(out));
    EXPECT_NEAR(t.emulator.predict(0, X.row(5).transpose()).mean, S(5, 0), 0.5);
}
