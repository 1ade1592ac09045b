#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "climbemu/error.hpp"
#include "climbemu/parallel.hpp"

namespace climbemu {

struct GPHyperparameters {
    double signal_variance = 1.0;
    Eigen::VectorXd lengthscales;
    double noise_variance = 1e-6;

    Eigen::Index dim() const { return lengthscales.size(); }

    void validate() const
    {
        if (!(signal_variance > 0.0) || !(noise_variance > 0.0) || lengthscales.size() < 1 ||
            !(lengthscales.array() > 0.0).all() || !std::isfinite(signal_variance) ||
            !std::isfinite(noise_variance) || !lengthscales.allFinite())
            throw InvalidArgument("GP hyperparameters must be finite and strictly positive");
    }

    /// [log signal_variance, log lengthscales..., log noise_variance]
    Eigen::VectorXd to_log() const
    {
        Eigen::VectorXd theta(dim() + 2);
        theta[0] = std::log(signal_variance);
        theta.segment(1, dim()) = lengthscales.array().log().matrix();
        theta[dim() + 1] = std::log(noise_variance);
        return theta;
    }

    static GPHyperparameters from_log(const Eigen::Ref<const Eigen::VectorXd>& theta)
    {
        const Eigen::Index d = theta.size() - 2;
        GPHyperparameters h;
        h.signal_variance = std::exp(theta[0]);
        h.lengthscales = theta.segment(1, d).array().exp().matrix();
        h.noise_variance = std::exp(theta[d + 1]);
        return h;
    }
};

namespace detail {

/// exp(-r2 / 2), cut to zero below 1e-100 so later products stay clear of
/// subnormal arithmetic.
inline double se_decay(double r2)
{
    return r2 > 460.0 ? 0.0 : std::exp(-0.5 * r2);
}

} // namespace detail

/// signal_variance * exp(-1/2 sum_d ((x1_d - x2_d) / l_d)^2)
inline double se_kernel(const Eigen::Ref<const Eigen::VectorXd>& x1, const Eigen::Ref<const Eigen::VectorXd>& x2,
                        const GPHyperparameters& hyper)
{
    if (x1.size() != x2.size() || x1.size() != hyper.dim())
        throw InvalidArgument("kernel input dimensions do not match");
    const double r2 = ((x1 - x2).array() / hyper.lengthscales.array()).square().sum();
    return hyper.signal_variance * detail::se_decay(r2);
}

/// Noise-free SE covariance between the rows of A and the rows of B.
inline Eigen::MatrixXd se_kernel_matrix(const Eigen::Ref<const Eigen::MatrixXd>& A,
                                        const Eigen::Ref<const Eigen::MatrixXd>& B, const GPHyperparameters& hyper)
{
    if (A.cols() != hyper.dim() || B.cols() != hyper.dim())
        throw InvalidArgument("kernel input dimensions do not match");
    const Eigen::ArrayXd inv_l = hyper.lengthscales.array().inverse();
    const Eigen::MatrixXd As = A * inv_l.matrix().asDiagonal();
    const Eigen::MatrixXd Bs = B * inv_l.matrix().asDiagonal();
    Eigen::MatrixXd K(A.rows(), B.rows());
    for (Eigen::Index j = 0; j < B.rows(); ++j)
        for (Eigen::Index i = 0; i < A.rows(); ++i)
            K(i, j) = hyper.signal_variance * detail::se_decay((As.row(i) - Bs.row(j)).squaredNorm());
    return K;
}

/// Symmetric training covariance; the lower triangle is mirrored so K == K^T exactly.
inline Eigen::MatrixXd se_kernel_matrix(const Eigen::Ref<const Eigen::MatrixXd>& X, const GPHyperparameters& hyper)
{
    const Eigen::ArrayXd inv_l = hyper.lengthscales.array().inverse();
    const Eigen::MatrixXd Xs = X * inv_l.matrix().asDiagonal();
    const Eigen::Index n = X.rows();
    Eigen::MatrixXd K(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        K(j, j) = hyper.signal_variance;
        for (Eigen::Index i = j + 1; i < n; ++i) {
            const double v = hyper.signal_variance * detail::se_decay((Xs.row(i) - Xs.row(j)).squaredNorm());
            K(i, j) = v;
            K(j, i) = v;
        }
    }
    return K;
}

inline constexpr double initial_jitter = 1e-8;
inline constexpr double max_jitter = 1e-4;

/// Exact zero-mean GP regression with a factorized K(X,X) + noise + jitter.
class GaussianProcess {
public:
    GaussianProcess() = default;

    GaussianProcess(Eigen::MatrixXd X, Eigen::VectorXd targets, GPHyperparameters hyper)
        : X_(std::move(X)), y_(std::move(targets)), hyper_(std::move(hyper))
    {
        hyper_.validate();
        if (X_.rows() < 1 || X_.rows() != y_.size())
            throw InvalidArgument("GP needs at least one input with a matching target");
        if (X_.cols() != hyper_.dim())
            throw InvalidArgument("GP input dimension does not match the lengthscales");
        if (!y_.allFinite() || !X_.allFinite())
            throw InvalidArgument("GP training data must be finite");

        const Eigen::MatrixXd K = se_kernel_matrix(X_, hyper_);
        for (double rel = initial_jitter; rel <= max_jitter * 1.0000001; rel *= 10.0) {
            Eigen::MatrixXd Kn = K;
            Kn.diagonal().array() += hyper_.noise_variance + rel * hyper_.signal_variance;
            llt_.compute(Kn);
            if (llt_.info() == Eigen::Success) {
                jitter_ = rel * hyper_.signal_variance;
                alpha_ = llt_.solve(y_);
                return;
            }
        }
        throw NotPositiveDefinite("training covariance is not positive definite after jitter escalation");
    }

    const Eigen::MatrixXd& inputs() const { return X_; }
    const Eigen::VectorXd& targets() const { return y_; }
    const GPHyperparameters& hyperparameters() const { return hyper_; }
    double jitter() const { return jitter_; }
    Eigen::Index size() const { return X_.rows(); }

    struct Prediction {
        double mean = 0.0;
        double variance = 0.0; ///< latent (noise-free) posterior variance
    };

    Prediction predict(const Eigen::Ref<const Eigen::VectorXd>& x_star) const
    {
        if (x_star.size() != X_.cols())
            throw InvalidArgument("prediction input dimension does not match the training inputs");
        Eigen::VectorXd k(X_.rows());
        for (Eigen::Index i = 0; i < X_.rows(); ++i)
            k[i] = se_kernel(X_.row(i).transpose(), x_star, hyper_);
        Prediction p;
        p.mean = k.dot(alpha_);
        const Eigen::VectorXd v = llt_.matrixL().solve(k);
        p.variance = hyper_.signal_variance - v.squaredNorm();
        if (p.variance < 0.0) {
            if (p.variance < -1e-10 * std::max(1.0, hyper_.signal_variance))
                throw InternalInconsistency("negative GP posterior variance");
            p.variance = 0.0;
        }
        return p;
    }

    double log_marginal_likelihood() const
    {
        const double n = static_cast<double>(y_.size());
        return -0.5 * y_.dot(alpha_) - llt_.matrixLLT().diagonal().array().log().sum() -
               0.5 * n * std::log(2.0 * std::numbers::pi);
    }

private:
    Eigen::MatrixXd X_;
    Eigen::VectorXd y_;
    GPHyperparameters hyper_;
    double jitter_ = 0.0;
    Eigen::LLT<Eigen::MatrixXd> llt_;
    Eigen::VectorXd alpha_;
};

/// Log marginal likelihood as a function of log-hyperparameters, with its
/// analytic gradient  1/2 tr((a a^T - K^-1) dK/dtheta).
class MarginalLikelihood {
public:
    MarginalLikelihood(Eigen::MatrixXd X, Eigen::VectorXd y) : X_(std::move(X)), y_(std::move(y))
    {
        const Eigen::Index n = X_.rows();
        sqdist_.resize(X_.cols());
        for (Eigen::Index d = 0; d < X_.cols(); ++d) {
            sqdist_[d].resize(n, n);
            for (Eigen::Index j = 0; j < n; ++j)
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double diff = X_(i, d) - X_(j, d);
                    sqdist_[d](i, j) = diff * diff;
                }
        }
    }

    Eigen::Index dim() const { return X_.cols(); }
    Eigen::Index parameter_count() const { return X_.cols() + 2; }
    const Eigen::MatrixXd& inputs() const { return X_; }
    const Eigen::VectorXd& targets() const { return y_; }

    /// -inf when the covariance cannot be factorized at the base jitter.
    double operator()(const Eigen::Ref<const Eigen::VectorXd>& theta, Eigen::VectorXd* grad = nullptr) const
    {
        const auto hyper = GPHyperparameters::from_log(theta);
        const Eigen::Index n = X_.rows();
        Eigen::MatrixXd Kse = Eigen::MatrixXd::Zero(n, n);
        Eigen::MatrixXd r2 = Eigen::MatrixXd::Zero(n, n);
        for (Eigen::Index d = 0; d < dim(); ++d)
            r2 += sqdist_[d] / (hyper.lengthscales[d] * hyper.lengthscales[d]);
        Kse = hyper.signal_variance * r2.unaryExpr([](double v) { return detail::se_decay(v); });

        Eigen::MatrixXd K = Kse;
        const double jitter = initial_jitter * hyper.signal_variance;
        K.diagonal().array() += hyper.noise_variance + jitter;
        const Eigen::LLT<Eigen::MatrixXd> llt(K);
        if (llt.info() != Eigen::Success)
            return -std::numeric_limits<double>::infinity();
        const Eigen::VectorXd alpha = llt.solve(y_);
        const double value = -0.5 * y_.dot(alpha) - llt.matrixLLT().diagonal().array().log().sum() -
                             0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
        if (grad == nullptr)
            return value;

        const Eigen::MatrixXd Kinv = llt.solve(Eigen::MatrixXd::Identity(n, n));
        const Eigen::MatrixXd W = alpha * alpha.transpose() - Kinv;
        grad->resize(parameter_count());
        (*grad)[0] = 0.5 * ((W.array() * Kse.array()).sum() + jitter * W.trace());
        for (Eigen::Index d = 0; d < dim(); ++d) {
            const double inv_l2 = 1.0 / (hyper.lengthscales[d] * hyper.lengthscales[d]);
            (*grad)[d + 1] = 0.5 * inv_l2 * (W.array() * Kse.array() * sqdist_[d].array()).sum();
        }
        (*grad)[dim() + 1] = 0.5 * hyper.noise_variance * W.trace();
        return value;
    }

private:
    Eigen::MatrixXd X_;
    Eigen::VectorXd y_;
    std::vector<Eigen::MatrixXd> sqdist_;
};

struct GPTrainOptions {
    int restarts = 8;
    std::uint64_t seed = 0;
    int max_iters = 100;
    double min_step = 1e-6; ///< log-space step length at which a line search gives up
    double rel_tol = 1e-9;  ///< relative improvement below which a restart stops
};

struct TrainedGP {
    GaussianProcess gp;
    double log_marginal_likelihood = 0.0;
    std::vector<double> restart_lml; ///< best value reached by each restart
};

namespace detail {

/// Box in log-hyperparameter space, scaled by the targets' second moment.
struct LogBounds {
    Eigen::VectorXd lo;
    Eigen::VectorXd hi;

    Eigen::VectorXd clamp(const Eigen::VectorXd& theta) const { return theta.cwiseMax(lo).cwiseMin(hi); }
};

inline LogBounds log_bounds(Eigen::Index dim, double scale)
{
    LogBounds b;
    b.lo.resize(dim + 2);
    b.hi.resize(dim + 2);
    const double ls = std::log(scale);
    b.lo[0] = ls + std::log(1e-6);
    b.hi[0] = ls + std::log(1e4);
    b.lo.segment(1, dim).setConstant(std::log(1e-2));
    b.hi.segment(1, dim).setConstant(std::log(1e2));
    b.lo[dim + 1] = ls + std::log(1e-10);
    b.hi[dim + 1] = ls + std::log(10.0);
    return b;
}

/// Quasi-Newton (BFGS) ascent in log space, projected onto the bounds, with
/// Armijo backtracking. Stops when a step no longer improves the value.
inline std::pair<Eigen::VectorXd, double> ascend(const MarginalLikelihood& lml, Eigen::VectorXd theta,
                                                  const LogBounds& bounds, const GPTrainOptions& opt)
{
    theta = bounds.clamp(theta);
    Eigen::VectorXd grad;
    double value = lml(theta, &grad);
    if (!std::isfinite(value))
        return {theta, value};
    const Eigen::Index p = theta.size();
    Eigen::MatrixXd H = Eigen::MatrixXd::Identity(p, p);
    bool scaled = false;
    for (int iter = 0; iter < opt.max_iters; ++iter) {
        if (!grad.allFinite())
            break;
        Eigen::VectorXd dir = H * grad;
        if (!scaled) {
            const double norm = dir.norm();
            if (!(norm > 0.0))
                break;
            dir *= std::min(1.0, 0.5 / norm);
        }
        if (grad.dot(dir) <= 0.0) {
            H.setIdentity();
            scaled = false;
            dir = grad * std::min(1.0, 0.5 / grad.norm());
        }
        double t = 1.0;
        bool moved = false;
        Eigen::VectorXd trial;
        Eigen::VectorXd trial_grad;
        double trial_value = value;
        // The full step is usually accepted, so its gradient comes with the value.
        for (int k = 0; k < 30; ++k, t *= 0.5) {
            trial = bounds.clamp(theta + t * dir);
            const Eigen::VectorXd s = trial - theta;
            if (s.norm() < opt.min_step)
                break;
            trial_value = k == 0 ? lml(trial, &trial_grad) : lml(trial);
            if (std::isfinite(trial_value) && trial_value >= value + 1e-4 * grad.dot(s)) {
                moved = true;
                if (k > 0)
                    trial_value = lml(trial, &trial_grad);
                break;
            }
        }
        if (!moved)
            break;
        const Eigen::VectorXd s = trial - theta;
        const Eigen::VectorXd y = grad - trial_grad; // gradient change of the negated objective
        const double improvement = trial_value - value;
        theta = trial;
        value = trial_value;
        grad = trial_grad;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            if (!scaled) {
                H = Eigen::MatrixXd::Identity(p, p) * (sy / y.squaredNorm());
                scaled = true;
            }
            const double r = 1.0 / sy;
            const Eigen::MatrixXd V = Eigen::MatrixXd::Identity(p, p) - r * y * s.transpose();
            H = V.transpose() * H * V + r * s * s.transpose();
        }
        if (improvement < opt.rel_tol * (1.0 + std::abs(value)))
            break;
    }
    return {theta, value};
}

} // namespace detail

/// Maximizes the log marginal likelihood over log-hyperparameters from
/// `restarts` starting points. Restart r always starts from the same point
/// for a given seed, so more restarts never lower the best value.
inline TrainedGP train_gp(const Eigen::Ref<const Eigen::MatrixXd>& X, const Eigen::Ref<const Eigen::VectorXd>& y,
                          const GPTrainOptions& opt = {})
{
    if (X.rows() < 1 || X.rows() != y.size())
        throw InvalidArgument("GP training needs at least one input with a matching target");
    if (!y.allFinite() || !X.allFinite())
        throw InvalidArgument("GP training data must be finite");
    if (opt.restarts < 1)
        throw InvalidArgument("at least one restart is required");

    const Eigen::Index dim = X.cols();
    const double scale = std::max(y.squaredNorm() / static_cast<double>(y.size()), 1e-12);
    const auto bounds = detail::log_bounds(dim, scale);
    const MarginalLikelihood lml(X, y);

    std::vector<Eigen::VectorXd> best_theta(opt.restarts);
    std::vector<double> best_value(opt.restarts);
    for (int r = 0; r < opt.restarts; ++r) {
        Eigen::VectorXd theta(dim + 2);
        if (r == 0) {
            theta[0] = std::log(scale);
            theta.segment(1, dim).setZero();
            theta[dim + 1] = std::log(scale) + std::log(1e-2);
        } else {
            std::seed_seq seq{static_cast<std::uint32_t>(opt.seed), static_cast<std::uint32_t>(opt.seed >> 32),
                              static_cast<std::uint32_t>(r)};
            std::mt19937_64 rng(seq);
            std::uniform_real_distribution<double> u(0.0, 1.0);
            theta[0] = std::log(scale) + (2.0 * u(rng) - 1.0);
            for (Eigen::Index d = 0; d < dim; ++d)
                theta[d + 1] = std::log(0.2) + u(rng) * (std::log(5.0) - std::log(0.2));
            theta[dim + 1] = std::log(scale) - 9.0 + 8.0 * u(rng);
        }
        std::tie(best_theta[r], best_value[r]) = detail::ascend(lml, theta, bounds, opt);
    }

    int best = -1;
    for (int r = 0; r < opt.restarts; ++r)
        if (std::isfinite(best_value[r]) && (best < 0 || best_value[r] > best_value[best]))
            best = r;
    if (best < 0)
        throw NotPositiveDefinite("no restart produced a factorizable covariance");

    TrainedGP out{GaussianProcess(X, y, GPHyperparameters::from_log(best_theta[best])), best_value[best], best_value};
    return out;
}

/// z-score standardization of the features, fitted on the training set.
struct FeatureStandardizer {
    Eigen::VectorXd mean;
    Eigen::VectorXd scale;

    static FeatureStandardizer fit(const Eigen::Ref<const Eigen::MatrixXd>& X)
    {
        FeatureStandardizer s;
        s.mean = X.colwise().mean().transpose();
        s.scale.resize(X.cols());
        for (Eigen::Index d = 0; d < X.cols(); ++d) {
            const double var = X.rows() > 1 ? (X.col(d).array() - s.mean[d]).square().sum() / (X.rows() - 1) : 0.0;
            const double sd = std::sqrt(var);
            s.scale[d] = sd > 0.0 ? sd : 1.0;
        }
        return s;
    }

    Eigen::VectorXd transform(const Eigen::Ref<const Eigen::VectorXd>& x) const
    {
        if (x.size() != mean.size())
            throw InvalidArgument("feature vector has the wrong dimension");
        return ((x - mean).array() / scale.array()).matrix();
    }

    Eigen::MatrixXd transform_rows(const Eigen::Ref<const Eigen::MatrixXd>& X) const
    {
        Eigen::MatrixXd out(X.rows(), X.cols());
        for (Eigen::Index i = 0; i < X.rows(); ++i)
            out.row(i) = transform(X.row(i).transpose()).transpose();
        return out;
    }
};

/// One independent GP per retained PC score over standardized features.
class ScoreEmulator {
public:
    ScoreEmulator() = default;

    ScoreEmulator(FeatureStandardizer standardizer, std::vector<GaussianProcess> gps, Eigen::VectorXd lower,
                  Eigen::VectorXd upper)
        : standardizer_(std::move(standardizer)), gps_(std::move(gps)), lower_(std::move(lower)),
          upper_(std::move(upper))
    {
        if (gps_.empty())
            throw InvalidArgument("emulator needs at least one score GP");
    }

    const FeatureStandardizer& standardizer() const { return standardizer_; }
    const std::vector<GaussianProcess>& gps() const { return gps_; }
    int n_scores() const { return static_cast<int>(gps_.size()); }
    const Eigen::VectorXd& feature_lower() const { return lower_; }
    const Eigen::VectorXd& feature_upper() const { return upper_; }

    /// Posterior for score k at raw (unstandardized) features.
    GaussianProcess::Prediction predict(int k, const Eigen::Ref<const Eigen::VectorXd>& features) const
    {
        return gps_.at(static_cast<std::size_t>(k)).predict(standardizer_.transform(features));
    }

    double noise_variance(int k) const
    {
        return gps_.at(static_cast<std::size_t>(k)).hyperparameters().noise_variance;
    }

    /// True when every feature lies within the training min/max box.
    bool inside_training_box(const Eigen::Ref<const Eigen::VectorXd>& features) const
    {
        return (features.array() >= lower_.array()).all() && (features.array() <= upper_.array()).all();
    }

private:
    FeatureStandardizer standardizer_;
    std::vector<GaussianProcess> gps_;
    Eigen::VectorXd lower_;
    Eigen::VectorXd upper_;
};

struct EmulatorTraining {
    ScoreEmulator emulator;
    std::vector<double> log_marginal_likelihoods;
};

/// Trains one GP per column of `scores` (scores are independent, trained in parallel).
inline EmulatorTraining train_emulator(const Eigen::Ref<const Eigen::MatrixXd>& features,
                                       const Eigen::Ref<const Eigen::MatrixXd>& scores, const GPTrainOptions& opt = {})
{
    if (features.rows() != scores.rows())
        throw InvalidArgument("features and scores are not aligned");
    auto standardizer = FeatureStandardizer::fit(features);
    const Eigen::MatrixXd Xs = standardizer.transform_rows(features);
    const auto n_c = static_cast<std::size_t>(scores.cols());
    std::vector<TrainedGP> trained(n_c);
    parallel_for(n_c, [&](std::size_t k) {
        auto per_score = opt;
        per_score.seed = opt.seed + 7919 * static_cast<std::uint64_t>(k);
        trained[k] = train_gp(Xs, scores.col(static_cast<Eigen::Index>(k)), per_score);
    });
    std::vector<GaussianProcess> gps;
    EmulatorTraining out;
    for (auto& t : trained) {
        gps.push_back(std::move(t.gp));
        out.log_marginal_likelihoods.push_back(t.log_marginal_likelihood);
    }
    out.emulator = ScoreEmulator(std::move(standardizer), std::move(gps), features.colwise().minCoeff().transpose(),
                                 features.colwise().maxCoeff().transpose());
    return out;
}

} // namespace climbemu
