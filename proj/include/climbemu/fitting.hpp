#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "climbemu/error.hpp"
#include "climbemu/monotone.hpp"
#include "climbemu/parallel.hpp"
#include "climbemu/trajectory.hpp"

namespace climbemu {

struct FitConfig {
    int n_w = 10;
    double eta = 0.02;
    double rho = 1e-8;
    int max_iters = 20000;
    double rel_tol = 1e-6;
    int patience = 50;

    /// Optional progress callback (id, iteration, loss), called every
    /// `progress_every` iterations. May be invoked from several threads.
    std::function<void(const std::string&, int, double)> progress;
    int progress_every = 100;

    void validate() const
    {
        if (n_w < 1)
            throw InvalidArgument("n_w must be >= 1");
        if (!(eta > 0.0) || !(rho > 0.0))
            throw InvalidArgument("eta and rho must be positive");
        if (max_iters < 1)
            throw InvalidArgument("max_iters must be >= 1");
        if (!(rel_tol > 0.0 && rel_tol < 1.0))
            throw InvalidArgument("rel_tol must lie in (0, 1)");
        if (patience < 1)
            throw InvalidArgument("patience must be >= 1");
    }
};

struct FitResult {
    MonotoneCoefficients coefficients;
    double final_loss = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// RSS loss of one normalized trajectory with its analytic gradient over the
/// packed parameters y = [beta1, a0, a, b]. The integrals at the observation
/// times use exactly the Simpson rule of MonotoneCurve, so the gradient is
/// the exact derivative of the discretized loss.
///
/// With I_j = int_0^{t_j} exp(W) ds and residuals r_j = f_j^obs - f_j,
///   dL/dbeta1 = -2 sum_j r_j I_j
///   dL/dtheta = -2 beta1 sum_j r_j int_0^{t_j} exp(W(s)) dW/dtheta(s) ds
/// where dW/dtheta is integrated_fourier_row. The second sum is folded into
/// one weighted pass over the quadrature points.
class RssObjective {
public:
    RssObjective(const Trajectory& normalized, std::shared_ptr<const FourierQuadrature> quad)
        : quad_(std::move(quad))
    {
        const auto& obs = normalized.observations;
        if (obs.empty())
            throw InvalidArgument("trajectory has no observations");
        const int n_w = quad_->n_w();
        const auto p = 2 * n_w + 1;
        const auto n = static_cast<Eigen::Index>(obs.size());
        beta0_ = obs.front().f;
        levels_.resize(n);
        pair_.resize(obs.size());
        len_.resize(n);
        mid_rows_.resize(n, p);
        end_rows_.resize(n, p);
        max_pair_ = 0;
        for (Eigen::Index j = 0; j < n; ++j) {
            const double t = checked_unit_time(obs[j].t);
            levels_[j] = obs[j].f;
            const int m = quad_->pair_index(t);
            const double s0 = quad_->node(2 * m);
            pair_[j] = m;
            len_[j] = std::max(t - s0, 0.0);
            integrated_fourier_row(s0 + 0.5 * len_[j], n_w, mid_rows_.row(j));
            integrated_fourier_row(t, n_w, end_rows_.row(j));
            max_pair_ = std::max(max_pair_, m + (len_[j] > 0.0 ? 1 : 0));
        }
        max_pair_ = std::min(max_pair_, quad_->pairs());
        node_rows_ = 2 * max_pair_ + 1;
    }

    double beta0() const { return beta0_; }
    int n_w() const { return quad_->n_w(); }
    std::size_t size() const { return pair_.size(); }

    /// Loss at y; writes dL/dy into *grad when non-null.
    double operator()(const Eigen::Ref<const Eigen::VectorXd>& y, Eigen::VectorXd* grad = nullptr) const
    {
        const auto p = 2 * quad_->n_w() + 1;
        if (y.size() != p + 1)
            throw InvalidArgument("parameter vector has the wrong length");
        const double beta1 = y[0];
        const auto theta = y.tail(p);
        const double h = quad_->step();

        const auto nodes = quad_->node_basis().topRows(node_rows_);
        Eigen::VectorXd g = nodes * theta;
        check_and_exp(g, [&](Eigen::Index i) { return quad_->node(static_cast<int>(i)); });
        Eigen::VectorXd g_mid = mid_rows_ * theta;
        check_and_exp(g_mid, [&](Eigen::Index j) { return quad_->node(2 * pair_[j]) + 0.5 * len_[j]; });
        Eigen::VectorXd g_end = end_rows_ * theta;
        check_and_exp(g_end, [&](Eigen::Index j) { return quad_->node(2 * pair_[j]) + len_[j]; });

        std::vector<double> cumulative(max_pair_ + 1);
        cumulative[0] = 0.0;
        for (int m = 0; m < max_pair_; ++m)
            cumulative[m + 1] = cumulative[m] + h / 3.0 * (g[2 * m] + 4.0 * g[2 * m + 1] + g[2 * m + 2]);

        const auto n = levels_.size();
        Eigen::VectorXd integral(n);
        Eigen::VectorXd residual(n);
        double loss = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            const int m = pair_[j];
            double I = cumulative[m];
            if (len_[j] > 0.0)
                I += len_[j] / 6.0 * (g[2 * m] + 4.0 * g_mid[j] + g_end[j]);
            integral[j] = I;
            residual[j] = levels_[j] - (beta0_ + beta1 * I);
            loss += residual[j] * residual[j];
        }
        if (!std::isfinite(loss))
            throw Error("non-finite RSS loss");
        if (grad == nullptr)
            return loss;

        // Node weights: residuals summed over every observation whose
        // cumulative integral includes the Simpson pair, plus each
        // observation's own partial panel.
        Eigen::VectorXd node_weight = Eigen::VectorXd::Zero(node_rows_);
        std::vector<double> pair_residual(max_pair_ + 1, 0.0);
        for (Eigen::Index j = 0; j < n; ++j) {
            pair_residual[pair_[j]] += residual[j];
            if (len_[j] > 0.0)
                node_weight[2 * pair_[j]] += residual[j] * len_[j] / 6.0;
        }
        double suffix = 0.0;
        for (int m = max_pair_ - 1; m >= 0; --m) {
            suffix += pair_residual[m + 1];
            node_weight[2 * m] += h / 3.0 * suffix;
            node_weight[2 * m + 1] += 4.0 * h / 3.0 * suffix;
            node_weight[2 * m + 2] += h / 3.0 * suffix;
        }
        const Eigen::VectorXd mid_weight = (residual.array() * len_.array() * (4.0 / 6.0) * g_mid.array()).matrix();
        const Eigen::VectorXd end_weight = (residual.array() * len_.array() * (1.0 / 6.0) * g_end.array()).matrix();

        grad->resize(p + 1);
        (*grad)[0] = -2.0 * residual.dot(integral);
        grad->tail(p) = -2.0 * beta1 *
                        (nodes.transpose() * node_weight.cwiseProduct(g) + mid_rows_.transpose() * mid_weight +
                         end_rows_.transpose() * end_weight);
        return loss;
    }

private:
    template <class Where>
    static void check_and_exp(Eigen::VectorXd& v, Where where)
    {
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            if (!(v[i] <= max_log_slope))
                throw QuadratureOverflow(where(i), v[i]);
            v[i] = std::exp(v[i]);
        }
    }

    std::shared_ptr<const FourierQuadrature> quad_;
    double beta0_ = 0.0;
    Eigen::VectorXd levels_;
    std::vector<int> pair_;
    Eigen::VectorXd len_;
    Eigen::MatrixXd mid_rows_;
    Eigen::MatrixXd end_rows_;
    int max_pair_ = 0;
    Eigen::Index node_rows_ = 1;
};

/// Sum of squared residuals between the observations and the curve, with the
/// curve evaluated through eval_trajectory. beta0 is taken from `c`.
inline double rss_loss(const Trajectory& normalized, const MonotoneCoefficients& c, QuadratureConfig q = {})
{
    const MonotoneCurve curve(c, q);
    double loss = 0.0;
    for (const auto& o : normalized.observations) {
        const double r = o.f - curve(o.t);
        loss += r * r;
    }
    return loss;
}

/// Gradient of rss_loss over [beta1, a0, a, b]; beta0 is pinned to the first observation.
inline Eigen::VectorXd loss_gradient(const Trajectory& normalized, const MonotoneCoefficients& c,
                                     QuadratureConfig q = {})
{
    const RssObjective objective(normalized, std::make_shared<const FourierQuadrature>(c.n_w(), q));
    Eigen::VectorXd grad;
    objective(c.to_vector(), &grad);
    return grad;
}

/// In-place Adagrad update: G += g^2, y -= eta * g / sqrt(G + rho).
inline void adagrad_update(Eigen::Ref<Eigen::VectorXd> params, const Eigen::Ref<const Eigen::VectorXd>& grads,
                           Eigen::Ref<Eigen::VectorXd> accumulator, double eta, double rho)
{
    if (params.size() != grads.size() || params.size() != accumulator.size())
        throw InvalidArgument("adagrad: parameter, gradient and accumulator lengths differ");
    if (!grads.allFinite())
        throw InvalidArgument("adagrad: non-finite gradient");
    accumulator.array() += grads.array().square();
    params.array() -= eta * grads.array() / (accumulator.array() + rho).sqrt();
}

inline std::pair<Eigen::VectorXd, Eigen::VectorXd> adagrad_step(const Eigen::VectorXd& params,
                                                                 const Eigen::VectorXd& grads,
                                                                 const Eigen::VectorXd& accumulator, double eta,
                                                                 double rho)
{
    if ((accumulator.array() < 0.0).any())
        throw InvalidArgument("adagrad: accumulator entries must be non-negative");
    auto out = std::make_pair(params, accumulator);
    adagrad_update(out.first, grads, out.second, eta, rho);
    return out;
}

/// Starting point: straight line through the first and last observations.
inline MonotoneCoefficients initial_coefficients(const Trajectory& normalized, int n_w)
{
    const auto& obs = normalized.observations;
    const double span = obs.back().t - obs.front().t;
    const double rise = obs.back().f - obs.front().f;
    return MonotoneCoefficients::linear(obs.front().f, span > 0.0 ? rise / span : rise, n_w);
}

inline FitResult fit_trajectory(const Trajectory& normalized, const FitConfig& cfg,
                                std::shared_ptr<const FourierQuadrature> quad)
{
    cfg.validate();
    if (quad->n_w() != cfg.n_w)
        throw InvalidArgument("quadrature grid and fit config disagree on n_w");
    const RssObjective objective(normalized, quad);

    // Adagrad moves every coordinate by roughly eta per step, so beta1 is
    // optimized in units of the trajectory's total rise (all coordinates O(1)).
    const auto init = initial_coefficients(normalized, cfg.n_w);
    const double rise = normalized.observations.back().f - normalized.observations.front().f;
    const double scale = rise > 0.0 ? rise : std::max(std::abs(init.beta1), 1.0);

    Eigen::VectorXd y = init.to_vector();
    y[0] /= scale;
    Eigen::VectorXd grad;
    const auto evaluate = [&](const Eigen::VectorXd& scaled, Eigen::VectorXd& g) {
        Eigen::VectorXd physical = scaled;
        physical[0] *= scale;
        const double value = objective(physical, &g);
        g[0] *= scale;
        return value;
    };
    double loss = evaluate(y, grad);
    if (!std::isfinite(loss))
        throw Error("flight '" + normalized.id + "': non-finite loss at initialization");

    Eigen::VectorXd accumulator = Eigen::VectorXd::Zero(y.size());
    Eigen::VectorXd best = y;
    double best_loss = loss;
    std::vector<double> history;
    history.reserve(static_cast<std::size_t>(std::min(cfg.max_iters, 100000)) + 1);
    history.push_back(loss);

    FitResult result;
    int iter = 0;
    while (iter < cfg.max_iters && loss > 0.0) {
        adagrad_update(y, grad, accumulator, cfg.eta, cfg.rho);
        ++iter;
        try {
            loss = evaluate(y, grad);
        } catch (const QuadratureOverflow&) {
            break;
        }
        history.push_back(loss);
        if (loss < best_loss) {
            best_loss = loss;
            best = y;
        }
        if (cfg.progress && iter % cfg.progress_every == 0)
            cfg.progress(normalized.id, iter, loss);
        if (iter >= cfg.patience) {
            const double before = history[static_cast<std::size_t>(iter - cfg.patience)];
            if (before <= 0.0 || (before - loss) / before < cfg.rel_tol) {
                result.converged = true;
                break;
            }
        }
    }
    if (loss == 0.0)
        result.converged = true;

    best[0] *= scale;
    result.coefficients = MonotoneCoefficients::from_vector(best, objective.beta0());
    result.final_loss = best_loss;
    result.iterations = iter;
    if (!(result.coefficients.beta1 > 0.0))
        result.converged = false;
    return result;
}

inline FitResult fit_trajectory(const Trajectory& normalized, const FitConfig& cfg, QuadratureConfig q = {})
{
    return fit_trajectory(normalized, cfg, std::make_shared<const FourierQuadrature>(cfg.n_w, q));
}

struct DatasetFit {
    std::vector<FitResult> results; ///< dataset order
    double epsilon_L = 0.0;         ///< sum of final losses

    Eigen::MatrixXd coefficient_matrix() const
    {
        if (results.empty())
            return {};
        Eigen::MatrixXd Y(static_cast<Eigen::Index>(results.size()), results.front().coefficients.packed_size());
        for (std::size_t i = 0; i < results.size(); ++i)
            Y.row(static_cast<Eigen::Index>(i)) = results[i].coefficients.to_vector().transpose();
        return Y;
    }
};

/// Fits every trajectory independently (in parallel); per-flight failures are
/// collected and reported together by id.
inline DatasetFit fit_dataset(std::span<const Trajectory> dataset, const FitConfig& cfg, QuadratureConfig q = {})
{
    cfg.validate();
    const auto quad = std::make_shared<const FourierQuadrature>(cfg.n_w, q);
    DatasetFit out;
    out.results.resize(dataset.size());
    std::vector<std::string> failures(dataset.size());
    parallel_for(dataset.size(), [&](std::size_t i) {
        try {
            out.results[i] = fit_trajectory(dataset[i], cfg, quad);
        } catch (const std::exception& e) {
            failures[i] = e.what();
        }
    });
    std::string report;
    for (std::size_t i = 0; i < dataset.size(); ++i)
        if (!failures[i].empty())
            report += "\n  " + dataset[i].id + ": " + failures[i];
    if (!report.empty())
        throw DataError("fitting failed for:" + report);
    for (const auto& r : out.results)
        out.epsilon_L += r.final_loss;
    return out;
}

} // namespace climbemu
