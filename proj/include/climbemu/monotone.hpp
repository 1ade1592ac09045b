#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "climbemu/error.hpp"

namespace climbemu {

/// Coefficients of the monotone integral representation
///
///     f(t) = beta0 + beta1 * int_0^t exp(W(s)) ds,   W(s) = int_0^s w(u) du,
///     w(t) = a0 + sum_k a_k cos(2 pi k t) + b_k sin(2 pi k t),
///
/// on normalized time t in [0, 1]. The packed parameter vector used by the
/// fitter and the PCA is y = [beta1, a0, a_1..a_n, b_1..b_n]; beta0 is pinned
/// to the initial flight level and never part of y.
struct MonotoneCoefficients {
    double beta0 = 0.0;
    double beta1 = 0.0;
    double a0 = 0.0;
    Eigen::VectorXd a;
    Eigen::VectorXd b;

    MonotoneCoefficients() = default;

    MonotoneCoefficients(double beta0_, double beta1_, double a0_, Eigen::VectorXd a_, Eigen::VectorXd b_)
        : beta0(beta0_), beta1(beta1_), a0(a0_), a(std::move(a_)), b(std::move(b_))
    {
        validate();
    }

    /// Zero weight function (straight line) of the given Fourier order.
    static MonotoneCoefficients linear(double beta0, double beta1, int n_w)
    {
        return {beta0, beta1, 0.0, Eigen::VectorXd::Zero(n_w), Eigen::VectorXd::Zero(n_w)};
    }

    int n_w() const { return static_cast<int>(a.size()); }
    Eigen::Index packed_size() const { return 2 * a.size() + 2; }

    static Eigen::Index packed_size(int n_w) { return 2 * static_cast<Eigen::Index>(n_w) + 2; }

    Eigen::VectorXd to_vector() const
    {
        Eigen::VectorXd y(packed_size());
        y << beta1, a0, a, b;
        return y;
    }

    static MonotoneCoefficients from_vector(const Eigen::Ref<const Eigen::VectorXd>& y, double beta0)
    {
        if (y.size() < 4 || y.size() % 2 != 0)
            throw InvalidArgument("packed coefficient vector must have even length 2*n_w + 2 >= 4");
        const Eigen::Index n = (y.size() - 2) / 2;
        return {beta0, y[0], y[1], y.segment(2, n), y.segment(2 + n, n)};
    }

    /// [a0, a, b], the coefficients of W's basis.
    Eigen::VectorXd weight_coefficients() const
    {
        Eigen::VectorXd theta(2 * a.size() + 1);
        theta << a0, a, b;
        return theta;
    }

    void validate() const
    {
        if (a.size() != b.size() || a.size() < 1)
            throw InvalidArgument("cosine and sine coefficient vectors must share a length n_w >= 1");
        if (!std::isfinite(beta0) || !std::isfinite(beta1) || !std::isfinite(a0) || !a.allFinite() ||
            !b.allFinite())
            throw InvalidArgument("monotone coefficients must be finite");
    }
};

struct QuadratureConfig {
    int n_quad = 512;

    void validate() const
    {
        if (n_quad < 16 || n_quad % 2 != 0)
            throw InvalidArgument("n_quad must be even and >= 16");
    }
};

/// W(s) above this value is treated as an overflow.
inline constexpr double max_log_slope = 30.0;

/// Fourier design vector [1, cos 2pi t, ..., cos 2pi n t, sin 2pi t, ..., sin 2pi n t].
inline Eigen::VectorXd fourier_design_vector(double t, int n_w)
{
    Eigen::VectorXd theta(2 * n_w + 1);
    theta[0] = 1.0;
    for (int k = 1; k <= n_w; ++k) {
        const double x = 2.0 * std::numbers::pi * k * t;
        theta[k] = std::cos(x);
        theta[n_w + k] = std::sin(x);
    }
    return theta;
}

/// Row of the closed-form antiderivative basis: W(s) = row(s) . [a0, a, b], with
/// entries [s, sin(2 pi k s)/(2 pi k), (1 - cos(2 pi k s))/(2 pi k)]. The same
/// row is dW/d[a0, a, b], which is what the loss gradient integrates.
inline void integrated_fourier_row(double s, int n_w, Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row)
{
    row[0] = s;
    for (int k = 1; k <= n_w; ++k) {
        const double omega = 2.0 * std::numbers::pi * k;
        const double x = omega * s;
        row[k] = std::sin(x) / omega;
        row[n_w + k] = (1.0 - std::cos(x)) / omega;
    }
}

inline Eigen::RowVectorXd integrated_fourier_row(double s, int n_w)
{
    Eigen::RowVectorXd row(2 * n_w + 1);
    integrated_fourier_row(s, n_w, row);
    return row;
}

inline double eval_w(const MonotoneCoefficients& c, double t)
{
    return fourier_design_vector(t, c.n_w()).dot(c.weight_coefficients());
}

/// Closed-form int_0^s w(u) du.
inline double eval_W(const MonotoneCoefficients& c, double s)
{
    return integrated_fourier_row(s, c.n_w()).dot(c.weight_coefficients());
}

/// Composite Simpson grid on [0, 1] with the W basis tabulated at every node.
/// Shared by every curve of the same Fourier order.
class FourierQuadrature {
public:
    FourierQuadrature(int n_w, QuadratureConfig q) : n_w_(n_w), config_(q)
    {
        q.validate();
        if (n_w < 1)
            throw InvalidArgument("n_w must be >= 1");
        h_ = 1.0 / q.n_quad;
        basis_.resize(q.n_quad + 1, 2 * n_w + 1);
        for (int n = 0; n <= q.n_quad; ++n)
            integrated_fourier_row(node(n), n_w, basis_.row(n));
    }

    int n_w() const { return n_w_; }
    int n_quad() const { return config_.n_quad; }
    int pairs() const { return config_.n_quad / 2; }
    const QuadratureConfig& config() const { return config_; }
    double step() const { return h_; }
    double node(int n) const { return static_cast<double>(n) / config_.n_quad; }

    /// (n_quad + 1) x (2 n_w + 1) table of integrated_fourier_row at the nodes.
    const Eigen::MatrixXd& node_basis() const { return basis_; }

    /// Simpson pair index m with node(2m) <= t; t == 1 maps to the last node.
    int pair_index(double t) const
    {
        int m = static_cast<int>(std::floor(t * config_.n_quad / 2.0));
        return std::clamp(m, 0, pairs());
    }

private:
    int n_w_;
    QuadratureConfig config_;
    double h_;
    Eigen::MatrixXd basis_;
};

/// Validates a normalized time, snapping round-off just outside [0, 1].
inline double checked_unit_time(double t)
{
    constexpr double slack = 1e-12;
    if (!(t >= -slack && t <= 1.0 + slack))
        throw InvalidArgument("normalized time " + std::to_string(t) + " outside [0, 1]");
    return std::clamp(t, 0.0, 1.0);
}

/// A monotone curve ready for repeated evaluation. Construction tabulates
/// exp(W) on the Simpson nodes and the cumulative integral at every even node;
/// each evaluation then costs one partial Simpson panel
///
///     I(t) = C[m] + (t - s0)/6 * (g(s0) + 4 g((s0 + t)/2) + g(t)),  s0 = node(2m),
///
/// with g = exp(W). I(node(2m)) is exactly C[m], so f(0) = beta0 exactly.
class MonotoneCurve {
public:
    MonotoneCurve(MonotoneCoefficients c, std::shared_ptr<const FourierQuadrature> quad)
        : coeffs_(std::move(c)), quad_(std::move(quad)), theta_(coeffs_.weight_coefficients())
    {
        coeffs_.validate();
        if (quad_->n_w() != coeffs_.n_w())
            throw InvalidArgument("quadrature grid and coefficients disagree on n_w");
        const Eigen::VectorXd W = quad_->node_basis() * theta_;
        g_.resize(W.size());
        for (Eigen::Index n = 0; n < W.size(); ++n) {
            if (!(W[n] <= max_log_slope))
                throw QuadratureOverflow(quad_->node(static_cast<int>(n)), W[n]);
            g_[n] = std::exp(W[n]);
        }
        const int pairs = quad_->pairs();
        const double h3 = quad_->step() / 3.0;
        cumulative_.resize(pairs + 1);
        cumulative_[0] = 0.0;
        for (int m = 0; m < pairs; ++m)
            cumulative_[m + 1] = cumulative_[m] + h3 * (g_[2 * m] + 4.0 * g_[2 * m + 1] + g_[2 * m + 2]);
    }

    MonotoneCurve(const MonotoneCoefficients& c, QuadratureConfig q = {})
        : MonotoneCurve(c, std::make_shared<const FourierQuadrature>(c.n_w(), q))
    {
    }

    const MonotoneCoefficients& coefficients() const { return coeffs_; }
    const std::shared_ptr<const FourierQuadrature>& quadrature() const { return quad_; }

    double W(double s) const
    {
        Eigen::RowVectorXd row(theta_.size());
        integrated_fourier_row(s, coeffs_.n_w(), row);
        return row.dot(theta_);
    }

    /// exp(W(s)) with the overflow guard.
    double slope_factor(double s) const
    {
        const double w = W(s);
        if (!(w <= max_log_slope))
            throw QuadratureOverflow(s, w);
        return std::exp(w);
    }

    /// int_0^t exp(W(s)) ds under the shared Simpson rule.
    double integral(double t) const
    {
        t = checked_unit_time(t);
        const int m = quad_->pair_index(t);
        const double s0 = quad_->node(2 * m);
        const double len = t - s0;
        if (len <= 0.0)
            return cumulative_[m];
        return cumulative_[m] + len / 6.0 * (g_[2 * m] + 4.0 * slope_factor(s0 + 0.5 * len) + slope_factor(t));
    }

    double operator()(double t) const { return coeffs_.beta0 + coeffs_.beta1 * integral(t); }

    std::vector<double> evaluate(std::span<const double> ts) const
    {
        std::vector<double> out(ts.size());
        for (std::size_t i = 0; i < ts.size(); ++i)
            out[i] = (*this)(ts[i]);
        return out;
    }

    double end_level() const { return coeffs_.beta0 + coeffs_.beta1 * cumulative_.back(); }

    /// Normalized time at which the curve reaches target_f, or nullopt if it
    /// does not by t = 1. Requires beta1 > 0 and beta0 < target_f.
    std::optional<double> try_arrival_time(double target_f, double tolerance = 1e-9) const
    {
        if (!(coeffs_.beta1 > 0.0))
            throw InvalidArgument("arrival time needs beta1 > 0");
        if (!(coeffs_.beta0 < target_f))
            throw InvalidArgument("arrival target must lie above beta0");
        if (end_level() < target_f)
            return std::nullopt;
        double lo = 0.0;
        double hi = 1.0;
        for (int iter = 0; iter < 200; ++iter) {
            const double mid = 0.5 * (lo + hi);
            if (mid <= lo || mid >= hi)
                break;
            const double f = (*this)(mid);
            if (std::abs(f - target_f) <= tolerance)
                return mid;
            (f < target_f ? lo : hi) = mid;
        }
        return hi;
    }

    double arrival_time(double target_f, double tolerance = 1e-9) const
    {
        if (auto t = try_arrival_time(target_f, tolerance))
            return *t;
        throw NotReachedWithinHorizon("target level " + std::to_string(target_f) +
                                      " not reached within the horizon (f(1) = " + std::to_string(end_level()) + ")");
    }

private:
    MonotoneCoefficients coeffs_;
    std::shared_ptr<const FourierQuadrature> quad_;
    Eigen::VectorXd theta_;
    Eigen::VectorXd g_;
    std::vector<double> cumulative_;
};

inline std::vector<double> eval_trajectory(const MonotoneCoefficients& c, std::span<const double> ts,
                                           QuadratureConfig q = {})
{
    return MonotoneCurve(c, q).evaluate(ts);
}

inline double arrival_time(const MonotoneCoefficients& c, double target_f, QuadratureConfig q = {})
{
    return MonotoneCurve(c, q).arrival_time(target_f);
}

/// Outcome of evaluating a curve reconstructed from PC scores.
struct ScoreCurve {
    std::optional<MonotoneCoefficients> coefficients; ///< empty when non-monotone
    std::vector<double> levels;

    bool non_monotone() const { return !coefficients.has_value(); }
};

/// y = components * alpha, beta0 = f_i. A reconstruction with beta1 <= 0 is
/// reported as non-monotone rather than evaluated.
inline MonotoneCoefficients coefficients_from_scores(const Eigen::Ref<const Eigen::VectorXd>& alpha,
                                                     const Eigen::Ref<const Eigen::MatrixXd>& components, double f_i)
{
    if (alpha.size() != components.cols())
        throw InvalidArgument("score vector length does not match the number of components");
    const Eigen::VectorXd y = components * alpha;
    return MonotoneCoefficients::from_vector(y, f_i);
}

inline ScoreCurve eval_trajectory_from_scores(const Eigen::Ref<const Eigen::VectorXd>& alpha,
                                              const Eigen::Ref<const Eigen::MatrixXd>& components, double f_i,
                                              std::span<const double> ts, QuadratureConfig q = {})
{
    auto c = coefficients_from_scores(alpha, components, f_i);
    if (!(c.beta1 > 0.0))
        return {};
    ScoreCurve out;
    out.levels = eval_trajectory(c, ts, q);
    out.coefficients = std::move(c);
    return out;
}

} // namespace climbemu
