#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "climbemu/error.hpp"
#include "climbemu/gp.hpp"
#include "climbemu/monotone.hpp"
#include "climbemu/pca.hpp"
#include "climbemu/trajectory.hpp"

namespace climbemu {

/// Sampled trajectories for one feature vector.
struct ForecastEnsemble {
    ClimbFeatures feature_point;
    Eigen::MatrixXd alpha_samples;           ///< n_mc x n_c accepted score draws
    std::vector<MonotoneCurve> curves;       ///< one per accepted draw
    std::vector<double> grid;                ///< normalized evaluation grid
    std::vector<std::vector<double>> trajectories; ///< curves evaluated on grid
    std::vector<double> arrival_samples;     ///< seconds; NaN when the target is not reached within the horizon
    std::size_t rejected_count = 0;
    double horizon_seconds = 1.0;

    std::size_t size() const { return curves.size(); }
};

struct SamplingOptions {
    /// Draw every score at its posterior mean (deterministic mean trajectory).
    bool suppress_variance = false;
    /// Add each score GP's noise variance to the latent posterior variance.
    bool include_noise = true;
    /// Attempt budget as a multiple of n_mc.
    int attempt_factor = 10;
};

/// Uniform grid of `points` normalized times covering [0, 1].
inline std::vector<double> unit_grid(std::size_t points)
{
    if (points < 2)
        throw InvalidArgument("grid needs at least two points");
    std::vector<double> g(points);
    for (std::size_t i = 0; i < points; ++i)
        g[i] = static_cast<double>(i) / static_cast<double>(points - 1);
    g.back() = 1.0;
    return g;
}

inline bool strictly_increasing(std::span<const double> v)
{
    for (std::size_t i = 1; i < v.size(); ++i)
        if (!(v[i] > v[i - 1]))
            return false;
    return true;
}

/// Draws n_mc score vectors with alpha_k ~ N(mu_k, var_k) independently over
/// k, rebuilds each curve through the PC basis and keeps the strictly
/// increasing ones. Draws with beta1 <= 0 (or that overflow, or are not
/// strictly increasing on the grid) are redrawn, up to attempt_factor * n_mc
/// attempts in total.
inline ForecastEnsemble sample_ensemble(const ScoreEmulator& model, const PCBasis& basis, const ClimbFeatures& x_star,
                                        std::size_t n_mc, std::uint64_t seed, std::span<const double> grid,
                                        std::shared_ptr<const FourierQuadrature> quad, const TimeHorizon& horizon,
                                        const SamplingOptions& options = {})
{
    if (n_mc < 1)
        throw InvalidArgument("n_mc must be >= 1");
    if (model.n_scores() != basis.n_c())
        throw InvalidArgument("emulator and PCA basis disagree on n_c");
    if (quad->n_w() != basis.n_w)
        throw InvalidArgument("quadrature grid and PCA basis disagree on n_w");
    x_star.validate();

    const int n_c = basis.n_c();
    const auto xa = x_star.as_array();
    const Eigen::Vector3d x(xa[0], xa[1], xa[2]);
    Eigen::VectorXd mean(n_c);
    Eigen::VectorXd sd(n_c);
    for (int k = 0; k < n_c; ++k) {
        const auto p = model.predict(k, x);
        mean[k] = p.mean;
        double var = p.variance + (options.include_noise ? model.noise_variance(k) : 0.0);
        sd[k] = options.suppress_variance ? 0.0 : std::sqrt(var);
    }

    ForecastEnsemble ens;
    ens.feature_point = x_star;
    ens.grid.assign(grid.begin(), grid.end());
    ens.horizon_seconds = horizon.T;
    ens.alpha_samples.resize(static_cast<Eigen::Index>(n_mc), n_c);
    ens.curves.reserve(n_mc);
    ens.trajectories.reserve(n_mc);
    ens.arrival_samples.reserve(n_mc);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t budget = static_cast<std::size_t>(options.attempt_factor) * n_mc;
    const double target = x_star.target();
    std::size_t attempts = 0;
    Eigen::VectorXd alpha(n_c);
    while (ens.curves.size() < n_mc) {
        if (attempts >= budget)
            throw TooManyNonMonotoneDraws("rejection budget of " + std::to_string(budget) +
                                              " draws exhausted with " + std::to_string(ens.curves.size()) +
                                              " accepted",
                                          ens.curves.size(), ens.rejected_count);
        ++attempts;
        for (int k = 0; k < n_c; ++k)
            alpha[k] = mean[k] + sd[k] * normal(rng);
        const auto coeffs = coefficients_from_scores(alpha, basis.components, x_star.f_i);
        if (!(coeffs.beta1 > 0.0)) {
            ++ens.rejected_count;
            continue;
        }
        try {
            MonotoneCurve curve(coeffs, quad);
            auto levels = curve.evaluate(grid);
            if (!strictly_increasing(levels)) {
                ++ens.rejected_count;
                continue;
            }
            const auto t_arr = curve.try_arrival_time(target);
            ens.alpha_samples.row(static_cast<Eigen::Index>(ens.curves.size())) = alpha.transpose();
            ens.arrival_samples.push_back(t_arr ? horizon.denormalize(*t_arr)
                                                : std::numeric_limits<double>::quiet_NaN());
            ens.trajectories.push_back(std::move(levels));
            ens.curves.push_back(std::move(curve));
        } catch (const QuadratureOverflow&) {
            ++ens.rejected_count;
        }
    }
    return ens;
}

/// Arrival time (seconds) of every ensemble member at `level`; NaN where not reached.
inline std::vector<double> arrival_times_at(const ForecastEnsemble& ens, double level)
{
    std::vector<double> out(ens.size());
    for (std::size_t i = 0; i < ens.size(); ++i) {
        const auto& curve = ens.curves[i];
        if (!(curve.coefficients().beta0 < level)) {
            out[i] = 0.0;
            continue;
        }
        const auto t = curve.try_arrival_time(level);
        out[i] = t ? *t * ens.horizon_seconds : std::numeric_limits<double>::quiet_NaN();
    }
    return out;
}

struct SampleMoments {
    std::size_t count = 0;
    double mean = 0.0;
    double sd = 0.0; ///< sample standard deviation (n - 1)
};

/// Mean and sample standard deviation of the finite entries.
inline SampleMoments finite_moments(std::span<const double> xs)
{
    SampleMoments m;
    for (double x : xs)
        if (std::isfinite(x)) {
            ++m.count;
            m.mean += x;
        }
    if (m.count == 0)
        return m;
    m.mean /= static_cast<double>(m.count);
    if (m.count > 1) {
        double ss = 0.0;
        for (double x : xs)
            if (std::isfinite(x))
                ss += (x - m.mean) * (x - m.mean);
        m.sd = std::sqrt(ss / static_cast<double>(m.count - 1));
    }
    return m;
}

struct BandRow {
    double level = 0.0;
    double mean = 0.0;  ///< mean arrival (s)
    double lower = 0.0; ///< mean - 2 sd
    double upper = 0.0; ///< mean + 2 sd
    double sd = 0.0;
    std::size_t reached = 0;
    std::size_t not_reached = 0;
};

/// Per-level arrival mean and +-2 sigma interval over the ensemble members
/// that reach the level.
inline std::vector<BandRow> credible_band(const ForecastEnsemble& ens, std::span<const double> levels)
{
    const double f_i = ens.feature_point.f_i;
    const double top = ens.feature_point.target();
    std::vector<BandRow> rows;
    rows.reserve(levels.size());
    for (double level : levels) {
        if (!(level > f_i && level <= top + 1e-9))
            throw InvalidArgument("band level " + std::to_string(level) + " outside (f_i, f_i + delta_f]");
        const auto times = arrival_times_at(ens, level);
        const auto m = finite_moments(times);
        if (m.count < 2)
            throw InsufficientSamples("fewer than two ensemble members reach level " + std::to_string(level), level);
        BandRow r;
        r.level = level;
        r.mean = m.mean;
        r.sd = m.sd;
        r.lower = m.mean - 2.0 * m.sd;
        r.upper = m.mean + 2.0 * m.sd;
        r.reached = m.count;
        r.not_reached = times.size() - m.count;
        rows.push_back(r);
    }
    return rows;
}

/// n evenly spaced intermediate levels f_i + delta_f * k / n, k = 1..n.
inline std::vector<double> intermediate_levels(const ClimbFeatures& x, int n)
{
    if (n < 1)
        throw InvalidArgument("need at least one level");
    std::vector<double> out(static_cast<std::size_t>(n));
    for (int k = 1; k <= n; ++k)
        out[static_cast<std::size_t>(k - 1)] = x.f_i + x.delta_f * k / n;
    return out;
}

} // namespace climbemu
