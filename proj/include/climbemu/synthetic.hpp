#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "climbemu/csv.hpp"
#include "climbemu/error.hpp"
#include "climbemu/parallel.hpp"
#include "climbemu/seed.hpp"
#include "climbemu/trajectory.hpp"

namespace climbemu {

struct Range {
    double lo = 0.0;
    double hi = 0.0;

    bool contains(double v) const { return v >= lo && v <= hi; }
};

struct SyntheticConfig {
    std::size_t n_flights = 100;
    std::uint64_t seed = 0;
    Range delta_f{40.0, 120.0};
    Range f_i{100.0, 250.0};
    Range v_ias{250.0, 330.0};
    double noise_std = 0.2;      ///< FL, added to every return after the first
    double radar_dt = 6.0;       ///< s between radar sweeps
    double rate_spread = 0.02;   ///< log-sd of the unobserved per-flight rate multiplier
    double ceiling_margin = 0.25; ///< f_ceil = f_i + (1 + margin) * delta_f
    double shape_exponent = 1.5;
    double integrator_step = 0.5; ///< s, RK4 step

    void validate() const
    {
        const auto range_ok = [](const Range& r) { return std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo < r.hi; };
        if (!range_ok(delta_f) || !range_ok(f_i) || !range_ok(v_ias))
            throw InvalidArgument("feature ranges must be finite with lo < hi");
        if (!(delta_f.lo > 0.0) || !(f_i.lo > 0.0) || !(v_ias.lo > 0.0))
            throw InvalidArgument("feature ranges must be positive");
        if (!(noise_std >= 0.0) || !(rate_spread >= 0.0))
            throw InvalidArgument("noise_std and rate_spread must be non-negative");
        if (!(radar_dt > 0.0) || !(integrator_step > 0.0))
            throw InvalidArgument("radar_dt and integrator_step must be positive");
        if (!(ceiling_margin > 0.0) || !(shape_exponent > 1.0))
            throw InvalidArgument("ceiling_margin must be positive and shape_exponent > 1");
    }
};

/// Nominal climb-rate scale r(x) in FL/s; a smooth positive function of the
/// requested level change and the airspeed.
inline double nominal_rate(const ClimbFeatures& x)
{
    return (0.075 + 0.0056 * x.delta_f) * (x.v_ias / 290.0);
}

/// Synthetic climb dynamics
///     df/dt = m r(x) u^gamma,   u = (f_ceil - f) / (f_ceil - f_i),
/// where m is a rate multiplier (the unobserved "mass" effect). The rate
/// decays as the aircraft approaches its ceiling, and log f' is not linear in
/// time, so these climbs are not exactly representable by a finite Fourier
/// weight function.
class ClimbOde {
public:
    ClimbOde(const ClimbFeatures& x, double multiplier, const SyntheticConfig& cfg)
        : f_i_(x.f_i), ceiling_(x.f_i + (1.0 + cfg.ceiling_margin) * x.delta_f),
          rate_(multiplier * nominal_rate(x)), gamma_(cfg.shape_exponent), h_(cfg.integrator_step)
    {
        if (!(multiplier > 0.0))
            throw InvalidArgument("rate multiplier must be positive");
    }

    double ceiling() const { return ceiling_; }

    double rhs(double f) const
    {
        const double u = std::clamp((ceiling_ - f) / (ceiling_ - f_i_), 0.0, 1.0);
        return rate_ * std::pow(u, gamma_);
    }

    double rk4(double f, double dt) const
    {
        const double k1 = rhs(f);
        const double k2 = rhs(f + 0.5 * dt * k1);
        const double k3 = rhs(f + 0.5 * dt * k2);
        const double k4 = rhs(f + dt * k3);
        return f + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }

    /// Advances f by dt using steps no longer than the integrator step.
    double advance(double f, double dt) const
    {
        if (dt <= 0.0)
            return f;
        const auto steps = static_cast<int>(std::ceil(dt / h_ - 1e-9));
        const double sub = dt / steps;
        for (int i = 0; i < steps; ++i)
            f = rk4(f, sub);
        return f;
    }

    double level_at(double t) const { return advance(f_i_, t); }

    /// First time the climb reaches `level`: integrate to the bracketing step,
    /// then bisect on the length of the final RK4 step.
    double time_to_level(double level) const
    {
        if (level <= f_i_)
            return 0.0;
        if (level >= ceiling_)
            throw InvalidArgument("level at or above the climb ceiling is never reached");
        double t = 0.0;
        double f = f_i_;
        for (;;) {
            const double next = rk4(f, h_);
            if (next >= level) {
                double lo = 0.0;
                double hi = h_;
                for (int i = 0; i < 80; ++i) {
                    const double mid = 0.5 * (lo + hi);
                    (rk4(f, mid) < level ? lo : hi) = mid;
                }
                return t + 0.5 * (lo + hi);
            }
            f = next;
            t += h_;
            if (t > 1e6)
                throw Error("synthetic climb did not reach its level");
        }
    }

private:
    double f_i_;
    double ceiling_;
    double rate_;
    double gamma_;
    double h_;
};

struct SyntheticDataset {
    std::vector<Trajectory> trajectories;
    std::vector<double> arrival_times;    ///< noise-free arrival at f_i + delta_f (s)
    std::vector<double> rate_multipliers; ///< hidden per-flight multiplier
};

namespace detail {

inline std::string flight_id(std::uint64_t seed, std::size_t i)
{
    char buf[64];
    std::snprintf(buf, sizeof(buf), "S%llu-F%05zu", static_cast<unsigned long long>(seed), i);
    return buf;
}

/// Noise-free radar samples every radar_dt until the level reaches `stop`.
inline std::vector<Observation> sample_climb(const ClimbOde& ode, double f_i, double stop, double radar_dt)
{
    std::vector<Observation> obs{{0.0, f_i}};
    double f = f_i;
    while (f < stop || obs.size() < min_observations) {
        f = ode.advance(f, radar_dt);
        obs.push_back({static_cast<double>(obs.size()) * radar_dt, f});
    }
    return obs;
}

} // namespace detail

inline SyntheticDataset generate_dataset(const SyntheticConfig& cfg)
{
    cfg.validate();
    SyntheticDataset out;
    out.trajectories.resize(cfg.n_flights);
    out.arrival_times.resize(cfg.n_flights);
    out.rate_multipliers.resize(cfg.n_flights);
    parallel_for(cfg.n_flights, [&](std::size_t i) {
        auto rng = derived_rng(cfg.seed, i);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::normal_distribution<double> normal(0.0, 1.0);
        ClimbFeatures x;
        x.delta_f = cfg.delta_f.lo + (cfg.delta_f.hi - cfg.delta_f.lo) * u(rng);
        x.f_i = cfg.f_i.lo + (cfg.f_i.hi - cfg.f_i.lo) * u(rng);
        x.v_ias = cfg.v_ias.lo + (cfg.v_ias.hi - cfg.v_ias.lo) * u(rng);
        const double m = std::exp(cfg.rate_spread * normal(rng));
        const ClimbOde ode(x, m, cfg);
        // Track a little past the target so noisy returns still cross it.
        const double stop = std::min(x.target() + 3.0 * cfg.noise_std, 0.5 * (x.target() + ode.ceiling()));
        const auto clean = detail::sample_climb(ode, x.f_i, stop, cfg.radar_dt);

        Trajectory traj{detail::flight_id(cfg.seed, i), clean, x};
        for (int attempt = 0; attempt < 1000; ++attempt) {
            traj.observations = clean;
            for (std::size_t j = 1; j < traj.observations.size(); ++j)
                traj.observations[j].f += cfg.noise_std * normal(rng);
            if (screen_monotone(traj) == ScreenResult::accepted)
                break;
        }
        out.trajectories[i] = std::move(traj);
        out.arrival_times[i] = ode.time_to_level(x.target());
        out.rate_multipliers[i] = m;
    });
    return out;
}

inline void write_truth_csv(std::ostream& out, const SyntheticDataset& data)
{
    out << "flight_id,arrival_s,rate_multiplier\n";
    for (std::size_t i = 0; i < data.trajectories.size(); ++i)
        out << data.trajectories[i].id << ',' << csv::format(data.arrival_times[i]) << ','
            << csv::format(data.rate_multipliers[i]) << '\n';
}

/// A deterministic run of the synthetic dynamics with a fixed rate multiplier.
struct BaselineRun {
    double multiplier = 1.0;
    std::vector<Observation> trajectory; ///< sampled every radar_dt up to the target
    double arrival = 0.0;                ///< s
};

inline constexpr double default_point_bias = 0.10;

inline BaselineRun run_baseline(const ClimbFeatures& x, double multiplier, const SyntheticConfig& cfg)
{
    const ClimbOde ode(x, multiplier, cfg);
    return {multiplier, detail::sample_climb(ode, x.f_i, x.target(), cfg.radar_dt), ode.time_to_level(x.target())};
}

/// The dynamics with the rate deliberately biased by (1 + bias) and no
/// per-flight multiplier: an imperfect deterministic reference forecast.
inline BaselineRun point_baseline(const ClimbFeatures& x, const SyntheticConfig& cfg = {},
                                  double bias = default_point_bias)
{
    return run_baseline(x, 1.0 + bias, cfg);
}

inline constexpr Range default_prob_baseline_multiplier{0.8, 1.3};

/// Ensemble of runs with rate multipliers drawn uniformly from `multiplier`.
inline std::vector<BaselineRun> prob_baseline(const ClimbFeatures& x, std::size_t n_mc, std::uint64_t seed,
                                              const SyntheticConfig& cfg = {},
                                              Range multiplier = default_prob_baseline_multiplier)
{
    auto rng = derived_rng(seed, 0, 0x9b);
    std::uniform_real_distribution<double> u(multiplier.lo, multiplier.hi);
    std::vector<BaselineRun> runs;
    runs.reserve(n_mc);
    for (std::size_t i = 0; i < n_mc; ++i)
        runs.push_back(run_baseline(x, u(rng), cfg));
    return runs;
}

/// Central finite differences of `loss` at `params`.
inline Eigen::VectorXd finite_difference_gradient(const std::function<double(const Eigen::VectorXd&)>& loss,
                                                  const Eigen::VectorXd& params, double step)
{
    if (!(step > 0.0))
        throw InvalidArgument("finite-difference step must be positive");
    Eigen::VectorXd grad(params.size());
    Eigen::VectorXd p = params;
    for (Eigen::Index l = 0; l < params.size(); ++l) {
        p[l] = params[l] + step;
        const double up = loss(p);
        p[l] = params[l] - step;
        const double down = loss(p);
        p[l] = params[l];
        if (!std::isfinite(up) || !std::isfinite(down))
            throw Error("non-finite loss in finite-difference stencil");
        grad[l] = (up - down) / (2.0 * step);
    }
    return grad;
}

} // namespace climbemu
