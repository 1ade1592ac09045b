#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "climbemu/artifact.hpp"
#include "climbemu/ensemble.hpp"
#include "climbemu/error.hpp"
#include "climbemu/fitting.hpp"
#include "climbemu/gp.hpp"
#include "climbemu/metrics.hpp"
#include "climbemu/monotone.hpp"
#include "climbemu/parallel.hpp"
#include "climbemu/pca.hpp"
#include "climbemu/seed.hpp"
#include "climbemu/synthetic.hpp"
#include "climbemu/trajectory.hpp"

namespace climbemu {

struct TrainConfig {
    FitConfig fit;
    QuadratureConfig quadrature;
    double ratio_max = default_ratio_max;
    double dip_tolerance = default_dip_tolerance;
    double horizon_slack = default_horizon_slack;
    GPTrainOptions gp;
    /// Receives one line per stage event; may be empty.
    std::function<void(const std::string&)> log;
};

struct TrainReport {
    ModelArtifact artifact;
    std::vector<std::string> screened_out;
    std::size_t not_converged = 0;
};

inline Eigen::MatrixXd feature_matrix(std::span<const Trajectory> dataset)
{
    Eigen::MatrixXd X(static_cast<Eigen::Index>(dataset.size()), static_cast<Eigen::Index>(ClimbFeatures::size));
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto a = dataset[i].features.as_array();
        for (std::size_t d = 0; d < a.size(); ++d)
            X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = a[d];
    }
    return X;
}

inline Eigen::VectorXd feature_vector(const ClimbFeatures& x)
{
    const auto a = x.as_array();
    return Eigen::Map<const Eigen::VectorXd>(a.data(), static_cast<Eigen::Index>(a.size()));
}

namespace detail {

inline void log_line(const TrainConfig& cfg, const std::string& line)
{
    if (cfg.log)
        cfg.log(line);
}

template <class Body>
auto stage(const char* name, Body&& body)
{
    try {
        return body();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

} // namespace detail

/// Output of the representation half of training: fitted coefficients and
/// the reduced PCA basis.
struct Reduction {
    std::vector<Trajectory> kept;
    std::vector<std::string> screened_out;
    TimeHorizon horizon;
    DatasetFit fits;
    Eigen::MatrixXd D_y;
    NcSelection selection;
    std::size_t not_converged = 0;
};

/// screen -> normalize -> fit -> PCA -> select n_c.
inline Reduction reduce_dataset(std::span<const Trajectory> dataset, const TrainConfig& cfg)
{
    using detail::log_line;
    using detail::stage;
    Reduction r;
    stage("screen", [&] {
        for (const auto& traj : dataset) {
            validate(traj);
            if (screen_monotone(traj, cfg.dip_tolerance) == ScreenResult::accepted)
                r.kept.push_back(traj);
            else
                r.screened_out.push_back(traj.id);
        }
        if (r.kept.empty())
            throw DataError("no trajectory passed monotonicity screening");
        return 0;
    });
    log_line(cfg, "screen\tkept=" + std::to_string(r.kept.size()) + "\trejected=" +
                      std::to_string(r.screened_out.size()));

    const auto normalized = stage("normalize", [&] {
        r.horizon = compute_horizon(r.kept, cfg.horizon_slack);
        std::vector<Trajectory> out;
        out.reserve(r.kept.size());
        for (const auto& traj : r.kept)
            out.push_back(normalize_time(traj, r.horizon));
        return out;
    });
    log_line(cfg, "normalize\tT=" + csv::format(r.horizon.T));

    r.fits = stage("fit", [&] { return fit_dataset(normalized, cfg.fit, cfg.quadrature); });
    for (const auto& f : r.fits.results)
        if (!f.converged)
            ++r.not_converged;
    log_line(cfg, "fit\tepsilon_L=" + csv::format(r.fits.epsilon_L) + "\tnot_converged=" +
                      std::to_string(r.not_converged));

    r.D_y = r.fits.coefficient_matrix();
    const auto full = stage("pca", [&] { return fit_pca(r.D_y); });
    r.selection = stage("select_n_c", [&] {
        return select_n_c(normalized, r.D_y, r.fits.epsilon_L, full, cfg.quadrature, cfg.ratio_max);
    });
    log_line(cfg, "select_n_c\tn_c=" + std::to_string(r.selection.n_c));
    return r;
}

/// reduce_dataset followed by one GP per retained score. Any failure is
/// rethrown as StageError naming the stage.
inline TrainReport train_model(std::span<const Trajectory> dataset, const TrainConfig& cfg)
{
    auto r = reduce_dataset(dataset, cfg);
    TrainReport report;
    report.screened_out = r.screened_out;
    report.not_converged = r.not_converged;
    auto& art = report.artifact;
    art.horizon = r.horizon;
    art.n_w = cfg.fit.n_w;
    art.quadrature = cfg.quadrature;
    art.epsilon_L = r.fits.epsilon_L;
    art.basis = r.selection.basis;
    art.sweep = r.selection.sweep;

    const auto training = detail::stage("gp", [&] {
        return train_emulator(feature_matrix(r.kept), project_all(r.D_y, art.basis), cfg.gp);
    });
    art.emulator = training.emulator;
    art.log_marginal_likelihoods = training.log_marginal_likelihoods;
    for (std::size_t k = 0; k < art.log_marginal_likelihoods.size(); ++k)
        detail::log_line(cfg, "gp\tscore=" + std::to_string(k + 1) + "\tlog_marginal_likelihood=" +
                                  csv::format(art.log_marginal_likelihoods[k]));

    art.provenance.dataset_hash = dataset_hash(dataset);
    for (const auto& traj : r.kept)
        art.provenance.training_ids.push_back(traj.id);
    art.provenance.config = {{"n_w", cfg.fit.n_w},
                             {"eta", cfg.fit.eta},
                             {"rho", cfg.fit.rho},
                             {"max_iters", cfg.fit.max_iters},
                             {"rel_tol", cfg.fit.rel_tol},
                             {"patience", cfg.fit.patience},
                             {"n_quad", cfg.quadrature.n_quad},
                             {"ratio_max", cfg.ratio_max},
                             {"dip_tolerance", cfg.dip_tolerance},
                             {"horizon_slack", cfg.horizon_slack},
                             {"gp_restarts", cfg.gp.restarts},
                             {"gp_max_iters", cfg.gp.max_iters},
                             {"seed", cfg.gp.seed}};
    return report;
}

inline constexpr std::size_t default_grid_points = 512;

/// Posterior sampling from a trained model.
class Forecaster {
public:
    explicit Forecaster(ModelArtifact artifact)
        : art_(std::move(artifact)), quad_(std::make_shared<const FourierQuadrature>(art_.n_w, art_.quadrature))
    {
    }

    const ModelArtifact& artifact() const { return art_; }
    const std::shared_ptr<const FourierQuadrature>& quadrature() const { return quad_; }

    bool inside_training_box(const ClimbFeatures& x) const
    {
        return art_.emulator.inside_training_box(feature_vector(x));
    }

    ForecastEnsemble sample(const ClimbFeatures& x, std::size_t n_mc, std::uint64_t seed,
                            const SamplingOptions& options = {},
                            std::size_t grid_points = default_grid_points) const
    {
        const auto grid = unit_grid(grid_points);
        return sample_ensemble(art_.emulator, art_.basis, x, n_mc, seed, grid, quad_, art_.horizon, options);
    }

    /// Curve at the posterior-mean scores.
    MonotoneCurve mean_curve(const ClimbFeatures& x) const
    {
        Eigen::VectorXd alpha(art_.n_c());
        const Eigen::VectorXd f = feature_vector(x);
        for (int k = 0; k < art_.n_c(); ++k)
            alpha[k] = art_.emulator.predict(k, f).mean;
        return MonotoneCurve(coefficients_from_scores(alpha, art_.basis.components, x.f_i), quad_);
    }

private:
    ModelArtifact art_;
    std::shared_ptr<const FourierQuadrature> quad_;
};

struct EvaluateConfig {
    std::size_t n_mc = 100;
    std::uint64_t seed = 0;
    int levels = default_calibration_levels;
    std::vector<double> nominal = default_nominal_levels();
    bool synthetic_baseline = true;
    SyntheticConfig baseline_dynamics;
    double point_bias = default_point_bias;
    Range prob_multiplier = default_prob_baseline_multiplier;
    SamplingOptions sampling;
};

struct EvaluationResult {
    ForecastScorecard scorecard;
    std::size_t rejected_draws = 0;
    std::size_t accepted_draws = 0;
    std::vector<std::string> overlapping_ids; ///< test ids also present in the training set
};

namespace detail {

/// Observations shifted to start at t = 0.
inline Trajectory shifted(const Trajectory& traj)
{
    Trajectory out = traj;
    const double t0 = traj.observations.front().t;
    for (auto& o : out.observations)
        o.t -= t0;
    return out;
}

struct FlightEvaluation {
    FlightScore score;
    std::vector<LevelArrivals> model_levels;
    std::vector<LevelArrivals> baseline_levels;
    std::size_t rejected = 0;
    std::size_t accepted = 0;
};

inline FlightEvaluation evaluate_flight(const Forecaster& model, const Trajectory& raw, std::uint64_t flight_seed,
                                        const EvaluateConfig& cfg)
{
    FlightEvaluation ev;
    auto& s = ev.score;
    const Trajectory traj = shifted(raw);
    const ClimbFeatures& x = traj.features;
    const double T = model.artifact().horizon.T;
    const double target = x.target();
    s.id = traj.id;
    s.observed_arrival = observed_arrival(traj, target);

    const auto ens = model.sample(x, cfg.n_mc, flight_seed, cfg.sampling);
    ev.rejected = ens.rejected_count;
    ev.accepted = ens.size();
    std::vector<double> reached;
    for (double a : ens.arrival_samples)
        if (std::isfinite(a))
            reached.push_back(a);
    s.samples_not_reached = ens.size() - reached.size();

    const auto level_at = [T](const MonotoneCurve& c) {
        return [&c, T](double t) { return c(t / T); };
    };
    try {
        const auto mean = model.mean_curve(x);
        if (const auto tau = mean.try_arrival_time(target))
            s.predicted_arrival = *tau * T;
        std::vector<double> pred;
        Trajectory within = traj;
        std::erase_if(within.observations, [T](const Observation& o) { return o.t > T; });
        for (const auto& o : within.observations)
            pred.push_back(mean(o.t / T));
        s.mae = mae(pred, within);
        if (std::isfinite(s.observed_arrival) && std::isfinite(s.predicted_arrival) && s.observed_arrival <= T)
            if (const auto dz = delta_z(level_at(mean), s.predicted_arrival, traj, s.observed_arrival, target))
                s.delta_z_mean = *dz;
    } catch (const QuadratureOverflow&) {
        // posterior-mean curve overflows: mean-based scores stay NaN
    }

    if (std::isfinite(s.observed_arrival)) {
        if (!reached.empty())
            s.crps = crps_empirical(reached, s.observed_arrival);
        if (s.observed_arrival <= T) {
            double sum = 0.0;
            for (std::size_t m = 0; m < ens.size(); ++m) {
                const double a = ens.arrival_samples[m];
                if (!std::isfinite(a))
                    continue;
                if (const auto dz = delta_z(level_at(ens.curves[m]), a, traj, s.observed_arrival, target)) {
                    s.delta_z_per_sample.push_back(*dz);
                    sum += std::abs(*dz);
                }
            }
            if (!s.delta_z_per_sample.empty())
                s.delta_z_samples = sum / static_cast<double>(s.delta_z_per_sample.size());
        }
    }

    const auto levels = intermediate_levels(x, cfg.levels);
    for (double level : levels)
        ev.model_levels.push_back({arrival_times_at(ens, level), observed_arrival(traj, level)});

    if (cfg.synthetic_baseline) {
        const auto point = point_baseline(x, cfg.baseline_dynamics, cfg.point_bias);
        const ClimbOde point_ode(x, point.multiplier, cfg.baseline_dynamics);
        std::vector<double> point_pred;
        for (const auto& o : traj.observations)
            point_pred.push_back(point_ode.level_at(o.t));
        s.mae_point_baseline = mae(point_pred, traj);

        const auto runs = prob_baseline(x, cfg.n_mc, derive_seed(flight_seed, 1, 0x7b), cfg.baseline_dynamics,
                                        cfg.prob_multiplier);
        std::vector<double> run_arrivals;
        for (const auto& r : runs)
            run_arrivals.push_back(r.arrival);
        if (std::isfinite(s.observed_arrival)) {
            s.crps_prob_baseline = crps_empirical(run_arrivals, s.observed_arrival);
            if (std::isfinite(s.crps)) {
                try {
                    s.skill_vs_point = skill_vs_point(s.crps, s.observed_arrival, point.arrival);
                } catch (const BaselineExact&) {
                }
                try {
                    s.skill_vs_prob = skill_vs_prob(s.crps, s.crps_prob_baseline);
                } catch (const BaselineExact&) {
                }
            }
        }
        std::vector<ClimbOde> odes;
        for (const auto& r : runs)
            odes.emplace_back(x, r.multiplier, cfg.baseline_dynamics);
        for (double level : levels) {
            LevelArrivals la{{}, observed_arrival(traj, level)};
            for (const auto& ode : odes)
                la.samples.push_back(ode.time_to_level(level));
            ev.baseline_levels.push_back(std::move(la));
        }
    }
    return ev;
}

} // namespace detail

/// Scores every test flight (in parallel, each with its own derived seed).
inline EvaluationResult evaluate_model(const Forecaster& model, std::span<const Trajectory> test,
                                       const EvaluateConfig& cfg)
{
    if (test.empty())
        throw InvalidArgument("test set is empty");
    if (cfg.levels < 1)
        throw InvalidArgument("levels must be >= 1");
    EvaluationResult out;
    const std::set<std::string> train_ids(model.artifact().provenance.training_ids.begin(),
                                          model.artifact().provenance.training_ids.end());
    for (const auto& traj : test) {
        validate(traj);
        if (train_ids.contains(traj.id))
            out.overlapping_ids.push_back(traj.id);
    }

    std::vector<detail::FlightEvaluation> evs(test.size());
    parallel_for(test.size(), [&](std::size_t i) {
        evs[i] = detail::evaluate_flight(model, test[i], derive_seed(cfg.seed, i), cfg);
    });

    auto& card = out.scorecard;
    std::vector<LevelArrivals> model_levels;
    std::vector<LevelArrivals> baseline_levels;
    for (auto& ev : evs) {
        card.flights.push_back(std::move(ev.score));
        out.rejected_draws += ev.rejected;
        out.accepted_draws += ev.accepted;
        for (auto& l : ev.model_levels)
            model_levels.push_back(std::move(l));
        for (auto& l : ev.baseline_levels)
            baseline_levels.push_back(std::move(l));
    }
    aggregate(card);
    const double T = model.artifact().horizon.T;
    card.model_calibration = calibration_sharpness(model_levels, cfg.nominal, T);
    card.has_baseline = cfg.synthetic_baseline;
    if (cfg.synthetic_baseline)
        card.baseline_calibration = calibration_sharpness(baseline_levels, cfg.nominal, T);
    return out;
}

inline void write_histogram_csv(std::ostream& out, const ForecastScorecard& card, int bins = 20)
{
    out << "metric,bin_lo,bin_hi,count\n";
    const auto emit = [&](const char* name, double FlightScore::*field) {
        std::vector<double> v;
        for (const auto& f : card.flights)
            v.push_back(f.*field);
        for (const auto& b : histogram(v, bins))
            out << name << ',' << csv::format(b.lo) << ',' << csv::format(b.hi) << ',' << b.count << '\n';
    };
    emit("skill_vs_point", &FlightScore::skill_vs_point);
    emit("skill_vs_prob", &FlightScore::skill_vs_prob);
}

} // namespace climbemu
