#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "climbemu/csv.hpp"
#include "climbemu/error.hpp"
#include "climbemu/trajectory.hpp"

namespace climbemu {

/// CRPS of the empirical distribution of `samples` against `observed`:
///     mean|X - y| - 1/2 mean|X - X'|
/// with the pair mean taken over all n^2 ordered pairs (computed from the
/// sorted samples in O(n log n)). Non-finite samples are rejected.
inline double crps_empirical(std::span<const double> samples, double observed)
{
    if (samples.empty())
        throw InvalidArgument("CRPS needs at least one sample");
    if (!std::isfinite(observed))
        throw InvalidArgument("CRPS observation must be finite");
    std::vector<double> x(samples.begin(), samples.end());
    for (double v : x)
        if (!std::isfinite(v))
            throw InvalidArgument("CRPS samples must be finite");
    std::sort(x.begin(), x.end());
    const double n = static_cast<double>(x.size());
    double abs_err = 0.0;
    double pair_sum = 0.0; // sum over i<j of (x_j - x_i)
    for (std::size_t i = 0; i < x.size(); ++i) {
        abs_err += std::abs(x[i] - observed);
        pair_sum += (2.0 * static_cast<double>(i) - n + 1.0) * x[i];
    }
    const double crps = abs_err / n - pair_sum / (n * n);
    return std::max(crps, 0.0);
}

/// S = 1 - CRPS / (t_a - t_a_baseline)^2, implemented as written (the
/// denominator carries squared time units while CRPS carries time units).
inline double skill_vs_point(double crps, double observed_ta, double baseline_ta)
{
    const double d = observed_ta - baseline_ta;
    if (d * d == 0.0)
        throw BaselineExact("point baseline arrival equals the observed arrival");
    return 1.0 - crps / (d * d);
}

/// S_pb = 1 - CRPS / CRPS_pb.
inline double skill_vs_prob(double crps, double crps_baseline)
{
    if (!(crps_baseline > 0.0))
        throw BaselineExact("probabilistic baseline CRPS is zero");
    return 1.0 - crps / crps_baseline;
}

/// Flight-level offset at the earlier of the two arrival times:
///   t_a <= t_hat: target - predicted(t_a)
///   t_a >  t_hat: target - observed(t_hat)   (observed level interpolated)
/// Returns nullopt when the second branch would need the observed climb
/// beyond its last radar return.
inline std::optional<double> delta_z(const std::function<double(double)>& predicted_level, double predicted_arrival,
                                     const Trajectory& observed, double observed_arrival, double target)
{
    if (!std::isfinite(predicted_arrival) || !std::isfinite(observed_arrival))
        throw InvalidArgument("delta_z needs both arrival times");
    if (observed_arrival <= predicted_arrival)
        return target - predicted_level(observed_arrival);
    if (predicted_arrival > observed.observations.back().t || predicted_arrival < observed.observations.front().t)
        return std::nullopt;
    return target - interpolate_level(observed, predicted_arrival);
}

/// Mean absolute error between predicted levels at the observation times and the observations.
inline double mae(std::span<const double> predicted_at_observations, const Trajectory& observed)
{
    if (predicted_at_observations.size() != observed.observations.size() || observed.observations.empty())
        throw InvalidArgument("MAE needs one prediction per observation");
    double sum = 0.0;
    for (std::size_t j = 0; j < predicted_at_observations.size(); ++j)
        sum += std::abs(observed.observations[j].f - predicted_at_observations[j]);
    return sum / static_cast<double>(predicted_at_observations.size());
}

inline double mae(const std::function<double(double)>& predicted_level, const Trajectory& observed)
{
    std::vector<double> pred(observed.observations.size());
    for (std::size_t j = 0; j < pred.size(); ++j)
        pred[j] = predicted_level(observed.observations[j].t);
    return mae(pred, observed);
}

/// Gaussian summary of one (flight, level) arrival forecast with its observation.
struct GaussianArrival {
    double mean = 0.0;
    double sd = 0.0;
    double observed = 0.0;
};

/// Arrival samples for one (flight, level) with the observed arrival.
struct LevelArrivals {
    std::vector<double> samples; ///< seconds; non-finite entries are ignored
    double observed = 0.0;
};

inline std::vector<double> default_nominal_levels()
{
    return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
}

inline constexpr int default_calibration_levels = 20;

struct CalibrationResult {
    double rmsec = 0.0;
    double sharpness = 0.0;               ///< mean sd / horizon
    std::vector<double> nominal;
    std::vector<double> empirical;        ///< pooled coverage per nominal level
    std::size_t pairs_used = 0;
    std::size_t pairs_excluded = 0;
};

/// Pooled central-interval coverage of Gaussian forecasts. For each nominal
/// coverage p the interval is mean +- z sd with z = Phi^-1((1 + p) / 2).
inline CalibrationResult calibration_from_gaussians(std::span<const GaussianArrival> pairs,
                                                    std::span<const double> nominal, double horizon_seconds)
{
    if (nominal.empty())
        throw InvalidArgument("need at least one nominal coverage level");
    if (!(horizon_seconds > 0.0))
        throw InvalidArgument("horizon must be positive");
    if (pairs.empty())
        throw InsufficientSamples("no (flight, level) pairs to assess calibration", 0.0);
    const boost::math::normal_distribution<double> standard;
    CalibrationResult out;
    out.nominal.assign(nominal.begin(), nominal.end());
    out.empirical.assign(nominal.size(), 0.0);
    out.pairs_used = pairs.size();
    double sd_sum = 0.0;
    for (const auto& p : pairs)
        sd_sum += p.sd;
    double sq = 0.0;
    for (std::size_t l = 0; l < nominal.size(); ++l) {
        if (!(nominal[l] > 0.0 && nominal[l] < 1.0))
            throw InvalidArgument("nominal coverage must lie in (0, 1)");
        const double z = boost::math::quantile(standard, 0.5 * (1.0 + nominal[l]));
        std::size_t inside = 0;
        for (const auto& p : pairs)
            if (std::abs(p.observed - p.mean) <= z * p.sd)
                ++inside;
        out.empirical[l] = static_cast<double>(inside) / static_cast<double>(pairs.size());
        const double gap = out.empirical[l] - nominal[l];
        sq += gap * gap;
    }
    out.rmsec = std::sqrt(sq / static_cast<double>(nominal.size()));
    out.sharpness = sd_sum / static_cast<double>(pairs.size()) / horizon_seconds;
    return out;
}

/// Fits a Gaussian (sample mean, sample variance) to each pair's arrival
/// samples, then pools coverage. Pairs with fewer than two finite samples or
/// a non-finite observation are excluded and counted.
inline CalibrationResult calibration_sharpness(std::span<const LevelArrivals> arrivals, std::span<const double> nominal,
                                               double horizon_seconds)
{
    std::vector<GaussianArrival> pairs;
    pairs.reserve(arrivals.size());
    std::size_t excluded = 0;
    for (const auto& a : arrivals) {
        std::size_t n = 0;
        double mean = 0.0;
        for (double s : a.samples)
            if (std::isfinite(s)) {
                ++n;
                mean += s;
            }
        if (n < 2 || !std::isfinite(a.observed)) {
            ++excluded;
            continue;
        }
        mean /= static_cast<double>(n);
        double ss = 0.0;
        for (double s : a.samples)
            if (std::isfinite(s))
                ss += (s - mean) * (s - mean);
        pairs.push_back({mean, std::sqrt(ss / static_cast<double>(n - 1)), a.observed});
    }
    auto out = calibration_from_gaussians(pairs, nominal, horizon_seconds);
    out.pairs_excluded = excluded;
    return out;
}

inline double nan() { return std::numeric_limits<double>::quiet_NaN(); }

/// Scores of one test flight. NaN marks a score that could not be computed.
struct FlightScore {
    std::string id;
    double observed_arrival = nan();  ///< s
    double predicted_arrival = nan(); ///< mean-trajectory arrival (s)
    double crps = nan();              ///< s
    double skill_vs_point = nan();
    double skill_vs_prob = nan();
    double crps_prob_baseline = nan();
    double delta_z_mean = nan();    ///< FL, mean trajectory
    double delta_z_samples = nan(); ///< FL, mean |delta_z| over samples
    double mae = nan();             ///< FL
    double mae_point_baseline = nan();
    std::size_t samples_not_reached = 0;
    std::vector<double> delta_z_per_sample;
};

struct ForecastScorecard {
    std::vector<FlightScore> flights;

    double mean_crps = nan();
    double mean_skill_vs_point = nan();
    double mean_skill_vs_prob = nan();
    double mean_delta_z_mean = nan();
    double mean_delta_z_samples = nan();
    double mean_mae = nan();
    double mean_mae_point_baseline = nan();
    CalibrationResult model_calibration;
    CalibrationResult baseline_calibration;
    bool has_baseline = false;
};

/// Mean of the finite values (NaN when there are none).
inline double finite_mean(std::span<const double> xs)
{
    double s = 0.0;
    std::size_t n = 0;
    for (double x : xs)
        if (std::isfinite(x)) {
            s += x;
            ++n;
        }
    return n == 0 ? nan() : s / static_cast<double>(n);
}

inline void aggregate(ForecastScorecard& card)
{
    const auto column = [&](double FlightScore::*field) {
        std::vector<double> v;
        v.reserve(card.flights.size());
        for (const auto& f : card.flights)
            v.push_back(f.*field);
        return finite_mean(v);
    };
    card.mean_crps = column(&FlightScore::crps);
    card.mean_skill_vs_point = column(&FlightScore::skill_vs_point);
    card.mean_skill_vs_prob = column(&FlightScore::skill_vs_prob);
    card.mean_delta_z_mean = column(&FlightScore::delta_z_mean);
    card.mean_delta_z_samples = column(&FlightScore::delta_z_samples);
    card.mean_mae = column(&FlightScore::mae);
    card.mean_mae_point_baseline = column(&FlightScore::mae_point_baseline);
}

namespace detail {
inline std::string cell(double v) { return std::isfinite(v) ? csv::format(v) : std::string("NA"); }
} // namespace detail

inline void write_scorecard_csv(std::ostream& out, const ForecastScorecard& card)
{
    using detail::cell;
    out << "flight_id,observed_arrival_s,predicted_arrival_s,crps_s,skill_vs_point,skill_vs_prob,crps_prob_baseline_s,"
           "delta_z_mean_fl,delta_z_samples_fl,mae_fl,mae_point_baseline_fl,samples_not_reached\n";
    for (const auto& f : card.flights)
        out << f.id << ',' << cell(f.observed_arrival) << ',' << cell(f.predicted_arrival) << ',' << cell(f.crps)
            << ',' << cell(f.skill_vs_point) << ',' << cell(f.skill_vs_prob) << ',' << cell(f.crps_prob_baseline)
            << ',' << cell(f.delta_z_mean) << ',' << cell(f.delta_z_samples) << ',' << cell(f.mae) << ','
            << cell(f.mae_point_baseline) << ',' << f.samples_not_reached << '\n';
}

inline void write_aggregate_csv(std::ostream& out, const ForecastScorecard& card)
{
    using detail::cell;
    out << "method,mae_fl,skill_vs_point,skill_vs_prob,delta_z_mean_fl,delta_z_samples_fl,crps_s,rmsec,sharpness\n";
    out << "model," << cell(card.mean_mae) << ',' << cell(card.mean_skill_vs_point) << ','
        << cell(card.mean_skill_vs_prob) << ',' << cell(card.mean_delta_z_mean) << ','
        << cell(card.mean_delta_z_samples) << ',' << cell(card.mean_crps) << ',' << cell(card.model_calibration.rmsec)
        << ',' << cell(card.model_calibration.sharpness) << '\n';
    if (card.has_baseline)
        out << "baseline," << cell(card.mean_mae_point_baseline) << ",NA,NA,NA,NA,NA,"
            << cell(card.baseline_calibration.rmsec) << ',' << cell(card.baseline_calibration.sharpness) << '\n';
}

/// Human-readable summary in the layout of a method-vs-metric table.
inline void write_scorecard_report(std::ostream& out, const ForecastScorecard& card)
{
    const auto num = [](double v, int prec) {
        std::ostringstream s;
        if (std::isfinite(v))
            s << std::fixed << std::setprecision(prec) << v;
        else
            s << "-";
        return s.str();
    };
    out << "Forecast scorecard (" << card.flights.size() << " test flights)\n\n";
    out << std::left << std::setw(14) << "Method" << std::right << std::setw(10) << "MAE" << std::setw(12) << "S (%)"
        << std::setw(12) << "S_pb (%)" << std::setw(12) << "dz (FL)" << std::setw(10) << "RMSEC" << std::setw(12)
        << "Sharpness" << '\n';
    out << std::left << std::setw(14) << "Model" << std::right << std::setw(10) << num(card.mean_mae, 3)
        << std::setw(12) << num(100.0 * card.mean_skill_vs_point, 2) << std::setw(12)
        << num(100.0 * card.mean_skill_vs_prob, 2) << std::setw(12) << num(card.mean_delta_z_samples, 3)
        << std::setw(10) << num(card.model_calibration.rmsec, 4) << std::setw(12)
        << num(card.model_calibration.sharpness, 5) << '\n';
    if (card.has_baseline)
        out << std::left << std::setw(14) << "Baseline" << std::right << std::setw(10)
            << num(card.mean_mae_point_baseline, 3) << std::setw(12) << "-" << std::setw(12) << "-" << std::setw(12)
            << "-" << std::setw(10) << num(card.baseline_calibration.rmsec, 4) << std::setw(12)
            << num(card.baseline_calibration.sharpness, 5) << '\n';
    out << "\nMean CRPS (s): " << num(card.mean_crps, 3) << '\n';
    out << "Calibration pairs used: " << card.model_calibration.pairs_used
        << ", excluded: " << card.model_calibration.pairs_excluded << '\n';
}

/// Fixed-width histogram of the finite values: rows (bin_lo, bin_hi, count).
struct HistogramBin {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t count = 0;
};

inline std::vector<HistogramBin> histogram(std::span<const double> values, int bins)
{
    std::vector<double> v;
    for (double x : values)
        if (std::isfinite(x))
            v.push_back(x);
    if (v.empty() || bins < 1)
        return {};
    const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
    double lo = *mn;
    double hi = *mx;
    if (hi == lo) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double width = (hi - lo) / bins;
    std::vector<HistogramBin> out(static_cast<std::size_t>(bins));
    for (int b = 0; b < bins; ++b)
        out[static_cast<std::size_t>(b)] = {lo + b * width, lo + (b + 1) * width, 0};
    for (double x : v) {
        auto b = static_cast<int>((x - lo) / width);
        b = std::clamp(b, 0, bins - 1);
        ++out[static_cast<std::size_t>(b)].count;
    }
    return out;
}

} // namespace climbemu
