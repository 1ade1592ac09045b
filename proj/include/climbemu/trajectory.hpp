#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "climbemu/csv.hpp"
#include "climbemu/error.hpp"

namespace climbemu {

/// One radar return: time since clearance (s) and flight level (hundreds of feet).
struct Observation {
    double t = 0.0;
    double f = 0.0;
};

/// The features that parameterise a climb.
struct ClimbFeatures {
    double delta_f = 0.0; ///< requested flight-level change (FL)
    double f_i = 0.0;     ///< initial flight level (FL)
    double v_ias = 0.0;   ///< indicated airspeed (kn)

    double target() const { return f_i + delta_f; }

    static constexpr std::size_t size = 3;
    std::array<double, size> as_array() const { return {delta_f, f_i, v_ias}; }

    void validate() const
    {
        if (!(delta_f > 0.0) || !(f_i > 0.0) || !(v_ias > 0.0) || !std::isfinite(delta_f) ||
            !std::isfinite(f_i) || !std::isfinite(v_ias))
            throw DataError("climb features must be finite and strictly positive");
    }
};

struct Trajectory {
    std::string id;
    std::vector<Observation> observations;
    ClimbFeatures features;

    double duration() const { return observations.back().t - observations.front().t; }
    double first_level() const { return observations.front().f; }
    double last_level() const { return observations.back().f; }

    std::vector<double> times() const
    {
        std::vector<double> out(observations.size());
        std::transform(observations.begin(), observations.end(), out.begin(), [](const auto& o) { return o.t; });
        return out;
    }

    std::vector<double> levels() const
    {
        std::vector<double> out(observations.size());
        std::transform(observations.begin(), observations.end(), out.begin(), [](const auto& o) { return o.f; });
        return out;
    }
};

/// Minimum number of observations a trajectory must carry.
inline constexpr std::size_t min_observations = 4;

/// Throws DataError naming the trajectory if any invariant is violated.
inline void validate(const Trajectory& traj)
{
    const auto fail = [&](const std::string& why) { throw DataError("flight '" + traj.id + "': " + why); };
    if (traj.observations.size() < min_observations)
        fail("needs at least " + std::to_string(min_observations) + " observations");
    try {
        traj.features.validate();
    } catch (const DataError& e) {
        fail(e.what());
    }
    for (std::size_t j = 0; j < traj.observations.size(); ++j) {
        const auto& o = traj.observations[j];
        if (!std::isfinite(o.t) || !std::isfinite(o.f))
            fail("non-finite observation");
        if (o.t < 0.0)
            fail("negative time");
        if (!(o.f > 0.0))
            fail("non-positive flight level");
        if (j > 0 && !(o.t > traj.observations[j - 1].t))
            fail("timestamps not strictly increasing at row " + std::to_string(j));
    }
    if (std::abs(traj.first_level() - traj.features.f_i) > 1.0)
        fail("first observed level differs from f_i by more than 1 FL");
}

/// Column names of the observation CSV.
struct DatasetSchema {
    std::string id = "flight_id";
    std::string t = "t_seconds";
    std::string f = "flight_level";
    std::string delta_f = "delta_f";
    std::string f_i = "f_i";
    std::string v_ias = "v_ias";
};

inline std::vector<Trajectory> load_dataset(std::istream& in, const DatasetSchema& schema = {})
{
    const auto table = csv::read(in);
    const std::size_t c_id = table.column(schema.id);
    const std::size_t c_t = table.column(schema.t);
    const std::size_t c_f = table.column(schema.f);
    const std::size_t c_df = table.column(schema.delta_f);
    const std::size_t c_fi = table.column(schema.f_i);
    const std::size_t c_v = table.column(schema.v_ias);

    std::vector<Trajectory> out;
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const auto line = table.line_numbers[r];
        const auto num = [&](std::size_t c) {
            const double v = csv::parse_double(row[c], line);
            if (!std::isfinite(v))
                throw DataError("line " + std::to_string(line) + ": non-finite value");
            return v;
        };
        const Observation obs{num(c_t), num(c_f)};
        const ClimbFeatures feat{num(c_df), num(c_fi), num(c_v)};

        auto [it, inserted] = index.try_emplace(row[c_id], out.size());
        if (inserted) {
            out.push_back(Trajectory{row[c_id], {}, feat});
        }
        auto& traj = out[it->second];
        if (!inserted) {
            if (feat.delta_f != traj.features.delta_f || feat.f_i != traj.features.f_i ||
                feat.v_ias != traj.features.v_ias)
                throw DataError("line " + std::to_string(line) + ": features change within flight '" + traj.id + "'");
            const double prev = traj.observations.back().t;
            if (obs.t == prev)
                throw DataError("line " + std::to_string(line) + ": duplicate time for flight '" + traj.id + "'");
            if (obs.t < prev)
                throw DataError("line " + std::to_string(line) + ": timestamps not increasing for flight '" +
                                traj.id + "'");
        }
        traj.observations.push_back(obs);
    }
    for (const auto& traj : out)
        validate(traj);
    return out;
}

inline std::vector<Trajectory> load_dataset(const std::filesystem::path& path, const DatasetSchema& schema = {})
{
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open '" + path.string() + "'");
    return load_dataset(in, schema);
}

inline void save_dataset(std::ostream& out, std::span<const Trajectory> dataset, const DatasetSchema& schema = {})
{
    out << schema.id << ',' << schema.t << ',' << schema.f << ',' << schema.delta_f << ',' << schema.f_i << ','
        << schema.v_ias << '\n';
    for (const auto& traj : dataset) {
        const auto df = csv::format(traj.features.delta_f);
        const auto fi = csv::format(traj.features.f_i);
        const auto v = csv::format(traj.features.v_ias);
        for (const auto& o : traj.observations)
            out << traj.id << ',' << csv::format(o.t) << ',' << csv::format(o.f) << ',' << df << ',' << fi << ','
                << v << '\n';
    }
}

inline void save_dataset(const std::filesystem::path& path, std::span<const Trajectory> dataset,
                         const DatasetSchema& schema = {})
{
    csv::write_atomically(path, [&](std::ostream& out) { save_dataset(out, dataset, schema); });
}

/// Default allowed descent between consecutive radar returns (FL).
inline constexpr double default_dip_tolerance = 1.0;

enum class ScreenResult { accepted, rejected };

inline ScreenResult screen_monotone(const Trajectory& traj, double dip_tolerance = default_dip_tolerance)
{
    for (std::size_t j = 1; j < traj.observations.size(); ++j)
        if (traj.observations[j].f < traj.observations[j - 1].f - dip_tolerance)
            return ScreenResult::rejected;
    return ScreenResult::accepted;
}

/// Global time normalisation constant shared by every trajectory of a model.
struct TimeHorizon {
    double T = 0.0;

    explicit TimeHorizon(double seconds = 1.0) : T(seconds)
    {
        if (!(seconds > 0.0) || !std::isfinite(seconds))
            throw InvalidArgument("time horizon must be positive and finite");
    }

    double normalize(double seconds_since_start) const { return seconds_since_start / T; }
    double denormalize(double tau) const { return tau * T; }
};

inline constexpr double default_horizon_slack = 1.2;

inline TimeHorizon compute_horizon(std::span<const Trajectory> dataset, double slack = default_horizon_slack)
{
    if (dataset.empty())
        throw InvalidArgument("cannot compute a time horizon from an empty dataset");
    if (!(slack >= 1.0))
        throw InvalidArgument("horizon slack must be >= 1");
    double longest = 0.0;
    for (const auto& traj : dataset)
        longest = std::max(longest, traj.duration());
    if (!(longest > 0.0))
        throw InvalidArgument("dataset has no positive-duration trajectory");
    return TimeHorizon(slack * longest);
}

/// Maps t to (t - t_first) / T. The first normalized time is exactly 0.
inline Trajectory normalize_time(const Trajectory& traj, const TimeHorizon& horizon)
{
    if (traj.duration() > horizon.T)
        throw InvalidArgument("flight '" + traj.id + "' lasts " + std::to_string(traj.duration()) +
                              " s, longer than the horizon of " + std::to_string(horizon.T) + " s");
    Trajectory out = traj;
    const double t0 = traj.observations.front().t;
    for (auto& o : out.observations)
        o.t = horizon.normalize(o.t - t0);
    out.observations.front().t = 0.0;
    return out;
}

/// Inverse of normalize_time given the original start time.
inline Trajectory denormalize_time(const Trajectory& normalized, const TimeHorizon& horizon, double t_first)
{
    Trajectory out = normalized;
    for (auto& o : out.observations)
        o.t = horizon.denormalize(o.t) + t_first;
    return out;
}

/// Observed level at time t by linear interpolation between radar returns.
/// Returns NaN outside the observed span.
inline double interpolate_level(const Trajectory& traj, double t)
{
    const auto& obs = traj.observations;
    if (t < obs.front().t || t > obs.back().t)
        return std::numeric_limits<double>::quiet_NaN();
    auto it = std::upper_bound(obs.begin(), obs.end(), t, [](double v, const Observation& o) { return v < o.t; });
    if (it == obs.end())
        return obs.back().f;
    const auto& hi = *it;
    const auto& lo = *(it - 1);
    const double w = (t - lo.t) / (hi.t - lo.t);
    return lo.f + w * (hi.f - lo.f);
}

/// First time the piecewise-linear observed climb reaches `level`; NaN if it never does.
inline double observed_arrival(const Trajectory& traj, double level)
{
    const auto& obs = traj.observations;
    if (obs.front().f >= level)
        return obs.front().t;
    for (std::size_t j = 1; j < obs.size(); ++j) {
        if (obs[j].f >= level) {
            const auto& lo = obs[j - 1];
            const auto& hi = obs[j];
            return lo.t + (level - lo.f) / (hi.f - lo.f) * (hi.t - lo.t);
        }
    }
    return std::numeric_limits<double>::quiet_NaN();
}

} // namespace climbemu
