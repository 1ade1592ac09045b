#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "climbemu/csv.hpp"
#include "climbemu/error.hpp"
#include "climbemu/gp.hpp"
#include "climbemu/monotone.hpp"
#include "climbemu/pca.hpp"
#include "climbemu/trajectory.hpp"

namespace climbemu {

inline constexpr int artifact_format_version = 1;

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL)
{
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Hash of the dataset's canonical CSV serialization, as 16 hex digits.
inline std::string dataset_hash(std::span<const Trajectory> dataset)
{
    std::ostringstream s;
    save_dataset(s, dataset);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(s.str())));
    return buf;
}

struct Provenance {
    std::string dataset_hash;
    std::vector<std::string> training_ids;
    nlohmann::json config = nlohmann::json::object();
};

/// Everything needed to reproduce predictions of a trained model.
struct ModelArtifact {
    int format_version = artifact_format_version;
    TimeHorizon horizon;
    int n_w = 0;
    QuadratureConfig quadrature;
    PCBasis basis;
    ScoreEmulator emulator;
    double epsilon_L = 0.0;
    std::vector<SweepRow> sweep;
    std::vector<double> log_marginal_likelihoods;
    Provenance provenance;

    int n_c() const { return basis.n_c(); }
};

namespace detail {

inline nlohmann::json to_json(const Eigen::MatrixXd& m)
{
    auto rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        auto row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline nlohmann::json to_json(const Eigen::VectorXd& v)
{
    auto arr = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i)
        arr.push_back(v[i]);
    return arr;
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j)
{
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i)
        v[static_cast<Eigen::Index>(i)] = j.at(i).get<double>();
    return v;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, Eigen::Index cols)
{
    Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), cols);
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto& row = j.at(i);
        if (static_cast<Eigen::Index>(row.size()) != cols)
            throw DataError("ragged matrix in model artifact");
        for (Eigen::Index c = 0; c < cols; ++c)
            m(static_cast<Eigen::Index>(i), c) = row.at(static_cast<std::size_t>(c)).get<double>();
    }
    return m;
}

} // namespace detail

inline nlohmann::json artifact_to_json(const ModelArtifact& a)
{
    using detail::to_json;
    nlohmann::json j;
    j["format_version"] = a.format_version;
    j["horizon_seconds"] = a.horizon.T;
    j["n_w"] = a.n_w;
    j["n_quad"] = a.quadrature.n_quad;
    j["n_c"] = a.n_c();
    j["pca"] = {{"components", to_json(a.basis.components)}, {"singular_values", to_json(a.basis.singular_values)}};

    const auto& em = a.emulator;
    nlohmann::json gps = nlohmann::json::array();
    for (const auto& gp : em.gps()) {
        const auto& h = gp.hyperparameters();
        gps.push_back({{"signal_variance", h.signal_variance},
                       {"lengthscales", to_json(h.lengthscales)},
                       {"noise_variance", h.noise_variance},
                       {"targets", to_json(gp.targets())}});
    }
    j["emulator"] = {{"feature_mean", to_json(em.standardizer().mean)},
                     {"feature_scale", to_json(em.standardizer().scale)},
                     {"feature_lower", to_json(em.feature_lower())},
                     {"feature_upper", to_json(em.feature_upper())},
                     {"inputs", to_json(em.gps().front().inputs())},
                     {"gps", std::move(gps)}};

    j["epsilon_L"] = a.epsilon_L;
    auto sweep = nlohmann::json::array();
    for (const auto& r : a.sweep)
        sweep.push_back({{"n_c", r.n_c}, {"epsilon_r", r.epsilon_r}, {"ratio", r.ratio}});
    j["sweep"] = std::move(sweep);
    j["log_marginal_likelihoods"] = a.log_marginal_likelihoods;
    j["provenance"] = {{"dataset_hash", a.provenance.dataset_hash},
                       {"training_ids", a.provenance.training_ids},
                       {"config", a.provenance.config}};
    return j;
}

/// Rebuilds the artifact; GP factorizations are recomputed from the stored
/// inputs, targets and hyperparameters.
inline ModelArtifact artifact_from_json(const nlohmann::json& j)
{
    using detail::matrix_from_json;
    using detail::vector_from_json;
    try {
        const int version = j.at("format_version").get<int>();
        if (version != artifact_format_version)
            throw DataError("unsupported model artifact format_version " + std::to_string(version) + " (expected " +
                            std::to_string(artifact_format_version) + ")");
        ModelArtifact a;
        a.horizon = TimeHorizon(j.at("horizon_seconds").get<double>());
        a.n_w = j.at("n_w").get<int>();
        a.quadrature.n_quad = j.at("n_quad").get<int>();
        a.quadrature.validate();
        const Eigen::Index n_y = 2 * a.n_w + 2;
        const int n_c = j.at("n_c").get<int>();
        a.basis.n_w = a.n_w;
        a.basis.components = matrix_from_json(j.at("pca").at("components"), n_c);
        a.basis.singular_values = vector_from_json(j.at("pca").at("singular_values"));
        if (a.basis.components.rows() != n_y)
            throw DataError("PCA basis does not match n_w");

        const auto& e = j.at("emulator");
        FeatureStandardizer st{vector_from_json(e.at("feature_mean")), vector_from_json(e.at("feature_scale"))};
        const Eigen::MatrixXd X = matrix_from_json(e.at("inputs"), st.mean.size());
        std::vector<GaussianProcess> gps;
        for (const auto& g : e.at("gps")) {
            GPHyperparameters h;
            h.signal_variance = g.at("signal_variance").get<double>();
            h.lengthscales = vector_from_json(g.at("lengthscales"));
            h.noise_variance = g.at("noise_variance").get<double>();
            gps.emplace_back(X, vector_from_json(g.at("targets")), h);
        }
        if (static_cast<int>(gps.size()) != n_c)
            throw DataError("artifact has " + std::to_string(gps.size()) + " score GPs for n_c = " +
                            std::to_string(n_c));
        a.emulator = ScoreEmulator(std::move(st), std::move(gps), vector_from_json(e.at("feature_lower")),
                                   vector_from_json(e.at("feature_upper")));

        a.epsilon_L = j.at("epsilon_L").get<double>();
        for (const auto& r : j.at("sweep"))
            a.sweep.push_back({r.at("n_c").get<int>(), r.at("epsilon_r").get<double>(), r.at("ratio").get<double>()});
        a.log_marginal_likelihoods = j.at("log_marginal_likelihoods").get<std::vector<double>>();
        const auto& p = j.at("provenance");
        a.provenance.dataset_hash = p.at("dataset_hash").get<std::string>();
        a.provenance.training_ids = p.at("training_ids").get<std::vector<std::string>>();
        a.provenance.config = p.at("config");
        return a;
    } catch (const nlohmann::json::exception& ex) {
        throw DataError(std::string("malformed model artifact: ") + ex.what());
    }
}

inline std::string serialize_artifact(const ModelArtifact& a) { return artifact_to_json(a).dump(1) + "\n"; }

inline void save_artifact(const std::filesystem::path& path, const ModelArtifact& a)
{
    csv::write_atomically(path, serialize_artifact(a));
}

inline ModelArtifact load_artifact(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open model artifact " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& ex) {
        throw DataError("model artifact " + path.string() + " is not valid JSON: " + ex.what());
    }
    return artifact_from_json(j);
}

} // namespace climbemu
