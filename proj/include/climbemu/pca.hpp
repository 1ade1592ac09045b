#pragma once

#include <cmath>
#include <limits>
#include <ostream>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "climbemu/csv.hpp"
#include "climbemu/error.hpp"
#include "climbemu/fitting.hpp"
#include "climbemu/monotone.hpp"
#include "climbemu/parallel.hpp"
#include "climbemu/trajectory.hpp"

namespace climbemu {

/// Uncentered principal-component basis of packed coefficient vectors.
/// Columns of `components` are the retained psi_k.
struct PCBasis {
    Eigen::MatrixXd components;     ///< n_y x n_c, orthonormal columns
    Eigen::VectorXd singular_values; ///< all n_y values, descending
    int n_w = 0;

    int n_c() const { return static_cast<int>(components.cols()); }
    Eigen::Index n_y() const { return components.rows(); }

    PCBasis truncated(int n_c) const
    {
        if (n_c < 1 || n_c > components.cols())
            throw InvalidArgument("n_c must lie in [1, " + std::to_string(components.cols()) + "]");
        return {components.leftCols(n_c), singular_values, n_w};
    }
};

/// Scores of every trajectory, one row per trajectory in dataset order.
using ScoreSet = Eigen::MatrixXd;

/// Full-rank uncentered PCA of the rows of D_y via SVD. Each component is
/// signed so that its largest-magnitude entry is positive.
inline PCBasis fit_pca(const Eigen::Ref<const Eigen::MatrixXd>& D_y)
{
    if (D_y.rows() < 1)
        throw InvalidArgument("PCA needs at least one coefficient vector");
    if (D_y.cols() < 4 || D_y.cols() % 2 != 0)
        throw InvalidArgument("coefficient vectors must have length 2*n_w + 2");
    if (!D_y.allFinite())
        throw InvalidArgument("coefficient vectors must be finite");
    if (D_y.cwiseAbs().maxCoeff() == 0.0)
        throw InvalidArgument("degenerate PCA input: all coefficient vectors are zero");

    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(D_y, Eigen::ComputeFullV);
    PCBasis basis;
    basis.n_w = static_cast<int>((D_y.cols() - 2) / 2);
    basis.components = svd.matrixV();
    basis.singular_values = Eigen::VectorXd::Zero(D_y.cols());
    basis.singular_values.head(svd.singularValues().size()) = svd.singularValues();
    for (Eigen::Index k = 0; k < basis.components.cols(); ++k) {
        Eigen::Index arg = 0;
        basis.components.col(k).cwiseAbs().maxCoeff(&arg);
        if (basis.components(arg, k) < 0.0)
            basis.components.col(k) *= -1.0;
    }
    return basis;
}

/// alpha_k = <y, psi_k> for the retained components.
inline Eigen::VectorXd project(const Eigen::Ref<const Eigen::VectorXd>& y, const PCBasis& basis)
{
    if (y.size() != basis.n_y())
        throw InvalidArgument("coefficient vector length does not match the PCA basis");
    return basis.components.transpose() * y;
}

inline ScoreSet project_all(const Eigen::Ref<const Eigen::MatrixXd>& D_y, const PCBasis& basis)
{
    if (D_y.cols() != basis.n_y())
        throw InvalidArgument("coefficient vector length does not match the PCA basis");
    return D_y * basis.components;
}

/// y = sum_k alpha_k psi_k unpacked with beta0 = f_i.
inline MonotoneCoefficients reconstruct(const Eigen::Ref<const Eigen::VectorXd>& alpha, const PCBasis& basis,
                                        double f_i)
{
    return coefficients_from_scores(alpha, basis.components, f_i);
}

inline ScoreCurve eval_trajectory_from_scores(const Eigen::Ref<const Eigen::VectorXd>& alpha, const PCBasis& basis,
                                              double f_i, std::span<const double> ts, QuadratureConfig q = {})
{
    if (alpha.size() != basis.n_c())
        throw InvalidArgument("score vector length must equal n_c");
    return eval_trajectory_from_scores(alpha, basis.components, f_i, ts, q);
}

/// Sum over trajectories of the RSS between the observations and the curve
/// rebuilt from each trajectory's projected coefficients (beta0 pinned to the
/// first observation, as in the fit). A reconstruction that overflows
/// contributes +inf.
inline double reconstruction_error(std::span<const Trajectory> normalized, const Eigen::Ref<const Eigen::MatrixXd>& D_y,
                                   const PCBasis& basis, QuadratureConfig q = {})
{
    if (static_cast<Eigen::Index>(normalized.size()) != D_y.rows())
        throw InvalidArgument("dataset and coefficient matrix are not aligned");
    if (basis.n_c() < 1)
        throw InvalidArgument("reconstruction needs n_c >= 1");
    const auto quad = std::make_shared<const FourierQuadrature>(basis.n_w, q);
    const Eigen::MatrixXd projector = basis.components * basis.components.transpose();
    std::vector<double> losses(normalized.size());
    parallel_for(normalized.size(), [&](std::size_t i) {
        const Eigen::VectorXd y = projector * D_y.row(static_cast<Eigen::Index>(i)).transpose();
        const auto& traj = normalized[i];
        try {
            const MonotoneCurve curve(MonotoneCoefficients::from_vector(y, traj.first_level()), quad);
            double loss = 0.0;
            for (const auto& o : traj.observations) {
                const double r = o.f - curve(o.t);
                loss += r * r;
            }
            losses[i] = loss;
        } catch (const QuadratureOverflow&) {
            losses[i] = std::numeric_limits<double>::infinity();
        }
    });
    double total = 0.0;
    for (double l : losses)
        total += l;
    return total;
}

inline constexpr double default_ratio_max = 1.01;

struct SweepRow {
    int n_c = 0;
    double epsilon_r = 0.0;
    double ratio = 0.0;
};

struct NcSelection {
    int n_c = 0;
    PCBasis basis;               ///< truncated to n_c
    std::vector<SweepRow> sweep; ///< every candidate, ascending n_c
};

/// Removes components from full rank until eps_r / eps_L >= ratio_max would
/// trip, returning the last n_c that still satisfied the bound.
inline NcSelection select_n_c(std::span<const Trajectory> normalized, const Eigen::Ref<const Eigen::MatrixXd>& D_y,
                              double epsilon_L, const PCBasis& full, QuadratureConfig q = {},
                              double ratio_max = default_ratio_max)
{
    if (!(epsilon_L > 0.0))
        throw InvalidArgument("epsilon_L must be positive");
    if (!(ratio_max > 1.0))
        throw InvalidArgument("ratio_max must exceed 1");
    const int n_full = full.n_c();
    NcSelection out;
    out.sweep.resize(n_full);
    for (int n_c = n_full; n_c >= 1; --n_c) {
        const double e = reconstruction_error(normalized, D_y, full.truncated(n_c), q);
        out.sweep[n_c - 1] = {n_c, e, e / epsilon_L};
    }
    if (!(out.sweep.back().ratio < ratio_max))
        throw InternalInconsistency("full-rank reconstruction error ratio " + std::to_string(out.sweep.back().ratio) +
                                    " does not meet ratio_max");
    int chosen = n_full;
    while (chosen > 1 && out.sweep[chosen - 2].ratio < ratio_max)
        --chosen;
    out.n_c = chosen;
    out.basis = full.truncated(chosen);
    return out;
}

inline void write_sweep_csv(std::ostream& out, std::span<const SweepRow> sweep)
{
    out << "n_c,epsilon_r,epsilon_r/epsilon_L\n";
    for (const auto& row : sweep)
        out << row.n_c << ',' << csv::format(row.epsilon_r) << ',' << csv::format(row.ratio) << '\n';
}

} // namespace climbemu
