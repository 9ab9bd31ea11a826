#pragma once

// Penalties on the support positions and the exact or iterative minimizers of
//   sum_j ||y_j - t_j||^2 + penalty(y)
// for fixed per-centroid targets t (the cell barycenters).

#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <utility>
#include <variant>
#include <vector>

#include "rwm/types.hpp"

namespace rwm {

/// Ordered branches over centroid indices plus the pinned nodes.
class CurveTopology {
public:
    CurveTopology() = default;

    CurveTopology(std::vector<std::vector<Index>> branches, std::set<Index> fixed_nodes, Index node_count)
        : branches_(std::move(branches)), fixed_(std::move(fixed_nodes)), node_count_(node_count) {
        detail::require(node_count_ >= 1, "topology needs at least one node");
        detail::require(!branches_.empty(), "topology needs at least one branch");
        for (const auto& branch : branches_) {
            detail::require(branch.size() >= 2, "every branch needs at least two nodes");
            for (std::size_t p = 0; p < branch.size(); ++p) {
                detail::require(branch[p] >= 0 && branch[p] < node_count_, "branch index out of range");
                if (p > 0) detail::require(branch[p] != branch[p - 1], "branch repeats a consecutive index");
            }
        }
        for (Index f : fixed_) detail::require(f >= 0 && f < node_count_, "fixed node index out of range");
    }

    /// A single chain 0, 1, ..., n-1 with both ends pinned.
    static CurveTopology chain(Index node_count) {
        std::vector<Index> branch(static_cast<std::size_t>(node_count));
        for (Index i = 0; i < node_count; ++i) branch[static_cast<std::size_t>(i)] = i;
        return CurveTopology({std::move(branch)}, {0, node_count - 1}, node_count);
    }

    const std::vector<std::vector<Index>>& branches() const { return branches_; }
    const std::set<Index>& fixed_nodes() const { return fixed_; }
    bool is_fixed(Index node) const { return fixed_.count(node) > 0; }
    Index node_count() const { return node_count_; }

private:
    std::vector<std::vector<Index>> branches_;
    std::set<Index> fixed_;
    Index node_count_ = 0;
};

struct NoRegularizer {};
struct LabelPotential {
    double lambda = 0.0;
};
struct AffineConsistency {
    double lambda = 0.0;
};
struct CurveRegularizer {
    double lambda1 = 0.0;  ///< length
    double lambda2 = 0.0;  ///< squared second differences
    CurveTopology topology;
};

using RegularizerSpec = std::variant<NoRegularizer, LabelPotential, AffineConsistency, CurveRegularizer>;

inline void validate(const RegularizerSpec& spec) {
    std::visit(
        [](const auto& r) {
            using T = std::decay_t<decltype(r)>;
            if constexpr (std::is_same_v<T, LabelPotential> || std::is_same_v<T, AffineConsistency>) {
                detail::require(r.lambda >= 0.0 && std::isfinite(r.lambda), "lambda must be >= 0");
            } else if constexpr (std::is_same_v<T, CurveRegularizer>) {
                detail::require(r.lambda1 >= 0.0 && std::isfinite(r.lambda1), "lambda1 must be >= 0");
                detail::require(r.lambda2 >= 0.0 && std::isfinite(r.lambda2), "lambda2 must be >= 0");
            }
        },
        spec);
}

/// Quadratic fidelity to the targets: sum_j ||y_j - t_j||^2.
inline double fidelity(const PointMatrix& positions, const PointMatrix& targets) {
    return (positions - targets).squaredNorm();
}

// ---------------------------------------------------------------------------
// Intra-class potential

namespace detail {

inline std::map<int, std::vector<Index>> label_groups(const Labels& labels) {
    std::map<int, std::vector<Index>> groups;
    for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(static_cast<Index>(i));
    return groups;
}

}  // namespace detail

/// lambda * sum over unordered same-label pairs of ||y_i - y_j||^2.
///
/// Uses the identity sum_{pairs} ||y_i - y_j||^2 = m sum ||y_i||^2 - ||sum y_i||^2
/// on mean-centered coordinates per group.
inline double label_potential_loss(const PointMatrix& positions, const Labels& labels, double lambda) {
    detail::require(static_cast<Index>(labels.size()) == positions.rows(), "labels/positions length mismatch");
    double total = 0.0;
    for (const auto& [label, members] : detail::label_groups(labels)) {
        if (members.size() < 2) continue;
        Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(positions.cols());
        for (Index i : members) mean += positions.row(i);
        mean /= static_cast<double>(members.size());
        double spread = 0.0;
        for (Index i : members) spread += (positions.row(i) - mean).squaredNorm();
        total += static_cast<double>(members.size()) * spread;
    }
    return lambda * total;
}

/// Exact minimizer of fidelity + label potential. Per label group of size m
/// the normal equations read (1 + lambda m) y_j - lambda S = t_j with S the
/// group sum, and S equals the sum of the group's targets, so
///   y_j = (t_j + lambda sum_group t) / (1 + lambda m).
inline PointMatrix solve_label_update(const PointMatrix& targets, const Labels& labels, double lambda) {
    detail::require(static_cast<Index>(labels.size()) == targets.rows(), "labels/targets length mismatch");
    detail::require(lambda >= 0.0 && std::isfinite(lambda), "lambda must be >= 0");
    PointMatrix out = targets;
    if (lambda == 0.0) return out;
    for (const auto& [label, members] : detail::label_groups(labels)) {
        const auto m = static_cast<double>(members.size());
        Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(targets.cols());
        for (Index i : members) sum += targets.row(i);
        const double denom = 1.0 + lambda * m;
        for (Index i : members) out.row(i) = (targets.row(i) + lambda * sum) / denom;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Affine consistency

/// y -> linear * y + translation.
struct AffineMap {
    Eigen::MatrixXd linear;
    Eigen::VectorXd translation;

    static AffineMap identity(Index d) { return {Eigen::MatrixXd::Identity(d, d), Eigen::VectorXd::Zero(d)}; }

    PointMatrix apply(const PointMatrix& points) const {
        PointMatrix out = points * linear.transpose();
        out.rowwise() += translation.transpose();
        return out;
    }
};

/// Least-squares affine map taking source to target, fitted on homogeneous
/// coordinates [y, 1]. Rank-deficient designs get the minimum-norm solution.
inline AffineMap fit_affine(const PointMatrix& source, const PointMatrix& target) {
    detail::require(source.rows() == target.rows(), "affine fit needs paired points");
    detail::require(source.cols() == target.cols(), "affine fit needs equal dimensions");
    detail::require(source.rows() >= 1, "affine fit needs at least one pair");
    const Index k = source.rows();
    const Index d = source.cols();
    Eigen::MatrixXd design(k, d + 1);
    design.leftCols(d) = source;
    design.col(d).setOnes();
    const Eigen::MatrixXd rhs = target;
    const Eigen::MatrixXd solution = design.completeOrthogonalDecomposition().solve(rhs);
    AffineMap map;
    map.linear = solution.topRows(d).transpose();
    map.translation = solution.row(d).transpose();
    return map;
}

/// Exact minimizer of sum ||y_j - t_j||^2 + lambda sum ||y_j - p_j||^2 for
/// fixed affine predictions p.
inline PointMatrix solve_affine_update(const PointMatrix& targets, const PointMatrix& predictions,
                                       double lambda) {
    detail::require(targets.rows() == predictions.rows() && targets.cols() == predictions.cols(),
                    "targets/predictions shape mismatch");
    detail::require(lambda >= 0.0 && std::isfinite(lambda), "lambda must be >= 0");
    return (targets + lambda * predictions) / (1.0 + lambda);
}

/// lambda * sum ||y_j - p_j||^2.
inline double affine_loss(const PointMatrix& positions, const PointMatrix& predictions, double lambda) {
    return lambda * (positions - predictions).squaredNorm();
}

// ---------------------------------------------------------------------------
// Length and curvature

struct CurveLossParts {
    double length = 0.0;     ///< sum of segment lengths
    double curvature = 0.0;  ///< sum of squared second differences at interior nodes
};

inline CurveLossParts curve_loss_parts(const PointMatrix& positions, const CurveTopology& topology) {
    detail::require(positions.rows() == topology.node_count(), "positions/topology size mismatch");
    CurveLossParts parts;
    for (const auto& branch : topology.branches()) {
        for (std::size_t p = 0; p + 1 < branch.size(); ++p) {
            parts.length += (positions.row(branch[p + 1]) - positions.row(branch[p])).norm();
        }
        for (std::size_t p = 1; p + 1 < branch.size(); ++p) {
            parts.curvature += (positions.row(branch[p - 1]) - 2.0 * positions.row(branch[p]) +
                                positions.row(branch[p + 1]))
                                   .squaredNorm();
        }
    }
    return parts;
}

inline double curve_loss(const PointMatrix& positions, const CurveTopology& topology, double lambda1,
                         double lambda2) {
    const CurveLossParts parts = curve_loss_parts(positions, topology);
    return lambda1 * parts.length + lambda2 * parts.curvature;
}

struct CurveSolveOptions {
    double gradient_tolerance = 1e-6;  ///< on the max-norm over free coordinates
    int max_iterations = 1000;
    double initial_step = 0.1;
};

struct CurveSolveResult {
    PointMatrix positions;
    double objective = 0.0;
    int iterations = 0;
    bool converged = false;
};

namespace detail {

inline double curve_objective(const PointMatrix& y, const PointMatrix& targets, const CurveTopology& topology,
                              double lambda1, double lambda2) {
    return fidelity(y, targets) + curve_loss(y, topology, lambda1, lambda2);
}

/// Gradient of the curve objective; rows of fixed nodes are zero. The length
/// term contributes nothing across coincident consecutive points.
inline PointMatrix curve_gradient(const PointMatrix& y, const PointMatrix& targets, const CurveTopology& topology,
                                  double lambda1, double lambda2) {
    PointMatrix g = 2.0 * (y - targets);
    for (const auto& branch : topology.branches()) {
        if (lambda1 > 0.0) {
            for (std::size_t p = 0; p + 1 < branch.size(); ++p) {
                const Eigen::RowVectorXd diff = y.row(branch[p]) - y.row(branch[p + 1]);
                const double len = diff.norm();
                if (len == 0.0) continue;
                g.row(branch[p]) += lambda1 * diff / len;
                g.row(branch[p + 1]) -= lambda1 * diff / len;
            }
        }
        if (lambda2 > 0.0) {
            for (std::size_t p = 1; p + 1 < branch.size(); ++p) {
                const Eigen::RowVectorXd s =
                    y.row(branch[p - 1]) - 2.0 * y.row(branch[p]) + y.row(branch[p + 1]);
                g.row(branch[p - 1]) += 2.0 * lambda2 * s;
                g.row(branch[p]) -= 4.0 * lambda2 * s;
                g.row(branch[p + 1]) += 2.0 * lambda2 * s;
            }
        }
    }
    for (Index f : topology.fixed_nodes()) g.row(f).setZero();
    return g;
}

}  // namespace detail

/// Starting point for the curve solve: the targets, with pinned rows taken
/// from `pinned`.
inline PointMatrix curve_start(const PointMatrix& targets, const PointMatrix& pinned, const CurveTopology& topology) {
    PointMatrix y = targets;
    for (Index f : topology.fixed_nodes()) y.row(f) = pinned.row(f);
    return y;
}

/// Gradient descent with Armijo backtracking on
///   sum_j ||y_j - t_j||^2 + lambda1 * length + lambda2 * curvature,
/// starting from the targets with pinned nodes held at their `pinned` rows.
/// Pinned nodes never move.
inline CurveSolveResult solve_curve_update(const PointMatrix& targets, const PointMatrix& pinned,
                                           const CurveTopology& topology, double lambda1, double lambda2,
                                           const CurveSolveOptions& opts = {}) {
    detail::require(targets.rows() == topology.node_count(), "targets/topology size mismatch");
    detail::require(pinned.rows() == targets.rows() && pinned.cols() == targets.cols(),
                    "pinned/targets shape mismatch");
    detail::require(lambda1 >= 0.0 && lambda2 >= 0.0, "curve lambdas must be >= 0");

    CurveSolveResult out;
    out.positions = curve_start(targets, pinned, topology);
    out.objective = detail::curve_objective(out.positions, targets, topology, lambda1, lambda2);

    constexpr double kArmijo = 1e-4;
    double step = opts.initial_step;
    for (int it = 0; it < opts.max_iterations; ++it) {
        const PointMatrix g = detail::curve_gradient(out.positions, targets, topology, lambda1, lambda2);
        const double gmax = g.cwiseAbs().maxCoeff();
        if (gmax <= opts.gradient_tolerance) {
            out.converged = true;
            break;
        }
        const double gnorm2 = g.squaredNorm();
        bool accepted = false;
        while (step * gmax > 1e-300) {
            PointMatrix trial = out.positions - step * g;
            const double value = detail::curve_objective(trial, targets, topology, lambda1, lambda2);
            if (value <= out.objective - kArmijo * step * gnorm2) {
                out.positions = std::move(trial);
                out.objective = value;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        out.iterations = it + 1;
        if (!accepted) break;
        step *= 2.0;
    }
    if (!out.converged) {
        const PointMatrix g = detail::curve_gradient(out.positions, targets, topology, lambda1, lambda2);
        out.converged = g.cwiseAbs().maxCoeff() <= opts.gradient_tolerance;
    }
    return out;
}

}  // namespace rwm
