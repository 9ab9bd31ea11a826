#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace rwm {

/// Row-major point storage: one row per point, one column per coordinate.
using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Labels = std::vector<int>;
using Index = Eigen::Index;

inline constexpr double kSumTolerance = 1e-9;

namespace detail {

inline void require(bool condition, const std::string& message) {
    if (!condition) throw std::invalid_argument(message);
}

inline bool all_finite(const PointMatrix& m) { return m.allFinite(); }

inline double squared_distance(const PointMatrix& a, Index i, const PointMatrix& b, Index j) {
    double s = 0.0;
    for (Index c = 0; c < a.cols(); ++c) {
        const double diff = a(i, c) - b(j, c);
        s += diff * diff;
    }
    return s;
}

}  // namespace detail

/// Target-domain samples: points in R^d with nonnegative weights summing to one.
///
/// Weights are normalized on construction. Instances are immutable and can be
/// shared freely between threads.
class EmpiricalMeasure {
public:
    EmpiricalMeasure() = default;

    /// Uniform weights.
    explicit EmpiricalMeasure(PointMatrix points, std::optional<Labels> labels = std::nullopt)
        : EmpiricalMeasure(points, Vector::Constant(points.rows(), 1.0), std::move(labels)) {}

    EmpiricalMeasure(PointMatrix points, Vector weights, std::optional<Labels> labels = std::nullopt)
        : points_(std::move(points)), weights_(std::move(weights)), labels_(std::move(labels)) {
        detail::require(points_.rows() >= 1, "measure needs at least one point");
        detail::require(points_.cols() >= 1, "measure points need dimension >= 1");
        detail::require(detail::all_finite(points_), "measure points must be finite");
        detail::require(weights_.size() == points_.rows(), "weights/points length mismatch");
        detail::require(weights_.allFinite() && (weights_.array() >= 0.0).all(),
                        "measure weights must be finite and nonnegative");
        const double total = weights_.sum();
        detail::require(total > 0.0, "measure weights must not all be zero");
        weights_ /= total;
        if (labels_) {
            detail::require(static_cast<Index>(labels_->size()) == points_.rows(),
                            "labels/points length mismatch");
        }
    }

    const PointMatrix& points() const { return points_; }
    const Vector& weights() const { return weights_; }
    const std::optional<Labels>& labels() const { return labels_; }
    bool has_labels() const { return labels_.has_value(); }
    Index size() const { return points_.rows(); }
    Index dim() const { return points_.cols(); }

    double max_weight() const { return weights_.maxCoeff(); }

    /// Weighted mean of the samples.
    Eigen::RowVectorXd mean() const { return weights_.transpose() * points_; }

private:
    PointMatrix points_;
    Vector weights_;
    std::optional<Labels> labels_;
};

/// The sparse mean: k support points with target weights, optional labels and
/// dual potentials.
struct CentroidSet {
    PointMatrix positions;
    Vector target_weights;
    std::optional<Labels> labels;
    Vector potentials;

    CentroidSet() = default;

    /// Potentials start at zero; weights are normalized.
    CentroidSet(PointMatrix pos, Vector weights, std::optional<Labels> lab = std::nullopt)
        : positions(std::move(pos)), target_weights(std::move(weights)), labels(std::move(lab)) {
        detail::require(positions.rows() >= 1, "centroid set needs at least one centroid");
        detail::require(target_weights.size() == positions.rows(), "weights/positions length mismatch");
        detail::require(target_weights.allFinite() && (target_weights.array() > 0.0).all(),
                        "centroid target weights must be positive");
        target_weights /= target_weights.sum();
        potentials = Vector::Zero(positions.rows());
        validate();
    }

    /// Uniform target weights.
    explicit CentroidSet(PointMatrix pos, std::optional<Labels> lab = std::nullopt)
        : CentroidSet(pos, Vector::Constant(pos.rows(), 1.0), std::move(lab)) {}

    Index size() const { return positions.rows(); }
    Index dim() const { return positions.cols(); }

    void validate() const {
        detail::require(positions.rows() >= 1, "centroid set needs at least one centroid");
        detail::require(detail::all_finite(positions), "centroid positions must be finite");
        detail::require(target_weights.size() == positions.rows(), "weights/positions length mismatch");
        detail::require((target_weights.array() > 0.0).all(), "centroid target weights must be positive");
        detail::require(std::abs(target_weights.sum() - 1.0) <= kSumTolerance,
                        "centroid target weights must sum to 1");
        detail::require(potentials.size() == positions.rows(), "potentials/positions length mismatch");
        detail::require(potentials.allFinite(), "potentials must be finite");
        if (labels) {
            detail::require(static_cast<Index>(labels->size()) == positions.rows(),
                            "labels/positions length mismatch");
        }
    }
};

/// Many-to-one map from samples to centroids induced by a power diagram.
struct Assignment {
    std::vector<Index> centroid_of;
    Vector cell_mass;
    double transport_cost = 0.0;
};

/// Recomputes sum_i w_i ||x_i - y_{centroid_of[i]}||^2 from scratch.
inline double transport_cost(const EmpiricalMeasure& measure, const PointMatrix& positions,
                             const std::vector<Index>& centroid_of) {
    double cost = 0.0;
    for (Index i = 0; i < measure.size(); ++i) {
        cost += measure.weights()[i] *
                detail::squared_distance(measure.points(), i, positions, centroid_of[static_cast<std::size_t>(i)]);
    }
    return cost;
}

}  // namespace rwm
