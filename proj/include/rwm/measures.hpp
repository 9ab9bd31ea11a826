#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <vector>

#include "rwm/rng.hpp"
#include "rwm/types.hpp"

namespace rwm {

/// Rotation of a 2-D measure. With no explicit center the weighted data mean
/// is used.
struct RotationSpec {
    double angle_degrees = 0.0;
    std::optional<Eigen::Vector2d> center;
};

/// Two interleaved half circles. The first ceil(n/2) points lie on
/// (cos t, sin t) with label 0, the rest on (1 - cos t, 0.5 - sin t) with
/// label 1, t ~ U[0, pi]. Noise is isotropic Gaussian.
inline EmpiricalMeasure make_two_moons(Index n, double noise_sigma, std::uint64_t seed) {
    detail::require(n >= 2, "two moons needs n >= 2");
    detail::require(noise_sigma >= 0.0 && std::isfinite(noise_sigma), "noise sigma must be >= 0");
    Rng rng(seed);
    PointMatrix points(n, 2);
    Labels labels(static_cast<std::size_t>(n));
    const Index upper = (n + 1) / 2;
    for (Index i = 0; i < n; ++i) {
        const double t = rng.uniform(0.0, std::numbers::pi);
        double x, y;
        if (i < upper) {
            x = std::cos(t);
            y = std::sin(t);
            labels[static_cast<std::size_t>(i)] = 0;
        } else {
            x = 1.0 - std::cos(t);
            y = 0.5 - std::sin(t);
            labels[static_cast<std::size_t>(i)] = 1;
        }
        if (noise_sigma > 0.0) {
            x += rng.normal(0.0, noise_sigma);
            y += rng.normal(0.0, noise_sigma);
        }
        points(i, 0) = x;
        points(i, 1) = y;
    }
    return EmpiricalMeasure(std::move(points), std::move(labels));
}

/// Per-point weights for unrotated two-moons points whose arc parameter lies
/// within tail_fraction * pi of either end of its moon are multiplied by
/// factor. Returned weights sum to one.
inline Vector two_moons_tail_weights(const PointMatrix& points, const Labels& labels, double tail_fraction,
                                     double factor) {
    detail::require(points.cols() == 2, "two moons points are 2-D");
    detail::require(static_cast<Index>(labels.size()) == points.rows(), "labels/points length mismatch");
    detail::require(tail_fraction >= 0.0 && tail_fraction <= 0.5, "tail fraction must lie in [0, 0.5]");
    detail::require(factor > 0.0 && std::isfinite(factor), "tail factor must be > 0");
    const double cut = tail_fraction * std::numbers::pi;
    Vector weights(points.rows());
    for (Index i = 0; i < points.rows(); ++i) {
        const bool upper = labels[static_cast<std::size_t>(i)] == 0;
        const double t = upper ? std::atan2(points(i, 1), points(i, 0))
                               : std::atan2(0.5 - points(i, 1), 1.0 - points(i, 0));
        // Noise can push a point just past the arc ends; atan2 then wraps below zero.
        const bool tail = t < cut || t > std::numbers::pi - cut;
        weights[i] = tail ? factor : 1.0;
    }
    return weights / weights.sum();
}

/// Default three-component layout used by the adaptation experiments.
struct GaussianMixtureParams {
    std::vector<Eigen::VectorXd> means{Eigen::Vector2d(-1.0, 0.0), Eigen::Vector2d(1.0, 0.0),
                                       Eigen::Vector2d(0.0, 1.5)};
    std::vector<double> sigmas{0.3, 0.3, 0.3};
};

/// n / k isotropic samples per component (remainder to the earliest
/// components), labelled by component index.
inline EmpiricalMeasure make_gaussian_mixture(const std::vector<Eigen::VectorXd>& means,
                                              const std::vector<double>& sigmas, Index n,
                                              std::uint64_t seed) {
    detail::require(!means.empty(), "gaussian mixture needs at least one component");
    detail::require(means.size() == sigmas.size(), "means/sigmas length mismatch");
    const auto k = static_cast<Index>(means.size());
    detail::require(n >= k, "gaussian mixture needs n >= number of components");
    const Index d = means.front().size();
    detail::require(d >= 1, "component means need dimension >= 1");
    for (std::size_t c = 0; c < means.size(); ++c) {
        detail::require(means[c].size() == d, "component means must share a dimension");
        detail::require(means[c].allFinite(), "component means must be finite");
        detail::require(sigmas[c] > 0.0 && std::isfinite(sigmas[c]), "component sigmas must be > 0");
    }

    Rng rng(seed);
    PointMatrix points(n, d);
    Labels labels(static_cast<std::size_t>(n));
    const Index base = n / k;
    const Index extra = n % k;
    Index row = 0;
    for (Index c = 0; c < k; ++c) {
        const Index count = base + (c < extra ? 1 : 0);
        const auto& mu = means[static_cast<std::size_t>(c)];
        const double sigma = sigmas[static_cast<std::size_t>(c)];
        for (Index s = 0; s < count; ++s, ++row) {
            for (Index j = 0; j < d; ++j) points(row, j) = rng.normal(mu[j], sigma);
            labels[static_cast<std::size_t>(row)] = static_cast<int>(c);
        }
    }
    return EmpiricalMeasure(std::move(points), std::move(labels));
}

inline EmpiricalMeasure make_gaussian_mixture(Index n, std::uint64_t seed,
                                              const GaussianMixtureParams& params = {}) {
    return make_gaussian_mixture(params.means, params.sigmas, n, seed);
}

/// Samples around the planar curve (t, sin t, 0), t ~ U[0, pi], with 3-D
/// Gaussian noise.
inline EmpiricalMeasure make_bent_tube(Index n, double radius_sigma, std::uint64_t seed) {
    detail::require(n >= 1, "bent tube needs n >= 1");
    detail::require(radius_sigma >= 0.0 && std::isfinite(radius_sigma), "radius sigma must be >= 0");
    Rng rng(seed);
    PointMatrix points(n, 3);
    for (Index i = 0; i < n; ++i) {
        const double t = rng.uniform(0.0, std::numbers::pi);
        points(i, 0) = t;
        points(i, 1) = std::sin(t);
        points(i, 2) = 0.0;
        if (radius_sigma > 0.0) {
            for (Index j = 0; j < 3; ++j) points(i, j) += rng.normal(0.0, radius_sigma);
        }
    }
    return EmpiricalMeasure(std::move(points));
}

inline EmpiricalMeasure rotate(const EmpiricalMeasure& measure, const RotationSpec& spec) {
    detail::require(measure.dim() == 2, "rotation is defined for 2-D measures only");
    detail::require(std::isfinite(spec.angle_degrees), "rotation angle must be finite");
    Eigen::Vector2d center;
    if (spec.center) {
        detail::require(spec.center->allFinite(), "rotation center must be finite");
        center = *spec.center;
    } else {
        center = measure.mean().transpose();
    }
    const double a = spec.angle_degrees * std::numbers::pi / 180.0;
    const double c = std::cos(a);
    const double s = std::sin(a);
    PointMatrix points = measure.points();
    for (Index i = 0; i < points.rows(); ++i) {
        const double x = points(i, 0) - center[0];
        const double y = points(i, 1) - center[1];
        points(i, 0) = center[0] + c * x - s * y;
        points(i, 1) = center[1] + s * x + c * y;
    }
    return EmpiricalMeasure(std::move(points), measure.weights(), measure.labels());
}

}  // namespace rwm
