#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "rwm/types.hpp"
#include "rwm/vot.hpp"

namespace rwm {

struct MeansOptions {
    double outer_tolerance = 1e-4;  ///< on the largest centroid displacement
    int max_outer_iterations = 100;
    VotOptions vot_options;
    bool update_weights = false;  ///< Lloyd-style weight update before each transport solve

    void validate() const {
        detail::require(outer_tolerance > 0.0, "outer tolerance must be > 0");
        detail::require(max_outer_iterations >= 1, "max outer iterations must be >= 1");
        vot_options.validate();
    }
};

struct CentroidUpdate {
    PointMatrix positions;
    std::vector<bool> empty;  ///< cells that received no mass kept their previous position

    bool any_empty() const { return std::find(empty.begin(), empty.end(), true) != empty.end(); }
};

/// Mass-weighted average of the samples in each cell.
inline CentroidUpdate update_centroids(const EmpiricalMeasure& measure, const Assignment& assignment,
                                       const PointMatrix& previous) {
    const Index k = previous.rows();
    const Index d = measure.dim();
    detail::require(previous.cols() == d, "previous positions differ in dimension");
    detail::require(static_cast<Index>(assignment.centroid_of.size()) == measure.size(),
                    "assignment/measure length mismatch");

    PointMatrix sums = PointMatrix::Zero(k, d);
    Vector mass = Vector::Zero(k);
    for (Index i = 0; i < measure.size(); ++i) {
        const Index j = assignment.centroid_of[static_cast<std::size_t>(i)];
        detail::require(j >= 0 && j < k, "assignment refers to an unknown centroid");
        const double w = measure.weights()[i];
        sums.row(j) += w * measure.points().row(i);
        mass[j] += w;
    }

    CentroidUpdate out{previous, std::vector<bool>(static_cast<std::size_t>(k), false)};
    for (Index j = 0; j < k; ++j) {
        if (mass[j] > 0.0) {
            out.positions.row(j) = sums.row(j) / mass[j];
        } else {
            out.empty[static_cast<std::size_t>(j)] = true;
        }
    }
    return out;
}

/// Voronoi masses: the mass of samples whose nearest centroid (potentials
/// ignored, lowest index on ties) is j.
inline Vector update_weights_lloyd(const EmpiricalMeasure& measure, const PointMatrix& positions) {
    detail::require(measure.dim() == positions.cols(), "measure and centroids differ in dimension");
    const detail::CostTable table(measure.points(), positions);
    const Vector zero = Vector::Zero(positions.rows());
    return detail::evaluate(table, measure.weights(), zero, zero).assignment.cell_mass;
}

inline Vector update_weights_lloyd(const EmpiricalMeasure& measure, const CentroidSet& centroids) {
    return update_weights_lloyd(measure, centroids.positions);
}

inline constexpr double kWeightFloor = 1e-6;

/// Floors each weight at kWeightFloor and renormalizes to sum one.
inline Vector floored_weights(Vector weights) {
    weights = weights.cwiseMax(kWeightFloor);
    return weights / weights.sum();
}

inline double max_displacement(const PointMatrix& a, const PointMatrix& b) {
    return (a - b).rowwise().norm().maxCoeff();
}

struct MeansResult {
    CentroidSet centroids;
    Assignment assignment;  ///< transport at the returned positions and weights
    std::vector<double> cost_trace;
    int iterations = 0;
    bool converged = false;
    bool vot_converged = true;  ///< false if any transport solve stopped short
    bool had_empty_cells = false;
};

/// Wasserstein means: per iteration (1) optionally reset the weights to the
/// Voronoi masses, (2) solve the transport with fixed support and weights,
/// (3) move each centroid to the barycenter of its cell. Stops when no
/// centroid moves more than outer_tolerance. A final transport solve at the
/// returned positions produces the returned assignment.
inline MeansResult wasserstein_means(const EmpiricalMeasure& measure, const CentroidSet& initial,
                                     const MeansOptions& opts = {}) {
    opts.validate();
    initial.validate();
    detail::require(measure.dim() == initial.dim(), "measure and centroids differ in dimension");

    MeansResult out;
    CentroidSet state = initial;
    for (int t = 0; t < opts.max_outer_iterations; ++t) {
        if (opts.update_weights) {
            state.target_weights = floored_weights(update_weights_lloyd(measure, state.positions));
        }
        VotResult vot = solve_vot(measure, state, opts.vot_options);
        out.vot_converged = out.vot_converged && vot.converged;
        state.potentials = vot.potentials;
        out.cost_trace.push_back(vot.assignment.transport_cost);

        CentroidUpdate moved = update_centroids(measure, vot.assignment, state.positions);
        out.had_empty_cells = out.had_empty_cells || moved.any_empty();
        const double shift = max_displacement(moved.positions, state.positions);
        state.positions = std::move(moved.positions);
        out.iterations = t + 1;
        if (shift <= opts.outer_tolerance) {
            out.converged = true;
            break;
        }
    }

    VotResult final_vot = solve_vot(measure, state, opts.vot_options);
    out.vot_converged = out.vot_converged && final_vot.converged;
    state.potentials = final_vot.potentials;
    out.assignment = std::move(final_vot.assignment);
    out.centroids = std::move(state);
    return out;
}

/// Label of each sample's transport centroid.
inline Labels classify_targets(const CentroidSet& centroids, const Assignment& assignment) {
    detail::require(centroids.labels.has_value(), "centroids carry no labels");
    Labels predicted;
    predicted.reserve(assignment.centroid_of.size());
    for (Index j : assignment.centroid_of) {
        detail::require(j >= 0 && j < centroids.size(), "assignment refers to an unknown centroid");
        predicted.push_back((*centroids.labels)[static_cast<std::size_t>(j)]);
    }
    return predicted;
}

inline double accuracy(const Labels& predicted, const Labels& truth) {
    detail::require(predicted.size() == truth.size(), "label arrays differ in length");
    detail::require(!truth.empty(), "accuracy of empty label arrays");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

}  // namespace rwm
