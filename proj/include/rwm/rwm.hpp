#pragma once

// Regularized Wasserstein means: block coordinate descent alternating a
// transport solve at fixed support with a regularized support update toward
// the cell barycenters.

#include <algorithm>
#include <map>
#include <optional>
#include <variant>
#include <vector>

#include "rwm/means.hpp"
#include "rwm/regularizers.hpp"
#include "rwm/types.hpp"
#include "rwm/vot.hpp"

namespace rwm {

inline constexpr double kDefaultMomentum = 0.9;

struct RwmOptions {
    RegularizerSpec regularizer = NoRegularizer{};
    double outer_tolerance = 1e-4;  ///< on the largest centroid displacement
    int max_outer_iterations = 100;
    VotOptions vot_options;
    /// When set, target weights follow nu <- m nu + (1 - m) voronoi_mass after
    /// every outer iteration (floored and renormalized).
    std::optional<double> momentum_weight_update;
    CurveSolveOptions curve_options;

    void validate() const {
        detail::require(outer_tolerance > 0.0, "outer tolerance must be > 0");
        detail::require(max_outer_iterations >= 1, "max outer iterations must be >= 1");
        vot_options.validate();
        rwm::validate(regularizer);
        if (momentum_weight_update) {
            detail::require(*momentum_weight_update >= 0.0 && *momentum_weight_update < 1.0,
                            "momentum must lie in [0, 1)");
        }
    }
};

struct RwmIterationRecord {
    double transport_cost = 0.0;    ///< transport cost at the iteration's starting support
    double regularizer_loss = 0.0;  ///< weighted penalty at the same support
    double total_loss = 0.0;        ///< transport_cost + regularizer_loss
    double max_displacement = 0.0;
    double vot_residual = 0.0;
    bool vot_converged = true;
    /// Support-update objective sum ||y - t||^2 + penalty(y) at the solver's
    /// starting point (the barycenters, pinned nodes held) and at its output.
    double inner_objective_start = 0.0;
    double inner_objective_end = 0.0;
    bool had_empty_cells = false;
    double weight_sum = 1.0;  ///< target weights after this iteration
    double min_weight = 0.0;
};

struct RwmTrace {
    std::vector<RwmIterationRecord> records;

    std::size_t size() const { return records.size(); }
};

struct RwmResult {
    CentroidSet centroids;
    Assignment assignment;  ///< transport at the returned support and weights
    RwmTrace trace;
    int iterations = 0;
    bool converged = false;
    bool vot_converged = true;
    std::optional<AffineMap> last_affine;
};

namespace detail {

inline void check_regularizer(const RegularizerSpec& spec, const CentroidSet& centroids) {
    if (std::holds_alternative<LabelPotential>(spec)) {
        require(centroids.labels.has_value(), "label regularizer needs labelled centroids");
    }
    if (const auto* curve = std::get_if<CurveRegularizer>(&spec)) {
        require(curve->topology.node_count() == centroids.size(), "topology node count differs from centroids");
    }
}

struct SupportUpdate {
    PointMatrix positions;
    double regularizer_loss = 0.0;
    double inner_start = 0.0;
    double inner_end = 0.0;
    std::optional<AffineMap> affine;
};

inline SupportUpdate regularized_update(const RegularizerSpec& spec, const CentroidSet& state,
                                        const PointMatrix& barycenters, const PointMatrix& pinned,
                                        const CurveSolveOptions& curve_options) {
    SupportUpdate out;
    std::visit(
        [&](const auto& reg) {
            using T = std::decay_t<decltype(reg)>;
            if constexpr (std::is_same_v<T, NoRegularizer>) {
                out.positions = barycenters;
            } else if constexpr (std::is_same_v<T, LabelPotential>) {
                const Labels& labels = *state.labels;
                out.regularizer_loss = label_potential_loss(state.positions, labels, reg.lambda);
                out.inner_start = label_potential_loss(barycenters, labels, reg.lambda);
                out.positions = solve_label_update(barycenters, labels, reg.lambda);
                out.inner_end = fidelity(out.positions, barycenters) +
                                label_potential_loss(out.positions, labels, reg.lambda);
            } else if constexpr (std::is_same_v<T, AffineConsistency>) {
                AffineMap map = fit_affine(state.positions, barycenters);
                const PointMatrix predictions = map.apply(state.positions);
                out.regularizer_loss = affine_loss(state.positions, predictions, reg.lambda);
                out.inner_start = affine_loss(barycenters, predictions, reg.lambda);
                out.positions = solve_affine_update(barycenters, predictions, reg.lambda);
                out.inner_end = fidelity(out.positions, barycenters) +
                                affine_loss(out.positions, predictions, reg.lambda);
                out.affine = std::move(map);
            } else {
                out.regularizer_loss = curve_loss(state.positions, reg.topology, reg.lambda1, reg.lambda2);
                const PointMatrix start = curve_start(barycenters, pinned, reg.topology);
                out.inner_start = fidelity(start, barycenters) +
                                  curve_loss(start, reg.topology, reg.lambda1, reg.lambda2);
                CurveSolveResult solved =
                    solve_curve_update(barycenters, pinned, reg.topology, reg.lambda1, reg.lambda2, curve_options);
                out.positions = std::move(solved.positions);
                out.inner_end = solved.objective;
            }
        },
        spec);
    return out;
}

}  // namespace detail

/// Alternates (1) a transport solve at fixed support, (2) cell barycenters,
/// (3) the regularized support update, until no centroid moves more than
/// outer_tolerance. Target weights stay fixed unless momentum_weight_update
/// is set. Pinned curve nodes keep their initial positions. A final transport
/// solve at the returned support produces the returned assignment.
inline RwmResult regularized_wasserstein_means(const EmpiricalMeasure& measure, const CentroidSet& initial,
                                               const RwmOptions& opts = {}) {
    opts.validate();
    initial.validate();
    detail::require(measure.dim() == initial.dim(), "measure and centroids differ in dimension");
    detail::check_regularizer(opts.regularizer, initial);

    RwmResult out;
    CentroidSet state = initial;
    const PointMatrix pinned = initial.positions;
    for (int t = 0; t < opts.max_outer_iterations; ++t) {
        VotResult vot = solve_vot(measure, state, opts.vot_options);
        state.potentials = vot.potentials;
        out.vot_converged = out.vot_converged && vot.converged;

        CentroidUpdate barycenters = update_centroids(measure, vot.assignment, state.positions);
        detail::SupportUpdate update =
            detail::regularized_update(opts.regularizer, state, barycenters.positions, pinned, opts.curve_options);

        RwmIterationRecord record;
        record.transport_cost = vot.assignment.transport_cost;
        record.regularizer_loss = update.regularizer_loss;
        record.total_loss = record.transport_cost + record.regularizer_loss;
        record.max_displacement = max_displacement(update.positions, state.positions);
        record.vot_residual = vot.mass_residual;
        record.vot_converged = vot.converged;
        record.inner_objective_start = update.inner_start;
        record.inner_objective_end = update.inner_end;
        record.had_empty_cells = barycenters.any_empty();

        state.positions = std::move(update.positions);
        if (update.affine) out.last_affine = std::move(update.affine);
        if (opts.momentum_weight_update) {
            const double m = *opts.momentum_weight_update;
            const Vector voronoi = update_weights_lloyd(measure, state.positions);
            state.target_weights = floored_weights(m * state.target_weights + (1.0 - m) * voronoi);
        }
        record.weight_sum = state.target_weights.sum();
        record.min_weight = state.target_weights.minCoeff();
        out.trace.records.push_back(record);
        out.iterations = t + 1;
        if (record.max_displacement <= opts.outer_tolerance) {
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

/// Initial skeleton node positions. Pinned nodes take their given positions;
/// runs of free nodes between two placed nodes of a branch are spread evenly
/// on the segment between them. A run hanging off a single placed node is
/// spread toward `fallback` (typically the cloud mean); closed runs always
/// take precedence. Throws if some node is unreachable from every pinned node.
inline PointMatrix initial_skeleton_positions(const CurveTopology& topology,
                                              const std::map<Index, Eigen::VectorXd>& fixed_positions,
                                              const Eigen::VectorXd& fallback) {
    const Index k = topology.node_count();
    const Index d = fallback.size();
    PointMatrix positions = PointMatrix::Zero(k, d);
    std::vector<bool> placed(static_cast<std::size_t>(k), false);
    for (Index f : topology.fixed_nodes()) {
        const auto it = fixed_positions.find(f);
        detail::require(it != fixed_positions.end(), "fixed node without a position");
        detail::require(it->second.size() == d, "fixed position has the wrong dimension");
        positions.row(f) = it->second.transpose();
        placed[static_cast<std::size_t>(f)] = true;
    }
    auto is_placed = [&](Index node) { return static_cast<bool>(placed[static_cast<std::size_t>(node)]); };

    // Places runs of unplaced nodes; open runs only when `open` is set, and then
    // only the first one found. Returns whether anything was placed.
    auto sweep = [&](bool open) {
        bool progress = false;
        for (const auto& branch : topology.branches()) {
            std::size_t p = 0;
            while (p < branch.size()) {
                if (is_placed(branch[p])) {
                    ++p;
                    continue;
                }
                std::size_t q = p;
                while (q + 1 < branch.size() && !is_placed(branch[q + 1])) ++q;
                const std::size_t run = q - p + 1;
                const bool left = p > 0;
                const bool right = q + 1 < branch.size();
                Eigen::RowVectorXd from, to;
                bool forward = true;
                if (left && right) {
                    from = positions.row(branch[p - 1]);
                    to = positions.row(branch[q + 1]);
                } else if (open && (left || right)) {
                    from = positions.row(left ? branch[p - 1] : branch[q + 1]);
                    to = fallback.transpose();
                    forward = left;
                } else {
                    p = q + 1;
                    continue;
                }
                for (std::size_t r = 0; r < run; ++r) {
                    const double s = static_cast<double>(r + 1) / static_cast<double>(run + 1);
                    const Index node = forward ? branch[p + r] : branch[q - r];
                    positions.row(node) = (1.0 - s) * from + s * to;
                    placed[static_cast<std::size_t>(node)] = true;
                }
                progress = true;
                if (open) return true;
                p = q + 1;
            }
        }
        return progress;
    };

    while (std::find(placed.begin(), placed.end(), false) != placed.end()) {
        if (sweep(false)) continue;
        detail::require(sweep(true), "skeleton node not connected to any fixed node");
    }
    return positions;
}

/// Skeleton layout: regularized means with the curve penalty and momentum
/// weight updates. Free nodes start evenly spread along their branches unless
/// `initial_positions` is given. Pinned nodes never move.
inline RwmResult skeleton_layout(const EmpiricalMeasure& cloud, const CurveTopology& topology,
                                 const std::map<Index, Eigen::VectorXd>& fixed_positions, RwmOptions opts,
                                 const std::optional<PointMatrix>& initial_positions = std::nullopt) {
    const auto* curve = std::get_if<CurveRegularizer>(&opts.regularizer);
    detail::require(curve != nullptr, "skeleton layout needs the curve regularizer");
    detail::require(curve->topology.node_count() == topology.node_count() &&
                        curve->topology.branches() == topology.branches() &&
                        curve->topology.fixed_nodes() == topology.fixed_nodes(),
                    "regularizer topology differs from the layout topology");
    if (!opts.momentum_weight_update) opts.momentum_weight_update = kDefaultMomentum;

    PointMatrix positions;
    if (initial_positions) {
        detail::require(initial_positions->rows() == topology.node_count() && initial_positions->cols() == cloud.dim(),
                        "initial positions have the wrong shape");
        positions = *initial_positions;
        for (Index f : topology.fixed_nodes()) {
            const auto it = fixed_positions.find(f);
            detail::require(it != fixed_positions.end(), "fixed node without a position");
            positions.row(f) = it->second.transpose();
        }
    } else {
        positions = initial_skeleton_positions(topology, fixed_positions, cloud.mean().transpose());
    }
    CentroidSet initial(std::move(positions));
    return regularized_wasserstein_means(cloud, initial, opts);
}

}  // namespace rwm
