#pragma once

// Semi-discrete optimal transport by ascent on the concave dual of the
// power-diagram assignment. Samples are sent whole to the centroid that
// minimizes the power distance ||x - y_j||^2 - h_j.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "rwm/types.hpp"

namespace rwm {

struct VotOptions {
    /// Per-cell tolerance on |cell_mass - target|. Unset means the largest
    /// sample weight, the finest granularity a discrete measure can reach.
    std::optional<double> mass_tolerance;
    int max_iterations = 5000;
    double initial_step = 0.1;
    double step_decay = 0.5;
    /// Leave the ascent phase once the best residual has not improved for
    /// this many trials.
    int stall_iterations = 20;
    /// Exact count repair for uniform sample weights once ascent stops short.
    bool polish = true;

    void validate() const {
        detail::require(!mass_tolerance || *mass_tolerance > 0.0, "mass tolerance must be > 0");
        detail::require(max_iterations >= 1, "max iterations must be >= 1");
        detail::require(initial_step > 0.0 && std::isfinite(initial_step), "initial step must be > 0");
        detail::require(step_decay > 0.0 && step_decay <= 1.0, "step decay must lie in (0, 1]");
        detail::require(stall_iterations >= 1, "stall iterations must be >= 1");
    }
};

struct VotResult {
    Assignment assignment;
    Vector potentials;
    double mass_residual = 0.0;
    int iterations_used = 0;
    bool converged = false;
    /// True when the returned iterate came from the exact count repair.
    bool polished = false;
    /// Dual values of the accepted ascent iterates, starting with the initial one.
    std::vector<double> dual_values;
};

namespace detail {

inline void check_compatible(const EmpiricalMeasure& measure, const CentroidSet& centroids) {
    require(measure.dim() == centroids.dim(), "measure and centroids differ in dimension");
    require(centroids.potentials.size() == centroids.size(), "potentials/centroids length mismatch");
    require(centroids.potentials.allFinite(), "potentials must be finite");
}

inline void check_distinct(const PointMatrix& positions) {
    std::vector<Index> order(static_cast<std::size_t>(positions.rows()));
    std::iota(order.begin(), order.end(), Index{0});
    auto row_less = [&](Index a, Index b) {
        for (Index c = 0; c < positions.cols(); ++c) {
            if (positions(a, c) != positions(b, c)) return positions(a, c) < positions(b, c);
        }
        return false;
    };
    std::sort(order.begin(), order.end(), row_less);
    for (std::size_t i = 1; i < order.size(); ++i) {
        require(row_less(order[i - 1], order[i]), "duplicate centroid positions");
    }
}

inline Vector centered(Vector h) {
    if (h.size() > 0) h.array() -= h.mean();
    return h;
}

/// Squared distances between every sample and every centroid, row-major n x k.
class CostTable {
public:
    CostTable(const PointMatrix& samples, const PointMatrix& centroids)
        : n_(samples.rows()), k_(centroids.rows()), costs_(static_cast<std::size_t>(n_ * k_)) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (n_ * k_ > 65536)
#endif
        for (Index i = 0; i < n_; ++i) {
            double* row = costs_.data() + i * k_;
            for (Index j = 0; j < k_; ++j) row[j] = squared_distance(samples, i, centroids, j);
        }
    }

    Index samples() const { return n_; }
    Index centroids() const { return k_; }
    const double* row(Index i) const { return costs_.data() + i * k_; }
    double operator()(Index i, Index j) const { return costs_[static_cast<std::size_t>(i * k_ + j)]; }

private:
    Index n_;
    Index k_;
    std::vector<double> costs_;
};

struct DualEvaluation {
    Assignment assignment;
    double dual = 0.0;
};

/// Dual value and cell masses for a fixed assignment under potentials h.
inline DualEvaluation summarize(const CostTable& table, const Vector& weights, const Vector& targets,
                                const Vector& h, std::vector<Index> centroid_of) {
    const Index n = table.samples();
    const Index k = table.centroids();
    DualEvaluation out;
    out.assignment.cell_mass = Vector::Zero(k);
    double cost = 0.0;
    double dual = 0.0;
    for (Index i = 0; i < n; ++i) {
        const Index j = centroid_of[static_cast<std::size_t>(i)];
        const double w = weights[i];
        const double c = table(i, j);
        out.assignment.cell_mass[j] += w;
        cost += w * c;
        dual += w * (c - h[j]);
    }
    for (Index j = 0; j < k; ++j) dual += targets[j] * h[j];
    out.assignment.centroid_of = std::move(centroid_of);
    out.assignment.transport_cost = cost;
    out.dual = dual;
    return out;
}

/// Power-cell assignment for potentials h, plus the dual value
///   E(h) = sum_i w_i min_j (c_ij - h_j) + sum_j nu_j h_j.
/// Ties go to the lowest centroid index. Masses are summed in sample order.
inline DualEvaluation evaluate(const CostTable& table, const Vector& weights, const Vector& targets,
                               const Vector& h) {
    const Index n = table.samples();
    const Index k = table.centroids();
    std::vector<Index> centroid_of(static_cast<std::size_t>(n));
    const double* hp = h.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (n * k > 65536)
#endif
    for (Index i = 0; i < n; ++i) {
        const double* c = table.row(i);
        Index best = 0;
        double best_value = c[0] - hp[0];
        for (Index j = 1; j < k; ++j) {
            const double v = c[j] - hp[j];
            if (v < best_value) {
                best_value = v;
                best = j;
            }
        }
        centroid_of[static_cast<std::size_t>(i)] = best;
    }
    return summarize(table, weights, targets, h, std::move(centroid_of));
}

inline double mass_residual(const Vector& cell_mass, const Vector& targets) {
    return (cell_mass - targets).cwiseAbs().maxCoeff();
}

inline bool uniform_weights(const Vector& weights) {
    return weights.maxCoeff() - weights.minCoeff() <= 1e-12 * weights.maxCoeff();
}

/// Largest-remainder rounding of targets * n to integer counts summing to n.
inline std::vector<Index> integer_targets(const Vector& targets, Index n) {
    const Index k = targets.size();
    std::vector<Index> counts(static_cast<std::size_t>(k));
    std::vector<std::pair<double, Index>> remainders;
    Index assigned = 0;
    for (Index j = 0; j < k; ++j) {
        const double exact = targets[j] * static_cast<double>(n);
        // Snap values that are integers up to rounding.
        const double nearest = std::round(exact);
        const double floor_value = std::abs(exact - nearest) <= 1e-9 ? nearest : std::floor(exact);
        counts[static_cast<std::size_t>(j)] = static_cast<Index>(floor_value);
        assigned += counts[static_cast<std::size_t>(j)];
        remainders.emplace_back(exact - floor_value, j);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < n && r < remainders.size(); ++r, ++assigned) {
        ++counts[static_cast<std::size_t>(remainders[r].second)];
    }
    for (std::size_t r = remainders.size(); assigned > n && r-- > 0;) {
        auto& c = counts[static_cast<std::size_t>(remainders[r].second)];
        if (c > 0) {
            --c;
            --assigned;
        }
    }
    return counts;
}

/// Successive shortest paths over the cell graph. Moving sample i from cell u
/// to cell v costs its reduced power difference, which is nonnegative while
/// every sample sits in an argmin cell. Each augmentation moves one sample
/// along a shortest path from a surplus cell to a deficit cell and raises the
/// potentials by the capped path distances, which keeps the assignment
/// optimal for the updated potentials. Returns false if no path exists.
///
/// Arc weights are kept up to date by the potential shift; only the rows of
/// cells whose members changed are recomputed from the samples.
inline bool repair_counts(const CostTable& table, const std::vector<Index>& wanted,
                          std::vector<Index>& centroid_of, Vector& h) {
    const Index n = table.samples();
    const Index k = table.centroids();
    const auto K = static_cast<std::size_t>(k);
    constexpr double kInf = std::numeric_limits<double>::infinity();

    std::vector<std::vector<Index>> members(K);
    for (Index i = 0; i < n; ++i) members[static_cast<std::size_t>(centroid_of[static_cast<std::size_t>(i)])].push_back(i);

    std::vector<double> arc(K * K);
    std::vector<Index> arc_sample(K * K);
    auto rebuild_row = [&](std::size_t u) {
        double* row = arc.data() + u * K;
        Index* who = arc_sample.data() + u * K;
        std::fill(row, row + K, kInf);
        for (Index i : members[u]) {
            const double* c = table.row(i);
            const double own = c[u] - h[static_cast<Index>(u)];
            for (std::size_t v = 0; v < K; ++v) {
                if (v == u) continue;
                const double r = (c[v] - h[static_cast<Index>(v)]) - own;
                if (r < row[v]) {
                    row[v] = r;
                    who[v] = i;
                }
            }
        }
    };
    auto rebuild_all = [&] {
        for (std::size_t u = 0; u < K; ++u) rebuild_row(u);
    };
    rebuild_all();

    // Shifted weights drift by rounding; start over from the samples now and then.
    constexpr int kRebuildPeriod = 64;
    std::vector<double> dist(K);
    std::vector<double> shift(K);
    std::vector<Index> pred(K);
    std::vector<char> done(K);
    std::vector<char> touched(K);
    for (int augmentations = 1;; ++augmentations) {
        bool balanced = true;
        for (std::size_t j = 0; j < K; ++j) {
            balanced = balanced && static_cast<Index>(members[j].size()) == wanted[j];
        }
        if (balanced) return true;

        // Dense Dijkstra from every surplus cell.
        for (std::size_t j = 0; j < K; ++j) {
            dist[j] = static_cast<Index>(members[j].size()) > wanted[j] ? 0.0 : kInf;
            pred[j] = -1;
            done[j] = 0;
        }
        Index target = -1;
        while (true) {
            Index u = -1;
            for (std::size_t j = 0; j < K; ++j) {
                if (!done[j] && dist[j] < kInf && (u < 0 || dist[j] < dist[static_cast<std::size_t>(u)])) {
                    u = static_cast<Index>(j);
                }
            }
            if (u < 0) break;
            const auto uu = static_cast<std::size_t>(u);
            done[uu] = 1;
            if (static_cast<Index>(members[uu].size()) < wanted[uu]) {
                target = u;
                break;
            }
            const double* row = arc.data() + uu * K;
            for (std::size_t v = 0; v < K; ++v) {
                if (done[v] || row[v] == kInf) continue;
                const double candidate = dist[uu] + std::max(0.0, row[v]);
                if (candidate < dist[v]) {
                    dist[v] = candidate;
                    pred[v] = u;
                }
            }
        }
        if (target < 0) return false;

        const double reach = dist[static_cast<std::size_t>(target)];
        for (std::size_t j = 0; j < K; ++j) {
            shift[j] = std::min(done[j] ? dist[j] : reach, reach);
            h[static_cast<Index>(j)] += shift[j];
        }
        for (std::size_t u = 0; u < K; ++u) {
            double* row = arc.data() + u * K;
            for (std::size_t v = 0; v < K; ++v) row[v] += shift[u] - shift[v];
        }

        std::fill(touched.begin(), touched.end(), 0);
        for (Index v = target; pred[static_cast<std::size_t>(v)] >= 0;) {
            const Index u = pred[static_cast<std::size_t>(v)];
            const Index i = arc_sample[static_cast<std::size_t>(u * k + v)];
            auto& from = members[static_cast<std::size_t>(u)];
            from.erase(std::find(from.begin(), from.end(), i));
            members[static_cast<std::size_t>(v)].push_back(i);
            centroid_of[static_cast<std::size_t>(i)] = v;
            touched[static_cast<std::size_t>(u)] = 1;
            touched[static_cast<std::size_t>(v)] = 1;
            v = u;
        }
        if (augmentations % kRebuildPeriod == 0) {
            rebuild_all();
        } else {
            for (std::size_t j = 0; j < K; ++j) {
                if (touched[j]) rebuild_row(j);
            }
        }
    }
}

/// Potentials that make the given assignment a strict power-diagram argmin
/// whenever one exists. The assignment needs h_v - h_u <= w(u, v) with
/// w(u, v) = min over samples i in u of (c_iv - c_iu). The largest uniform
/// slack equals the minimum cycle mean (Karp); shortest-path distances under
/// weights w - slack / 2 then satisfy every constraint with margin slack / 2.
inline Vector interior_potentials(const CostTable& table, const std::vector<Index>& centroid_of) {
    const Index n = table.samples();
    const Index k = table.centroids();
    const auto K = static_cast<std::size_t>(k);
    constexpr double kInf = std::numeric_limits<double>::infinity();

    std::vector<double> w(K * K, kInf);
    for (Index i = 0; i < n; ++i) {
        const Index u = centroid_of[static_cast<std::size_t>(i)];
        const double* c = table.row(i);
        double* row = w.data() + u * k;
        for (Index v = 0; v < k; ++v) {
            if (v != u) row[v] = std::min(row[v], c[v] - c[u]);
        }
    }

    // Karp: D[m][v] is the lightest m-arc walk ending at v from a virtual source.
    std::vector<double> D((K + 1) * K, kInf);
    std::fill(D.begin(), D.begin() + static_cast<std::ptrdiff_t>(K), 0.0);
    for (std::size_t m = 1; m <= K; ++m) {
        const double* prev = D.data() + (m - 1) * K;
        double* cur = D.data() + m * K;
        for (std::size_t u = 0; u < K; ++u) {
            if (prev[u] == kInf) continue;
            const double* row = w.data() + u * K;
            for (std::size_t v = 0; v < K; ++v) {
                if (row[v] == kInf) continue;
                cur[v] = std::min(cur[v], prev[u] + row[v]);
            }
        }
    }
    double min_mean = kInf;
    for (std::size_t v = 0; v < K; ++v) {
        const double last = D[K * K + v];
        if (last == kInf) continue;
        double worst = -kInf;
        for (std::size_t m = 0; m < K; ++m) {
            const double dm = D[m * K + v];
            if (dm == kInf) continue;
            worst = std::max(worst, (last - dm) / static_cast<double>(K - m));
        }
        min_mean = std::min(min_mean, worst);
    }

    double slack;
    if (min_mean == kInf) {
        // Acyclic constraint graph: any positive margin works.
        double scale = 0.0;
        for (double x : w) {
            if (x != kInf) scale = std::max(scale, std::abs(x));
        }
        slack = scale > 0.0 ? scale : 1.0;
    } else {
        slack = std::max(0.0, min_mean);
    }

    // Bellman-Ford from the virtual source; at most K - 1 relaxation rounds.
    Vector h = Vector::Zero(k);
    for (std::size_t round = 0; round < K; ++round) {
        bool changed = false;
        for (std::size_t u = 0; u < K; ++u) {
            const double* row = w.data() + u * K;
            for (std::size_t v = 0; v < K; ++v) {
                if (row[v] == kInf) continue;
                const double candidate = h[static_cast<Index>(u)] + row[v] - 0.5 * slack;
                if (candidate < h[static_cast<Index>(v)]) {
                    h[static_cast<Index>(v)] = candidate;
                    changed = true;
                }
            }
        }
        if (!changed) break;
    }
    return centered(std::move(h));
}

}  // namespace detail

/// Power-diagram assignment: sample i goes to argmin_j ||x_i - y_j||^2 - h_j,
/// ties broken toward the lowest centroid index.
inline Assignment assign(const EmpiricalMeasure& measure, const CentroidSet& centroids) {
    detail::check_compatible(measure, centroids);
    const detail::CostTable table(measure.points(), centroids.positions);
    return detail::evaluate(table, measure.weights(), centroids.target_weights, centroids.potentials)
        .assignment;
}

/// Concave dual energy at the centroid set's current potentials. Its
/// supergradient component j is nu_j - cell_mass[j].
inline double dual_energy(const EmpiricalMeasure& measure, const CentroidSet& centroids) {
    detail::check_compatible(measure, centroids);
    detail::require(centroids.target_weights.size() == centroids.size(), "targets/centroids length mismatch");
    const detail::CostTable table(measure.points(), centroids.positions);
    return detail::evaluate(table, measure.weights(), centroids.target_weights, centroids.potentials).dual;
}

/// Finds potentials whose power cells carry the target weights.
///
/// Ascent phase: h <- h + eta (nu - mass), re-centered to sum zero. A trial
/// that lowers the dual is rejected and eta shrinks by step_decay; an accepted
/// trial lets eta grow by 1 / step_decay. Every trial counts as one iteration.
/// Starts from the centroid set's potentials (warm start).
///
/// Ascent on this piecewise-linear dual can jam a sample or two short of the
/// targets. When the samples carry uniform weights, a stalled ascent is
/// finished by an exact count repair (see detail::repair_counts) followed by
/// moving h into the interior of the optimal region. The iterate with the
/// smallest residual is returned.
inline VotResult solve_vot(const EmpiricalMeasure& measure, const CentroidSet& centroids,
                           const VotOptions& opts = {}) {
    opts.validate();
    detail::check_compatible(measure, centroids);
    const Vector& targets = centroids.target_weights;
    detail::require(targets.size() == centroids.size(), "targets/centroids length mismatch");
    detail::require((targets.array() >= 0.0).all() && std::abs(targets.sum() - 1.0) <= kSumTolerance,
                    "target weights must be nonnegative and sum to 1");
    detail::check_distinct(centroids.positions);

    const double tolerance = opts.mass_tolerance.value_or(measure.max_weight());
    const detail::CostTable table(measure.points(), centroids.positions);
    const Vector& weights = measure.weights();

    Vector h = detail::centered(centroids.potentials);
    detail::DualEvaluation current = detail::evaluate(table, weights, targets, h);
    double residual = detail::mass_residual(current.assignment.cell_mass, targets);

    VotResult result;
    result.dual_values.push_back(current.dual);
    result.assignment = current.assignment;
    result.potentials = h;
    result.mass_residual = residual;

    // A step too small to change any potential cannot make progress.
    constexpr double kMinRelativeStep = 1e-17;
    double eta = opts.initial_step;
    int iterations = 0;
    int since_improvement = 0;
    while (residual > tolerance && iterations < opts.max_iterations &&
           since_improvement < opts.stall_iterations) {
        const Vector gradient = targets - current.assignment.cell_mass;
        const double gmax = gradient.cwiseAbs().maxCoeff();
        const double hscale = 1.0 + h.cwiseAbs().maxCoeff();
        if (eta * gmax <= kMinRelativeStep * hscale) break;

        ++iterations;
        ++since_improvement;
        Vector trial_h = detail::centered(h + eta * gradient);
        detail::DualEvaluation trial = detail::evaluate(table, weights, targets, trial_h);
        if (trial.dual >= current.dual) {
            h = std::move(trial_h);
            current = std::move(trial);
            residual = detail::mass_residual(current.assignment.cell_mass, targets);
            result.dual_values.push_back(current.dual);
            if (residual < result.mass_residual) {
                result.assignment = current.assignment;
                result.potentials = h;
                result.mass_residual = residual;
                since_improvement = 0;
            }
            eta /= opts.step_decay;
        } else {
            eta *= opts.step_decay;
        }
    }

    if (result.mass_residual > tolerance && opts.polish && detail::uniform_weights(weights)) {
        const auto wanted = detail::integer_targets(targets, measure.size());
        std::vector<Index> centroid_of = result.assignment.centroid_of;
        Vector repaired_h = result.potentials;
        if (detail::repair_counts(table, wanted, centroid_of, repaired_h)) {
            const Vector interior = detail::interior_potentials(table, centroid_of);
            detail::DualEvaluation strict = detail::evaluate(table, weights, targets, interior);
            // Fall back to the repaired (tied) potentials if the interior is empty.
            if (strict.assignment.centroid_of != centroid_of) {
                strict = detail::summarize(table, weights, targets, detail::centered(repaired_h),
                                           std::move(centroid_of));
                repaired_h = detail::centered(repaired_h);
            } else {
                repaired_h = interior;
            }
            const double repaired_residual = detail::mass_residual(strict.assignment.cell_mass, targets);
            if (repaired_residual < result.mass_residual) {
                result.assignment = std::move(strict.assignment);
                result.potentials = repaired_h;
                result.mass_residual = repaired_residual;
                result.polished = true;
            }
        }
    }

    result.iterations_used = iterations;
    result.converged = result.mass_residual <= tolerance;
    return result;
}

}  // namespace rwm
