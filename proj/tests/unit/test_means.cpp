#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "rwm/means.hpp"
#include "rwm/measures.hpp"
#include "rwm/rng.hpp"

using namespace rwm;

namespace {

PointMatrix column(std::initializer_list<double> values) {
    PointMatrix p(static_cast<Index>(values.size()), 1);
    Index i = 0;
    for (double v : values) p(i++, 0) = v;
    return p;
}

Assignment with_cells(std::vector<Index> centroid_of) {
    Assignment a;
    a.centroid_of = std::move(centroid_of);
    return a;
}

/// Two blobs of different sizes; returns the points and each point's blob.
EmpiricalMeasure blobs(Index n_a, Index n_b, std::uint64_t seed) {
    Rng rng(seed);
    PointMatrix p(n_a + n_b, 2);
    Labels labels;
    for (Index i = 0; i < n_a + n_b; ++i) {
        const bool a = i < n_a;
        p(i, 0) = (a ? 0.0 : 5.0) + rng.normal(0.0, 0.2);
        p(i, 1) = (a ? 0.0 : 5.0) + rng.normal(0.0, 0.2);
        labels.push_back(a ? 0 : 1);
    }
    return EmpiricalMeasure(p, labels);
}

}  // namespace

TEST(UpdateCentroids, CellAverage) {
    const EmpiricalMeasure m(column({0.0, 1.0, 2.0, 3.0}));
    const CentroidUpdate u = update_centroids(m, with_cells({0, 0, 1, 1}), column({0.0, 0.0}));
    EXPECT_DOUBLE_EQ(u.positions(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(u.positions(1, 0), 2.5);
    EXPECT_FALSE(u.any_empty());
}

TEST(UpdateCentroids, WeightedAverage) {
    Vector w(2);
    w << 0.75, 0.25;
    const EmpiricalMeasure m(column({0.0, 2.0}), w);
    const CentroidUpdate u = update_centroids(m, with_cells({0, 0}), column({7.0}));
    EXPECT_DOUBLE_EQ(u.positions(0, 0), 0.5);
}

TEST(UpdateCentroids, EmptyCellKeptAndFlagged) {
    const EmpiricalMeasure m(column({0.0, 1.0}));
    const CentroidUpdate u = update_centroids(m, with_cells({0, 0}), column({3.0, 9.0}));
    EXPECT_DOUBLE_EQ(u.positions(0, 0), 0.5);
    EXPECT_EQ(u.positions(1, 0), 9.0);
    EXPECT_EQ(u.empty, (std::vector<bool>{false, true}));
}

TEST(UpdateCentroids, RejectsBadAssignment) {
    const EmpiricalMeasure m(column({0.0, 1.0}));
    EXPECT_THROW(update_centroids(m, with_cells({0}), column({0.0})), std::invalid_argument);
    EXPECT_THROW(update_centroids(m, with_cells({0, 2}), column({0.0, 1.0})), std::invalid_argument);
}

TEST(UpdateWeightsLloyd, VoronoiMasses) {
    const EmpiricalMeasure m(column({0.1, 0.2, 0.8, 0.9}));
    const Vector w = update_weights_lloyd(m, column({0.0, 1.0}));
    EXPECT_DOUBLE_EQ(w[0], 0.5);
    EXPECT_DOUBLE_EQ(w[1], 0.5);
    const Vector skewed = update_weights_lloyd(m, column({0.0, 0.85}));
    EXPECT_DOUBLE_EQ(skewed[0], 0.5);
    const Vector lopsided = update_weights_lloyd(m, column({-1.0, 0.15}));
    EXPECT_DOUBLE_EQ(lopsided[0], 0.0);
    EXPECT_DOUBLE_EQ(lopsided[1], 1.0);
}

TEST(FlooredWeights, FloorAndRenormalize) {
    Vector w(3);
    w << 0.0, 0.5, 0.5;
    const Vector f = floored_weights(w);
    EXPECT_GT(f.minCoeff(), 0.0);
    EXPECT_NEAR(f.sum(), 1.0, 1e-15);
    EXPECT_NEAR(f[0], kWeightFloor / (1.0 + kWeightFloor), 1e-18);
}

TEST(WassersteinMeans, FixedPointStaysPut) {
    // Cells {0,1} and {10,11} carry the targets and already have their barycenters.
    const EmpiricalMeasure m(column({0.0, 1.0, 10.0, 11.0}));
    const CentroidSet c(column({0.5, 10.5}));
    const MeansResult r = wasserstein_means(m, c);
    EXPECT_TRUE(r.converged);
    EXPECT_EQ(r.iterations, 1);
    EXPECT_EQ(r.centroids.positions, c.positions);
    EXPECT_DOUBLE_EQ(r.assignment.transport_cost, 0.25);
}

TEST(WassersteinMeans, SingleCentroidGoesToMean) {
    const EmpiricalMeasure m = make_gaussian_mixture(300, 2);
    PointMatrix start(1, 2);
    start << 4.0, -3.0;
    const MeansResult r = wasserstein_means(m, CentroidSet(start));
    EXPECT_TRUE(r.converged);
    EXPECT_LT((r.centroids.positions.row(0) - m.mean()).norm(), 1e-12);
}

TEST(WassersteinMeans, WeightUpdateRecoversClusterMeans) {
    const EmpiricalMeasure m = blobs(300, 100, 5);
    Eigen::RowVector2d mean_a = Eigen::RowVector2d::Zero(), mean_b = Eigen::RowVector2d::Zero();
    for (Index i = 0; i < 300; ++i) mean_a += m.points().row(i) / 300.0;
    for (Index i = 300; i < 400; ++i) mean_b += m.points().row(i) / 100.0;

    PointMatrix start(2, 2);
    start << 1.0, 1.0, 4.0, 4.0;
    MeansOptions opts;
    opts.update_weights = true;
    const MeansResult r = wasserstein_means(m, CentroidSet(start), opts);
    ASSERT_TRUE(r.converged);
    EXPECT_LT((r.centroids.positions.row(0) - mean_a).norm(), 1e-3);
    EXPECT_LT((r.centroids.positions.row(1) - mean_b).norm(), 1e-3);
    EXPECT_NEAR(r.centroids.target_weights[0], 0.75, 1e-3);
}

TEST(WassersteinMeans, UniformWeightsSplitLargerCluster) {
    // Without the weight update each centroid must carry half the mass.
    const EmpiricalMeasure m = blobs(300, 100, 5);
    PointMatrix start(2, 2);
    start << 1.0, 1.0, 4.0, 4.0;
    const MeansResult r = wasserstein_means(m, CentroidSet(start));
    EXPECT_NEAR(r.assignment.cell_mass[0], 0.5, 1e-12);
    EXPECT_NEAR(r.assignment.cell_mass[1], 0.5, 1e-12);
}

TEST(WassersteinMeans, SupportUpdateNeverRaisesCost) {
    const EmpiricalMeasure m = make_two_moons(400, 0.1, 3);
    Rng rng(9);
    PointMatrix y(12, 2);
    for (Index j = 0; j < 12; ++j) y.row(j) << rng.uniform(-1, 2), rng.uniform(-0.5, 1);
    CentroidSet state(y);
    for (int t = 0; t < 10; ++t) {
        const VotResult vot = solve_vot(m, state);
        ASSERT_TRUE(vot.converged);
        const CentroidUpdate moved = update_centroids(m, vot.assignment, state.positions);
        const double before = transport_cost(m, state.positions, vot.assignment.centroid_of);
        const double after = transport_cost(m, moved.positions, vot.assignment.centroid_of);
        EXPECT_LE(after, before + 1e-12);
        state.positions = moved.positions;
        state.potentials = vot.potentials;
    }
}

TEST(WassersteinMeans, CostTraceDecreasesOverall) {
    const EmpiricalMeasure m = make_two_moons(400, 0.1, 3);
    Rng rng(2);
    PointMatrix y(10, 2);
    for (Index j = 0; j < 10; ++j) y.row(j) << rng.uniform(-1, 2), rng.uniform(-0.5, 1);
    const MeansResult r = wasserstein_means(m, CentroidSet(y));
    ASSERT_GE(r.cost_trace.size(), 2u);
    EXPECT_LE(r.cost_trace.back(), r.cost_trace.front());
    // Both steps minimize the same cost, so each solve is at most the previous one.
    for (std::size_t t = 1; t < r.cost_trace.size(); ++t) EXPECT_LE(r.cost_trace[t], r.cost_trace[t - 1] + 1e-12);
}

TEST(WassersteinMeans, VotFailureIsReported) {
    const EmpiricalMeasure m = make_two_moons(300, 0.1, 3);
    PointMatrix y(6, 2);
    for (Index j = 0; j < 6; ++j) y.row(j) << 10.0 + j, 10.0;
    MeansOptions opts;
    opts.max_outer_iterations = 1;
    opts.vot_options.max_iterations = 1;
    opts.vot_options.polish = false;
    EXPECT_FALSE(wasserstein_means(m, CentroidSet(y), opts).vot_converged);
}

TEST(WassersteinMeans, RejectsBadOptions) {
    const EmpiricalMeasure m(column({0.0, 1.0}));
    MeansOptions opts;
    opts.max_outer_iterations = 0;
    EXPECT_THROW(wasserstein_means(m, CentroidSet(column({0.0})), opts), std::invalid_argument);
    EXPECT_THROW(wasserstein_means(m, CentroidSet(PointMatrix::Zero(1, 2))), std::invalid_argument);
}

TEST(Classify, LabelOfTransportCentroid) {
    const CentroidSet c(column({0.0, 1.0}), Labels{0, 1});
    EXPECT_EQ(classify_targets(c, with_cells({0, 1, 1})), (Labels{0, 1, 1}));
    EXPECT_THROW(classify_targets(CentroidSet(column({0.0})), with_cells({0})), std::invalid_argument);
}

TEST(Accuracy, Fractions) {
    EXPECT_DOUBLE_EQ(accuracy({0, 1, 1}, {0, 1, 0}), 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(accuracy({0, 0}, {0, 0}), 1.0);
    EXPECT_THROW(accuracy({0}, {0, 1}), std::invalid_argument);
    EXPECT_THROW(accuracy({}, {}), std::invalid_argument);
}

TEST(Accuracy, InvariantUnderSamplePermutation) {
    Rng rng(1);
    Labels p, t;
    for (int i = 0; i < 100; ++i) {
        p.push_back(rng.uniform() < 0.5 ? 0 : 1);
        t.push_back(rng.uniform() < 0.5 ? 0 : 1);
    }
    const double base = accuracy(p, t);
    std::reverse(p.begin(), p.end());
    std::reverse(t.begin(), t.end());
    EXPECT_DOUBLE_EQ(accuracy(p, t), base);
}
