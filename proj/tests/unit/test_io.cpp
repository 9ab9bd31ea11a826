#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "rwm/experiment.hpp"
#include "rwm/io.hpp"
#include "rwm/measures.hpp"

using namespace rwm;
using nlohmann::json;

namespace {

io::PointsTable read(const std::string& text) {
    std::istringstream in(text);
    return io::read_points_csv(in);
}

json small_config() {
    return json::parse(R"({
        "dataset": {"kind": "two-moons", "source_n": 20, "target_n": 200, "noise": 0.05},
        "angles": [0, 10, 20, 30, 40],
        "methods": [{"name": "none"}, {"name": "affine", "regularizer": "affine", "lambda": 100}],
        "repetitions": 2,
        "seed": 7,
        "solver": {"max_outer_iterations": 20}
    })");
}

std::vector<std::string> problems_of(const json& doc) {
    try {
        experiment::parse_config(doc);
    } catch (const experiment::ConfigError& e) {
        return e.problems();
    }
    return {};
}

}  // namespace

TEST(PointsCsv, RoundTripIsExact) {
    const EmpiricalMeasure m = make_two_moons(50, 0.1, 3);
    Vector w = Vector::LinSpaced(50, 1.0, 2.0);
    w /= w.sum();
    std::ostringstream out;
    io::write_points_csv(out, m.points(), m.labels(), w);
    const io::PointsTable t = read(out.str());
    EXPECT_EQ(t.points, m.points());
    EXPECT_EQ(t.labels, m.labels());
    ASSERT_TRUE(t.weights.has_value());
    EXPECT_EQ(*t.weights, w);
}

TEST(PointsCsv, ExtremeValuesRoundTrip) {
    PointMatrix p(1, 3);
    p << 1e-300, -0.1, 123456789.123456789;
    std::ostringstream out;
    io::write_points_csv(out, p, std::nullopt, std::nullopt);
    EXPECT_EQ(read(out.str()).points, p);
    EXPECT_EQ(io::format_double(0.1), "0.1");
}

TEST(PointsCsv, OptionalColumns) {
    const io::PointsTable plain = read("x0,x1\n1,2\n3,4\n");
    EXPECT_EQ(plain.points.rows(), 2);
    EXPECT_FALSE(plain.labels.has_value());
    EXPECT_FALSE(plain.weights.has_value());
    EXPECT_DOUBLE_EQ(plain.to_measure().weights()[0], 0.5);

    const io::PointsTable swapped = read("x0,weight,label\n1,3,0\n2,1,1\n");
    EXPECT_EQ(*swapped.labels, (Labels{0, 1}));
    EXPECT_DOUBLE_EQ(swapped.to_measure().weights()[0], 0.75);
}

TEST(PointsCsv, ToleratesBlankLinesAndCrlf) {
    const io::PointsTable t = read("x0,x1\r\n1, 2\r\n\r\n3,4\r\n");
    EXPECT_EQ(t.points.rows(), 2);
    EXPECT_EQ(t.points(0, 1), 2.0);
}

TEST(PointsCsv, RejectsMalformedInput) {
    EXPECT_THROW(read(""), io::InputError);
    EXPECT_THROW(read("a,b\n1,2\n"), io::InputError);
    EXPECT_THROW(read("x0,x2\n1,2\n"), io::InputError);
    EXPECT_THROW(read("x0,colour\n1,2\n"), io::InputError);
    EXPECT_THROW(read("x0,label,label\n1,2,2\n"), io::InputError);
    EXPECT_THROW(read("x0,x1\n1\n"), io::InputError);
    EXPECT_THROW(read("x0,x1\n1,abc\n"), io::InputError);
    EXPECT_THROW(read("x0,label\n1,0.5\n"), io::InputError);
    EXPECT_THROW(read("x0\n"), io::InputError);
    EXPECT_THROW(io::read_points_csv(std::string("/nonexistent/points.csv")), io::InputError);
}

TEST(Topology, ParsesBranchesAndFixedNodes) {
    const io::TopologySpec t = io::parse_topology(json::parse(R"({
        "branches": [[0, 1, 2], [1, 3]],
        "fixed": [0, 2],
        "fixed_positions": {"0": [0, 0, 0], "2": [1.5, 0, 0]}
    })"));
    EXPECT_EQ(t.topology.node_count(), 4);
    EXPECT_EQ(t.topology.branches().size(), 2u);
    EXPECT_TRUE(t.topology.is_fixed(2));
    EXPECT_FALSE(t.topology.is_fixed(1));
    EXPECT_EQ(t.fixed_positions.at(2), Eigen::Vector3d(1.5, 0, 0));
}

TEST(Topology, RejectsMalformed) {
    const char* bad[] = {
        R"([])",
        R"({"branches": []})",
        R"({"branches": [[0]]})",
        R"({"branches": [[0, -1]]})",
        R"({"branches": [[0, 1.5]]})",
        R"({"branches": [[0, 1]], "fixed": [0]})",
        R"({"branches": [[0, 1]], "fixed": [0], "fixed_positions": {"zero": [0]}})",
        R"({"branches": [[0, 1]], "fixed": [0], "fixed_positions": {"0": []}})",
        R"({"branches": [[0, 1]], "fixed": [0], "fixed_positions": {"0": ["a"]}})",
        R"({"branches": [[0, 1]], "fixed": [3], "fixed_positions": {"3": [0]}})",
    };
    for (const char* text : bad) EXPECT_THROW(io::parse_topology(json::parse(text)), io::InputError) << text;
}

TEST(Topology, ShippedBentTubeConfig) {
    const io::TopologySpec t = io::read_topology_json(RWM_CONFIG_DIR "/bent_tube_topology.json");
    EXPECT_EQ(t.topology.node_count(), 10);
    EXPECT_EQ(t.topology.fixed_nodes(), (std::set<Index>{0, 9}));
    EXPECT_NEAR(t.fixed_positions.at(9)[0], std::numbers::pi, 1e-12);
}

TEST(ExperimentConfig, ParsesMethodsAndDefaults) {
    const experiment::Config c = experiment::parse_config(small_config());
    EXPECT_EQ(c.dataset.source_n, 20);
    EXPECT_EQ(c.angles.size(), 5u);
    ASSERT_EQ(c.methods.size(), 2u);
    EXPECT_TRUE(std::holds_alternative<NoRegularizer>(c.methods[0].regularizer));
    EXPECT_DOUBLE_EQ(std::get<AffineConsistency>(c.methods[1].regularizer).lambda, 100.0);
    EXPECT_EQ(c.solver.max_outer_iterations, 20);
    EXPECT_EQ(c.seed, 7u);

    const experiment::Config mix = experiment::parse_config(json::parse(R"({
        "dataset": {"kind": "gaussian-mixture"}, "angles": [45], "methods": [{"name": "m"}]})"));
    EXPECT_EQ(mix.dataset.source_n, 50);
    EXPECT_EQ(mix.dataset.target_n, 5000);
    EXPECT_DOUBLE_EQ(mix.dataset.noise, 0.3);
}

TEST(ExperimentConfig, ReportsEveryProblem) {
    const auto problems = problems_of(json::parse(R"({
        "dataset": {"kind": "spirals", "source_n": 1},
        "angles": [],
        "methods": [{"name": "a", "regularizer": "curve"}, {"name": "a", "momentum": 1.5}],
        "repetitions": 0,
        "colour": "red"
    })"));
    EXPECT_GE(problems.size(), 7u);
    auto mentions = [&](const std::string& s) {
        return std::any_of(problems.begin(), problems.end(),
                           [&](const std::string& p) { return p.find(s) != std::string::npos; });
    };
    EXPECT_TRUE(mentions("dataset.kind"));
    EXPECT_TRUE(mentions("source_n"));
    EXPECT_TRUE(mentions("angles"));
    EXPECT_TRUE(mentions("curve"));
    EXPECT_TRUE(mentions("duplicate"));
    EXPECT_TRUE(mentions("momentum"));
    EXPECT_TRUE(mentions("repetitions"));
    EXPECT_TRUE(mentions("colour"));
}

TEST(ExperimentConfig, RejectsMisplacedOptions) {
    json doc = small_config();
    doc["methods"][0]["tail_fraction"] = 0.2;
    EXPECT_FALSE(problems_of(doc).empty());
    doc = small_config();
    doc["dataset"] = {{"kind", "gaussian-mixture"}, {"sigma", 0.0}};
    EXPECT_FALSE(problems_of(doc).empty());
    doc = small_config();
    doc["methods"][0]["lambda"] = 1.0;
    EXPECT_FALSE(problems_of(doc).empty());
    EXPECT_THROW(experiment::read_config("/nonexistent/config.json"), experiment::ConfigError);
}

TEST(ShippedConfigs, AllParse) {
    for (const char* name : {"two_moons", "two_moons_tail", "two_moons_sweep", "gaussian_mixture"}) {
        EXPECT_NO_THROW(experiment::read_config(std::string(RWM_CONFIG_DIR "/") + name + ".json")) << name;
    }
}

TEST(Experiment, GridHasOneCellPerAngleMethodAndRepetition) {
    const experiment::Config c = experiment::parse_config(small_config());
    const auto cells = experiment::run(c);
    ASSERT_EQ(cells.size(), 20u);
    std::set<std::tuple<double, std::string, std::uint64_t>> keys;
    for (const auto& cell : cells) {
        keys.emplace(cell.angle, cell.method, cell.seed);
        EXPECT_GE(cell.accuracy, 0.0);
        EXPECT_LE(cell.accuracy, 1.0);
        EXPECT_FALSE(cell.trace.records.empty());
    }
    EXPECT_EQ(keys.size(), 20u);
    for (std::size_t i = 1; i < cells.size(); ++i) {
        const auto& a = cells[i - 1];
        const auto& b = cells[i];
        EXPECT_TRUE(std::tie(a.angle, a.method, a.seed) < std::tie(b.angle, b.method, b.seed));
    }

    const auto summary = experiment::summarize(cells);
    ASSERT_EQ(summary.size(), 10u);
    for (const auto& s : summary) EXPECT_EQ(s.runs, 2);
}

TEST(Experiment, RepeatableAndSeedSensitive) {
    const experiment::Config c = experiment::parse_config(small_config());
    const auto a = experiment::run(c);
    const auto b = experiment::run(c);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].accuracy, b[i].accuracy);
        EXPECT_EQ(a[i].ot_cost, b[i].ot_cost);
        EXPECT_EQ(a[i].iterations, b[i].iterations);
    }
    const experiment::Problem p0 = experiment::make_problem(c.dataset, 10.0, 7);
    const experiment::Problem p1 = experiment::make_problem(c.dataset, 10.0, 8);
    EXPECT_NE(p0.target.points(), p1.target.points());
}

TEST(Experiment, RotationAboutTargetMean) {
    const experiment::Config c = experiment::parse_config(small_config());
    const experiment::Problem flat = experiment::make_problem(c.dataset, 0.0, 3);
    const experiment::Problem turned = experiment::make_problem(c.dataset, 40.0, 3);
    EXPECT_EQ(flat.source.points(), turned.source.points());
    EXPECT_LT((flat.target.mean() - turned.target.mean()).norm(), 1e-12);
}

TEST(Experiment, SummaryStatistics) {
    std::vector<experiment::CellResult> cells(3);
    const double acc[] = {0.5, 0.7, 0.9};
    for (int i = 0; i < 3; ++i) {
        cells[static_cast<std::size_t>(i)].angle = 10.0;
        cells[static_cast<std::size_t>(i)].method = "m";
        cells[static_cast<std::size_t>(i)].accuracy = acc[i];
        cells[static_cast<std::size_t>(i)].ot_cost = 1.0;
    }
    const auto s = experiment::summarize(cells);
    ASSERT_EQ(s.size(), 1u);
    EXPECT_NEAR(s[0].mean_accuracy, 0.7, 1e-15);
    EXPECT_NEAR(s[0].std_accuracy, 0.2, 1e-15);
    EXPECT_EQ(s[0].std_ot_cost, 0.0);
}
