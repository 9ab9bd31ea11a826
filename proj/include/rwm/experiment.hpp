#pragma once

// Domain-adaptation sweeps: labelled source samples become the centroids,
// a rotated independent draw is the target, and each target sample is
// labelled by its transport centroid.
//
// Config JSON:
//   {"dataset": {"kind": "two-moons", "source_n": 200, "target_n": 10000, "noise": 0.05},
//    "angles": [45], "repetitions": 5, "seed": 0,
//    "methods": [{"name": "none", "regularizer": "none"},
//                {"name": "affine", "regularizer": "affine", "lambda": 100,
//                 "tail_factor": 0.5, "tail_fraction": 0.15}],
//    "solver": {"outer_tolerance": 1e-4, "max_outer_iterations": 100,
//               "mass_tolerance": 1e-4, "vot_max_iterations": 5000},
//    "output_dir": "results/two_moons"}
// Gaussian mixtures take "sigma" instead of "noise". Tail weights apply to
// two-moons sources only.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rwm/measures.hpp"
#include "rwm/rng.hpp"
#include "rwm/rwm.hpp"

namespace rwm::experiment {

struct DatasetSpec {
    std::string kind = "two-moons";  ///< two-moons or gaussian-mixture
    Index source_n = 200;
    Index target_n = 10000;
    double noise = 0.05;  ///< two-moons noise or mixture component sigma
};

struct Method {
    std::string name;
    RegularizerSpec regularizer = NoRegularizer{};
    std::optional<double> momentum;
    std::optional<double> tail_factor;
    double tail_fraction = 0.15;
};

struct Config {
    DatasetSpec dataset;
    std::vector<double> angles;
    std::vector<Method> methods;
    int repetitions = 1;
    std::uint64_t seed = 0;
    RwmOptions solver;  ///< regularizer and momentum are set per method
    std::string output_dir = "experiment_out";
};

/// Every problem found in a config, not just the first.
class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(std::vector<std::string> problems)
        : std::invalid_argument(join(problems)), problems_(std::move(problems)) {}

    const std::vector<std::string>& problems() const { return problems_; }

private:
    static std::string join(const std::vector<std::string>& problems) {
        std::string text = "invalid experiment config:";
        for (const auto& p : problems) text += "\n  - " + p;
        return text;
    }

    std::vector<std::string> problems_;
};

namespace detail {

class Reader {
public:
    explicit Reader(std::vector<std::string>& problems) : problems_(problems) {}

    void problem(std::string text) { problems_.push_back(std::move(text)); }

    std::optional<double> number(const nlohmann::json& obj, const std::string& key, const std::string& where) {
        if (!obj.contains(key)) return std::nullopt;
        const auto& v = obj[key];
        if (!v.is_number()) {
            problem(where + "." + key + " must be a number");
            return std::nullopt;
        }
        return v.get<double>();
    }

    std::optional<long long> integer(const nlohmann::json& obj, const std::string& key, const std::string& where) {
        if (!obj.contains(key)) return std::nullopt;
        const auto& v = obj[key];
        if (!v.is_number_integer()) {
            problem(where + "." + key + " must be an integer");
            return std::nullopt;
        }
        return v.get<long long>();
    }

    std::optional<std::string> string(const nlohmann::json& obj, const std::string& key, const std::string& where) {
        if (!obj.contains(key)) return std::nullopt;
        const auto& v = obj[key];
        if (!v.is_string()) {
            problem(where + "." + key + " must be a string");
            return std::nullopt;
        }
        return v.get<std::string>();
    }

    void unknown_keys(const nlohmann::json& obj, const std::set<std::string>& known, const std::string& where) {
        for (const auto& item : obj.items()) {
            if (!known.count(item.key())) problem(where + ": unknown key '" + item.key() + "'");
        }
    }

private:
    std::vector<std::string>& problems_;
};

inline void parse_dataset(const nlohmann::json& doc, Reader& r, DatasetSpec& out) {
    if (!doc.contains("dataset")) {
        r.problem("dataset is required");
        return;
    }
    const auto& ds = doc["dataset"];
    if (!ds.is_object()) {
        r.problem("dataset must be an object");
        return;
    }
    r.unknown_keys(ds, {"kind", "source_n", "target_n", "noise", "sigma"}, "dataset");
    if (auto kind = r.string(ds, "kind", "dataset")) {
        if (*kind != "two-moons" && *kind != "gaussian-mixture") {
            r.problem("dataset.kind must be two-moons or gaussian-mixture, got '" + *kind + "'");
        }
        out.kind = *kind;
    } else if (!ds.contains("kind")) {
        r.problem("dataset.kind is required");
    }
    if (out.kind == "gaussian-mixture") {
        out.source_n = 50;
        out.target_n = 5000;
        out.noise = 0.3;
    }
    if (auto n = r.integer(ds, "source_n", "dataset")) {
        if (*n < 2) r.problem("dataset.source_n must be >= 2");
        out.source_n = static_cast<Index>(*n);
    }
    if (auto n = r.integer(ds, "target_n", "dataset")) {
        if (*n < 2) r.problem("dataset.target_n must be >= 2");
        out.target_n = static_cast<Index>(*n);
    }
    const std::string noise_key = out.kind == "gaussian-mixture" ? "sigma" : "noise";
    const std::string other_key = out.kind == "gaussian-mixture" ? "noise" : "sigma";
    if (ds.contains(other_key)) r.problem("dataset." + other_key + " does not apply to " + out.kind);
    if (auto s = r.number(ds, noise_key, "dataset")) {
        const bool mixture = out.kind == "gaussian-mixture";
        if (!(mixture ? *s > 0.0 : *s >= 0.0) || !std::isfinite(*s)) {
            r.problem("dataset." + noise_key + (mixture ? " must be > 0" : " must be >= 0"));
        }
        out.noise = *s;
    }
}

inline void parse_methods(const nlohmann::json& doc, Reader& r, const std::string& kind, std::vector<Method>& out) {
    if (!doc.contains("methods") || !doc["methods"].is_array() || doc["methods"].empty()) {
        r.problem("methods must be a non-empty array");
        return;
    }
    std::set<std::string> names;
    for (std::size_t m = 0; m < doc["methods"].size(); ++m) {
        const auto& spec = doc["methods"][m];
        const std::string where = "methods[" + std::to_string(m) + "]";
        if (!spec.is_object()) {
            r.problem(where + " must be an object");
            continue;
        }
        r.unknown_keys(spec, {"name", "regularizer", "lambda", "momentum", "tail_factor", "tail_fraction"}, where);
        Method method;
        const auto name = r.string(spec, "name", where);
        if (!spec.contains("name")) {
            r.problem(where + ".name is required");
        } else if (name && name->empty()) {
            r.problem(where + ".name must not be empty");
        } else if (name && !names.insert(*name).second) {
            r.problem(where + ": duplicate method name '" + *name + "'");
        }
        method.name = name.value_or("");
        if (method.name.find_first_of(",\"\n") != std::string::npos) r.problem(where + ".name must not contain commas or quotes");

        const double lambda = r.number(spec, "lambda", where).value_or(0.0);
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) r.problem(where + ".lambda must be >= 0");
        const std::string reg = r.string(spec, "regularizer", where).value_or("none");
        if (reg == "none") {
            method.regularizer = NoRegularizer{};
            if (spec.contains("lambda")) r.problem(where + ".lambda has no effect without a regularizer");
        } else if (reg == "label") {
            method.regularizer = LabelPotential{lambda};
        } else if (reg == "affine") {
            method.regularizer = AffineConsistency{lambda};
        } else if (reg == "curve") {
            r.problem(where + ": the curve regularizer needs a topology and is not available in experiments");
        } else {
            r.problem(where + ".regularizer must be one of none, label, affine; got '" + reg + "'");
        }

        if (auto momentum = r.number(spec, "momentum", where)) {
            if (!(*momentum >= 0.0 && *momentum < 1.0)) r.problem(where + ".momentum must lie in [0, 1)");
            method.momentum = *momentum;
        }
        if (auto factor = r.number(spec, "tail_factor", where)) {
            if (!(*factor > 0.0) || !std::isfinite(*factor)) r.problem(where + ".tail_factor must be > 0");
            if (kind != "two-moons") r.problem(where + ".tail_factor applies to two-moons only");
            method.tail_factor = *factor;
        }
        if (auto fraction = r.number(spec, "tail_fraction", where)) {
            if (!(*fraction >= 0.0 && *fraction <= 0.5)) r.problem(where + ".tail_fraction must lie in [0, 0.5]");
            if (!spec.contains("tail_factor")) r.problem(where + ".tail_fraction needs tail_factor");
            method.tail_fraction = *fraction;
        }
        out.push_back(std::move(method));
    }
}

inline void parse_solver(const nlohmann::json& doc, Reader& r, RwmOptions& out) {
    if (!doc.contains("solver")) return;
    const auto& s = doc["solver"];
    if (!s.is_object()) {
        r.problem("solver must be an object");
        return;
    }
    r.unknown_keys(s, {"outer_tolerance", "max_outer_iterations", "mass_tolerance", "vot_max_iterations"}, "solver");
    if (auto v = r.number(s, "outer_tolerance", "solver")) {
        if (!(*v > 0.0)) r.problem("solver.outer_tolerance must be > 0");
        out.outer_tolerance = *v;
    }
    if (auto v = r.integer(s, "max_outer_iterations", "solver")) {
        if (*v < 1) r.problem("solver.max_outer_iterations must be >= 1");
        out.max_outer_iterations = static_cast<int>(*v);
    }
    if (auto v = r.number(s, "mass_tolerance", "solver")) {
        if (!(*v > 0.0)) r.problem("solver.mass_tolerance must be > 0");
        out.vot_options.mass_tolerance = *v;
    }
    if (auto v = r.integer(s, "vot_max_iterations", "solver")) {
        if (*v < 1) r.problem("solver.vot_max_iterations must be >= 1");
        out.vot_options.max_iterations = static_cast<int>(*v);
    }
}

}  // namespace detail

/// Throws ConfigError listing every problem found.
inline Config parse_config(const nlohmann::json& doc) {
    std::vector<std::string> problems;
    detail::Reader r(problems);
    Config config;
    if (!doc.is_object()) throw ConfigError({"config must be a JSON object"});
    r.unknown_keys(doc, {"dataset", "angles", "methods", "repetitions", "seed", "solver", "output_dir"}, "config");

    detail::parse_dataset(doc, r, config.dataset);
    if (!doc.contains("angles") || !doc["angles"].is_array() || doc["angles"].empty()) {
        r.problem("angles must be a non-empty array of degrees");
    } else {
        for (const auto& a : doc["angles"]) {
            if (!a.is_number() || !std::isfinite(a.get<double>())) {
                r.problem("angles must be finite numbers");
            } else {
                config.angles.push_back(a.get<double>());
            }
        }
    }
    detail::parse_methods(doc, r, config.dataset.kind, config.methods);
    if (auto reps = r.integer(doc, "repetitions", "config")) {
        if (*reps < 1) r.problem("repetitions must be >= 1");
        config.repetitions = static_cast<int>(*reps);
    }
    if (auto seed = r.integer(doc, "seed", "config")) {
        if (*seed < 0) r.problem("seed must be >= 0");
        config.seed = static_cast<std::uint64_t>(*seed);
    }
    detail::parse_solver(doc, r, config.solver);
    if (auto dir = r.string(doc, "output_dir", "config")) config.output_dir = *dir;

    if (!problems.empty()) throw ConfigError(std::move(problems));
    return config;
}

inline Config read_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError({"cannot open " + path});
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError({std::string("malformed JSON: ") + e.what()});
    }
    return parse_config(doc);
}

struct Problem {
    EmpiricalMeasure source;
    EmpiricalMeasure target;  ///< rotated, with truth labels
};

/// Source and (rotated) target draws for one repetition seed.
inline Problem make_problem(const DatasetSpec& dataset, double angle_degrees, std::uint64_t seed) {
    const std::uint64_t source_seed = derive_seed(seed, 0);
    const std::uint64_t target_seed = derive_seed(seed, 1);
    if (dataset.kind == "two-moons") {
        return {make_two_moons(dataset.source_n, dataset.noise, source_seed),
                rotate(make_two_moons(dataset.target_n, dataset.noise, target_seed), {angle_degrees, {}})};
    }
    GaussianMixtureParams params;
    params.sigmas.assign(params.means.size(), dataset.noise);
    return {make_gaussian_mixture(dataset.source_n, source_seed, params),
            rotate(make_gaussian_mixture(dataset.target_n, target_seed, params), {angle_degrees, {}})};
}

/// Labelled source samples as centroids, optionally with tail weights.
inline CentroidSet source_centroids(const EmpiricalMeasure& source, const Method& method) {
    if (method.tail_factor) {
        return CentroidSet(source.points(),
                           two_moons_tail_weights(source.points(), *source.labels(), method.tail_fraction,
                                                  *method.tail_factor),
                           source.labels());
    }
    return CentroidSet(source.points(), source.labels());
}

struct CellResult {
    double angle = 0.0;
    std::string method;
    std::uint64_t seed = 0;
    double accuracy = 0.0;
    double ot_cost = 0.0;
    int iterations = 0;
    bool converged = false;
    RwmTrace trace;
    double runtime_seconds = 0.0;
};

inline CellResult run_cell(const Config& config, const Problem& problem, double angle, const Method& method,
                           std::uint64_t seed) {
    const auto start = std::chrono::steady_clock::now();
    RwmOptions opts = config.solver;
    opts.regularizer = method.regularizer;
    opts.momentum_weight_update = method.momentum;
    const RwmResult result = regularized_wasserstein_means(problem.target, source_centroids(problem.source, method), opts);

    CellResult cell;
    cell.angle = angle;
    cell.method = method.name;
    cell.seed = seed;
    cell.accuracy = accuracy(classify_targets(result.centroids, result.assignment), *problem.target.labels());
    cell.ot_cost = result.assignment.transport_cost;
    cell.iterations = result.iterations;
    cell.converged = result.converged && result.vot_converged;
    cell.trace = result.trace;
    cell.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return cell;
}

/// The full grid, sorted by (angle, method name, seed). Repetition r uses
/// seed config.seed + r.
inline std::vector<CellResult> run(const Config& config) {
    std::vector<CellResult> cells;
    for (double angle : config.angles) {
        std::vector<Problem> problems;
        for (int rep = 0; rep < config.repetitions; ++rep) {
            problems.push_back(make_problem(config.dataset, angle, config.seed + static_cast<std::uint64_t>(rep)));
        }
        for (const Method& method : config.methods) {
            for (int rep = 0; rep < config.repetitions; ++rep) {
                const std::uint64_t seed = config.seed + static_cast<std::uint64_t>(rep);
                cells.push_back(run_cell(config, problems[static_cast<std::size_t>(rep)], angle, method, seed));
            }
        }
    }
    std::stable_sort(cells.begin(), cells.end(), [](const CellResult& a, const CellResult& b) {
        if (a.angle != b.angle) return a.angle < b.angle;
        if (a.method != b.method) return a.method < b.method;
        return a.seed < b.seed;
    });
    return cells;
}

struct Summary {
    double angle = 0.0;
    std::string method;
    int runs = 0;
    double mean_accuracy = 0.0;
    double std_accuracy = 0.0;  ///< sample standard deviation; 0 for a single run
    double mean_ot_cost = 0.0;
    double std_ot_cost = 0.0;
};

inline std::vector<Summary> summarize(const std::vector<CellResult>& cells) {
    std::vector<Summary> out;
    for (const CellResult& cell : cells) {
        auto it = std::find_if(out.begin(), out.end(),
                               [&](const Summary& s) { return s.angle == cell.angle && s.method == cell.method; });
        if (it == out.end()) {
            out.push_back({cell.angle, cell.method});
            it = out.end() - 1;
        }
        ++it->runs;
    }
    for (Summary& s : out) {
        std::vector<double> acc, cost;
        for (const CellResult& cell : cells) {
            if (cell.angle == s.angle && cell.method == s.method) {
                acc.push_back(cell.accuracy);
                cost.push_back(cell.ot_cost);
            }
        }
        auto mean_std = [](const std::vector<double>& v, double& mean, double& sd) {
            mean = 0.0;
            for (double x : v) mean += x;
            mean /= static_cast<double>(v.size());
            double ss = 0.0;
            for (double x : v) ss += (x - mean) * (x - mean);
            sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
        };
        mean_std(acc, s.mean_accuracy, s.std_accuracy);
        mean_std(cost, s.mean_ot_cost, s.std_ot_cost);
    }
    return out;
}

}  // namespace rwm::experiment
