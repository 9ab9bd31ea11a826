// rwm_cli: generate data, solve transport, run (regularized) Wasserstein
// means, lay out skeletons and run adaptation sweeps.
//
// Exit codes: 0 success (including flagged non-convergence), 2 usage or
// validation error, 1 anything else.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "rwm/experiment.hpp"
#include "rwm/io.hpp"
#include "rwm/means.hpp"
#include "rwm/measures.hpp"
#include "rwm/rwm.hpp"
#include "rwm/vot.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Bad arguments that CLI11 cannot catch on its own.
struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

std::ofstream open_output(const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

fs::path prepare_dir(const std::string& dir) {
    fs::create_directories(dir);
    return fs::path(dir);
}

void write_json(const fs::path& path, const json& doc) { open_output(path) << doc.dump(2) << '\n'; }

std::string num(double value) { return rwm::io::format_double(value); }

void apply_threads() {
    const char* env = std::getenv("RWM_THREADS");
    if (env == nullptr || *env == '\0') return;
    char* end = nullptr;
    const long threads = std::strtol(env, &end, 10);
    if (*end != '\0' || threads < 1) throw UsageError(std::string("RWM_THREADS must be a positive integer, got '") + env + "'");
#ifdef _OPENMP
    omp_set_num_threads(static_cast<int>(threads));
#endif
}

// ---------------------------------------------------------------------------
// Output writers

void write_assignment(const fs::path& path, const rwm::Assignment& assignment,
                      const std::optional<rwm::Labels>& centroid_labels) {
    auto out = open_output(path);
    out << "sample_index,centroid_index" << (centroid_labels ? ",predicted_label" : "") << '\n';
    for (std::size_t i = 0; i < assignment.centroid_of.size(); ++i) {
        const rwm::Index j = assignment.centroid_of[i];
        out << i << ',' << j;
        if (centroid_labels) out << ',' << (*centroid_labels)[static_cast<std::size_t>(j)];
        out << '\n';
    }
}

void write_centroids(const fs::path& path, const rwm::CentroidSet& c) {
    auto out = open_output(path);
    rwm::io::write_points_csv(out, c.positions, c.labels, c.target_weights);
}

void write_trace(const fs::path& path, const rwm::RwmTrace& trace) {
    auto out = open_output(path);
    out << "iteration,transport_cost,reg_loss,total_loss,max_displacement,vot_residual,vot_converged,"
           "inner_objective_start,inner_objective_end,weight_sum,min_weight\n";
    for (std::size_t t = 0; t < trace.records.size(); ++t) {
        const auto& r = trace.records[t];
        out << t + 1 << ',' << num(r.transport_cost) << ',' << num(r.regularizer_loss) << ',' << num(r.total_loss)
            << ',' << num(r.max_displacement) << ',' << num(r.vot_residual) << ',' << (r.vot_converged ? 1 : 0)
            << ',' << num(r.inner_objective_start) << ',' << num(r.inner_objective_end) << ','
            << num(r.weight_sum) << ',' << num(r.min_weight) << '\n';
    }
}

std::optional<double> maybe_accuracy(const rwm::CentroidSet& centroids, const rwm::Assignment& assignment,
                                     const rwm::EmpiricalMeasure& target) {
    if (!centroids.labels || !target.has_labels()) return std::nullopt;
    return rwm::accuracy(rwm::classify_targets(centroids, assignment), *target.labels());
}

/// Centroids from a points file: its weight column (if any) gives the targets.
rwm::CentroidSet read_centroids(const std::string& path) {
    const auto table = rwm::io::read_points_csv(path);
    if (table.weights) {
        const double sum = table.weights->sum();
        if (!(sum > 0.0)) throw rwm::io::InputError(path + ": centroid weights must have a positive sum");
        return rwm::CentroidSet(table.points, *table.weights / sum, table.labels);
    }
    return rwm::CentroidSet(table.points, table.labels);
}

// ---------------------------------------------------------------------------
// Shared solver flags

struct SolverFlags {
    std::optional<double> mass_tol;
    int max_iter = 100;
    double tol = 1e-4;

    /// `outer` adds the outer-loop flags; plain transport has no outer loop.
    void add(CLI::App* app, bool outer = true) {
        app->add_option("--mass-tol", mass_tol, "Per-cell mass tolerance (default: largest sample weight)")
            ->check(CLI::PositiveNumber);
        if (!outer) return;
        app->add_option("--max-iter", max_iter, "Maximum outer iterations")->check(CLI::PositiveNumber)
            ->capture_default_str();
        app->add_option("--tol", tol, "Outer tolerance on the largest centroid displacement")
            ->check(CLI::PositiveNumber)->capture_default_str();
    }

    rwm::VotOptions vot() const {
        rwm::VotOptions v;
        v.mass_tolerance = mass_tol;
        return v;
    }
};

// ---------------------------------------------------------------------------
// Commands

struct GenerateArgs {
    std::string kind;
    long long n = 0;
    std::optional<double> noise;
    std::uint64_t seed = 0;
    double angle = 0.0;
    std::optional<double> tail_factor;
    double tail_fraction = 0.15;
    std::string out;
};

int cmd_generate(const GenerateArgs& a) {
    if (a.n < 1) throw UsageError("--n must be >= 1");
    const auto n = static_cast<rwm::Index>(a.n);
    std::optional<rwm::EmpiricalMeasure> m;
    if (a.kind == "two-moons") {
        m = rwm::make_two_moons(n, a.noise.value_or(0.05), a.seed);
    } else if (a.kind == "gaussian-mixture") {
        rwm::GaussianMixtureParams params;
        params.sigmas.assign(params.means.size(), a.noise.value_or(0.3));
        m = rwm::make_gaussian_mixture(n, a.seed, params);
    } else {
        m = rwm::make_bent_tube(n, a.noise.value_or(0.05), a.seed);
    }
    if (a.tail_factor && a.kind != "two-moons") throw UsageError("--tail-factor applies to two-moons only");
    if (a.angle != 0.0) {
        if (a.kind == "bent-tube") throw UsageError("--angle applies to 2-D data only");
    }
    rwm::Vector weights = m->weights();
    if (a.tail_factor) weights = rwm::two_moons_tail_weights(m->points(), *m->labels(), a.tail_fraction, *a.tail_factor);
    const rwm::EmpiricalMeasure rotated = a.angle != 0.0 ? rwm::rotate(*m, {a.angle, {}}) : *m;
    auto out = open_output(a.out);
    rwm::io::write_points_csv(out, rotated.points(), rotated.labels(), weights);
    return 0;
}

struct PairArgs {
    std::string first;
    std::string second;
    std::string out_dir;
    SolverFlags solver;
};

int cmd_vot(const PairArgs& a) {
    const rwm::EmpiricalMeasure target = rwm::io::read_points_csv(a.first).to_measure();
    const rwm::CentroidSet centroids = read_centroids(a.second);
    rwm::VotOptions opts = a.solver.vot();
    const rwm::VotResult r = rwm::solve_vot(target, centroids, opts);

    const fs::path dir = prepare_dir(a.out_dir);
    write_assignment(dir / "assignment.csv", r.assignment, centroids.labels);
    auto pot = open_output(dir / "potentials.csv");
    pot << "centroid_index,potential,target_weight,cell_mass\n";
    for (rwm::Index j = 0; j < centroids.size(); ++j) {
        pot << j << ',' << num(r.potentials[j]) << ',' << num(centroids.target_weights[j]) << ','
            << num(r.assignment.cell_mass[j]) << '\n';
    }
    json metrics = {{"ot_cost", r.assignment.transport_cost},
                    {"mass_residual", r.mass_residual},
                    {"iterations", r.iterations_used},
                    {"converged", r.converged},
                    {"polished", r.polished}};
    if (auto acc = maybe_accuracy(centroids, r.assignment, target)) metrics["accuracy"] = *acc;
    write_json(dir / "metrics.json", metrics);
    return 0;
}

struct WmArgs : PairArgs {
    bool update_weights = false;
};

int cmd_wm(const WmArgs& a) {
    const rwm::EmpiricalMeasure target = rwm::io::read_points_csv(a.first).to_measure();
    const rwm::CentroidSet initial = read_centroids(a.second);
    rwm::MeansOptions opts;
    opts.outer_tolerance = a.solver.tol;
    opts.max_outer_iterations = a.solver.max_iter;
    opts.vot_options = a.solver.vot();
    opts.update_weights = a.update_weights;
    const rwm::MeansResult r = rwm::wasserstein_means(target, initial, opts);

    const fs::path dir = prepare_dir(a.out_dir);
    write_assignment(dir / "assignment.csv", r.assignment, r.centroids.labels);
    write_centroids(dir / "centroids_final.csv", r.centroids);
    auto trace = open_output(dir / "trace.csv");
    trace << "iteration,transport_cost,reg_loss,total_loss\n";
    for (std::size_t t = 0; t < r.cost_trace.size(); ++t) {
        trace << t + 1 << ',' << num(r.cost_trace[t]) << ",0," << num(r.cost_trace[t]) << '\n';
    }
    json metrics = {{"ot_cost", r.assignment.transport_cost},
                    {"iterations", r.iterations},
                    {"converged", r.converged && r.vot_converged},
                    {"had_empty_cells", r.had_empty_cells}};
    if (auto acc = maybe_accuracy(r.centroids, r.assignment, target)) metrics["accuracy"] = *acc;
    write_json(dir / "metrics.json", metrics);
    return 0;
}

struct RwmArgs : PairArgs {
    std::string reg = "none";
    std::optional<double> lambda;
    std::optional<double> lambda2;
    std::optional<double> momentum;
    std::string topology;
};

rwm::RegularizerSpec make_regularizer(const RwmArgs& a, const std::optional<rwm::io::TopologySpec>& topo) {
    if (a.reg == "none") {
        if (a.lambda || a.lambda2) throw UsageError("--lambda/--lambda2 need a regularizer");
        return rwm::NoRegularizer{};
    }
    if (a.lambda2 && a.reg != "curve") throw UsageError("--lambda2 applies to the curve regularizer only");
    if (a.reg == "label") return rwm::LabelPotential{a.lambda.value_or(1.0)};
    if (a.reg == "affine") return rwm::AffineConsistency{a.lambda.value_or(100.0)};
    if (!topo) throw UsageError("--reg curve needs --topology");
    return rwm::CurveRegularizer{a.lambda.value_or(0.01), a.lambda2.value_or(1.0), topo->topology};
}

int cmd_rwm(const RwmArgs& a) {
    if (!a.topology.empty() && a.reg != "curve") throw UsageError("--topology applies to --reg curve only");
    std::optional<rwm::io::TopologySpec> topo;
    if (!a.topology.empty()) topo = rwm::io::read_topology_json(a.topology);

    rwm::CentroidSet initial = read_centroids(a.first);
    const rwm::EmpiricalMeasure target = rwm::io::read_points_csv(a.second).to_measure();
    if (topo) {
        for (const auto& [node, pos] : topo->fixed_positions) {
            if (node >= initial.size() || pos.size() != initial.dim()) {
                throw rwm::io::InputError("topology: fixed position of node " + std::to_string(node) +
                                          " does not fit the source");
            }
            initial.positions.row(node) = pos.transpose();
        }
    }

    rwm::RwmOptions opts;
    opts.regularizer = make_regularizer(a, topo);
    opts.outer_tolerance = a.solver.tol;
    opts.max_outer_iterations = a.solver.max_iter;
    opts.vot_options = a.solver.vot();
    opts.momentum_weight_update = a.momentum;
    const rwm::RwmResult r = rwm::regularized_wasserstein_means(target, initial, opts);

    const fs::path dir = prepare_dir(a.out_dir);
    write_assignment(dir / "assignment.csv", r.assignment, r.centroids.labels);
    write_centroids(dir / "centroids_final.csv", r.centroids);
    write_trace(dir / "trace.csv", r.trace);
    json metrics = {{"ot_cost", r.assignment.transport_cost},
                    {"iterations", r.iterations},
                    {"converged", r.converged && r.vot_converged}};
    if (auto acc = maybe_accuracy(r.centroids, r.assignment, target)) metrics["accuracy"] = *acc;
    write_json(dir / "metrics.json", metrics);
    return 0;
}

struct SkeletonArgs {
    std::string cloud;
    std::string topology;
    std::string out_dir;
    double lambda = 0.01;
    double lambda2 = 1.0;
    double momentum = rwm::kDefaultMomentum;
    SolverFlags solver;
};

int cmd_skeleton(const SkeletonArgs& a) {
    const auto start = std::chrono::steady_clock::now();
    const rwm::io::TopologySpec topo = rwm::io::read_topology_json(a.topology);
    const rwm::EmpiricalMeasure cloud = rwm::io::read_points_csv(a.cloud).to_measure();
    if (cloud.dim() != 3) throw rwm::io::InputError("skeleton cloud must be 3-D");

    rwm::RwmOptions opts;
    opts.regularizer = rwm::CurveRegularizer{a.lambda, a.lambda2, topo.topology};
    opts.outer_tolerance = a.solver.tol;
    opts.max_outer_iterations = a.solver.max_iter;
    opts.vot_options = a.solver.vot();
    opts.momentum_weight_update = a.momentum;
    const rwm::RwmResult r = rwm::skeleton_layout(cloud, topo.topology, topo.fixed_positions, opts);
    const double runtime = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    const fs::path dir = prepare_dir(a.out_dir);
    std::vector<int> branch_of(static_cast<std::size_t>(topo.topology.node_count()), -1);
    const auto& branches = topo.topology.branches();
    for (std::size_t b = branches.size(); b-- > 0;) {
        for (rwm::Index node : branches[b]) branch_of[static_cast<std::size_t>(node)] = static_cast<int>(b);
    }
    auto skel = open_output(dir / "skeleton.csv");
    skel << "node_index,x,y,z,branch_id\n";
    const auto& y = r.centroids.positions;
    for (rwm::Index j = 0; j < y.rows(); ++j) {
        skel << j << ',' << num(y(j, 0)) << ',' << num(y(j, 1)) << ',' << num(y(j, 2)) << ','
             << branch_of[static_cast<std::size_t>(j)] << '\n';
    }
    write_assignment(dir / "assignment.csv", r.assignment, std::nullopt);
    write_trace(dir / "trace.csv", r.trace);

    const auto parts = rwm::curve_loss_parts(y, topo.topology);
    const double reg_loss = a.lambda * parts.length + a.lambda2 * parts.curvature;
    write_json(dir / "metrics.json", {{"runtime_seconds", runtime},
                                      {"transport_cost", r.assignment.transport_cost},
                                      {"curve_length", parts.length},
                                      {"curvature", parts.curvature},
                                      {"reg_loss", reg_loss},
                                      {"total_loss", r.assignment.transport_cost + reg_loss},
                                      {"iterations", r.iterations},
                                      {"converged", r.converged && r.vot_converged}});
    return 0;
}

struct ExperimentArgs {
    std::string config;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
};

int cmd_experiment(const ExperimentArgs& a) {
    rwm::experiment::Config config = rwm::experiment::read_config(a.config);
    if (a.seed) config.seed = *a.seed;
    if (!a.out_dir.empty()) config.output_dir = a.out_dir;
    const auto cells = rwm::experiment::run(config);

    const fs::path dir = prepare_dir(config.output_dir);
    auto results = open_output(dir / "results.csv");
    results << "angle,method,seed,accuracy,ot_cost,iterations,converged\n";
    auto traces = open_output(dir / "traces.csv");
    traces << "angle,method,seed,iteration,transport_cost,reg_loss,total_loss,inner_objective_start,"
              "inner_objective_end\n";
    for (const auto& c : cells) {
        results << num(c.angle) << ',' << c.method << ',' << c.seed << ',' << num(c.accuracy) << ','
                << num(c.ot_cost) << ',' << c.iterations << ',' << (c.converged ? 1 : 0) << '\n';
        for (std::size_t t = 0; t < c.trace.records.size(); ++t) {
            const auto& r = c.trace.records[t];
            traces << num(c.angle) << ',' << c.method << ',' << c.seed << ',' << t + 1 << ','
                   << num(r.transport_cost) << ',' << num(r.regularizer_loss) << ',' << num(r.total_loss) << ','
                   << num(r.inner_objective_start) << ',' << num(r.inner_objective_end) << '\n';
        }
    }
    auto summary = open_output(dir / "summary.csv");
    summary << "angle,method,runs,mean_accuracy,std_accuracy,mean_ot_cost,std_ot_cost\n";
    for (const auto& s : rwm::experiment::summarize(cells)) {
        summary << num(s.angle) << ',' << s.method << ',' << s.runs << ',' << num(s.mean_accuracy) << ','
                << num(s.std_accuracy) << ',' << num(s.mean_ot_cost) << ',' << num(s.std_ot_cost) << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Regularized Wasserstein means"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for all subcommands");

    GenerateArgs gen;
    auto* g = app.add_subcommand("generate", "Write a synthetic points CSV");
    g->add_option("kind", gen.kind, "two-moons | gaussian-mixture | bent-tube")
        ->required()
        ->check(CLI::IsMember({"two-moons", "gaussian-mixture", "bent-tube"}));
    g->add_option("--n", gen.n, "Number of samples")->required();
    g->add_option("--noise", gen.noise, "Noise sigma (defaults: two-moons 0.05, gaussian-mixture 0.3, bent-tube 0.05)")
        ->check(CLI::NonNegativeNumber);
    g->add_option("--seed", gen.seed, "Random seed")->capture_default_str();
    g->add_option("--angle", gen.angle, "Rotation in degrees about the data mean (2-D kinds)");
    g->add_option("--tail-factor", gen.tail_factor, "Scale the weights of two-moons arc ends")
        ->check(CLI::PositiveNumber);
    g->add_option("--tail-fraction", gen.tail_fraction, "Arc fraction at each end counted as tail")
        ->check(CLI::Range(0.0, 0.5))->capture_default_str();
    g->add_option("-o,--out", gen.out, "Output CSV")->required();

    PairArgs vot;
    auto* v = app.add_subcommand("vot", "Transport a sample measure onto fixed centroids");
    v->add_option("target", vot.first, "Sample CSV")->required();
    v->add_option("centroids", vot.second, "Centroid CSV (weight column = target weights)")->required();
    v->add_option("-o,--out", vot.out_dir, "Output directory")->required();
    vot.solver.add(v, false);

    WmArgs wm;
    auto* w = app.add_subcommand("wm", "Wasserstein means");
    w->add_option("target", wm.first, "Sample CSV")->required();
    w->add_option("centroids", wm.second, "Initial centroid CSV")->required();
    w->add_option("-o,--out", wm.out_dir, "Output directory")->required();
    w->add_flag("--update-weights", wm.update_weights, "Reset weights to the Voronoi masses each iteration");
    wm.solver.add(w);

    RwmArgs rw;
    auto* r = app.add_subcommand("rwm", "Regularized Wasserstein means from labelled source to target");
    r->add_option("source", rw.first, "Source CSV; rows become the centroids")->required();
    r->add_option("target", rw.second, "Target CSV (labels, if present, give accuracy)")->required();
    r->add_option("-o,--out", rw.out_dir, "Output directory")->required();
    r->add_option("--reg", rw.reg, "Regularizer")
        ->check(CLI::IsMember({"none", "label", "affine", "curve"}))
        ->capture_default_str();
    r->add_option("--lambda", rw.lambda, "Weight (label 1, affine 100, curve length 0.01 by default)")
        ->check(CLI::NonNegativeNumber);
    r->add_option("--lambda2", rw.lambda2, "Curvature weight for --reg curve (default 1)")->check(CLI::NonNegativeNumber);
    r->add_option("--momentum", rw.momentum, "Enable momentum weight updates with this coefficient")
        ->check(CLI::Range(0.0, 1.0));
    r->add_option("--topology", rw.topology, "Topology JSON for --reg curve")->check(CLI::ExistingFile);
    rw.solver.add(r);

    SkeletonArgs sk;
    auto* s = app.add_subcommand("skeleton", "Lay out a skeleton graph in a 3-D point cloud");
    s->add_option("cloud", sk.cloud, "Point cloud CSV")->required();
    s->add_option("topology", sk.topology, "Topology JSON")->required();
    s->add_option("-o,--out", sk.out_dir, "Output directory")->required();
    s->add_option("--lambda", sk.lambda, "Length weight")->check(CLI::NonNegativeNumber)->capture_default_str();
    s->add_option("--lambda2", sk.lambda2, "Curvature weight")->check(CLI::NonNegativeNumber)->capture_default_str();
    s->add_option("--momentum", sk.momentum, "Weight momentum")->check(CLI::Range(0.0, 1.0))->capture_default_str();
    sk.solver.add(s);

    ExperimentArgs ex;
    auto* e = app.add_subcommand("experiment", "Run an angle x method adaptation sweep");
    e->add_option("config", ex.config, "Experiment JSON")->required();
    e->add_option("-o,--out", ex.out_dir, "Output directory (overrides the config)");
    e->add_option("--seed", ex.seed, "Base seed (overrides the config)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& err) {
        return app.exit(err);
    } catch (const CLI::CallForAllHelp& err) {
        return app.exit(err);
    } catch (const CLI::ParseError& err) {
        app.exit(err);
        return 2;
    }

    try {
        apply_threads();
        if (rw.momentum && *rw.momentum >= 1.0) throw UsageError("--momentum must be < 1");
        if (sk.momentum >= 1.0) throw UsageError("--momentum must be < 1");
        if (*g) return cmd_generate(gen);
        if (*v) return cmd_vot(vot);
        if (*w) return cmd_wm(wm);
        if (*r) return cmd_rwm(rw);
        if (*s) return cmd_skeleton(sk);
        if (*e) return cmd_experiment(ex);
    } catch (const rwm::experiment::ConfigError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 2;
    } catch (const std::invalid_argument& err) {
        // Input files, argument values and library preconditions.
        std::cerr << "error: " << err.what() << '\n';
        return 2;
    } catch (const std::exception& err) {
        std::cerr << "internal error: " << err.what() << '\n';
        return 1;
    }
    return 1;
}
