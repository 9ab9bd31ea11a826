#pragma once

// File formats.
//
// Points CSV: header `x0,...,x{d-1}[,label][,weight]`, one row per point.
// Doubles are written in shortest round-trip form. A missing weight column
// means uniform weights.
//
// Topology JSON:
//   {"branches": [[0,1,2],...], "fixed": [0,2],
//    "fixed_positions": {"0": [x,y,z], "2": [x,y,z]}}

#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "rwm/regularizers.hpp"
#include "rwm/types.hpp"

namespace rwm::io {

/// Malformed or inconsistent input file.
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline std::string format_double(double value) {
    char buffer[64];
    const auto [end, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
    if (ec != std::errc{}) throw std::runtime_error("cannot format double");
    return std::string(buffer, end);
}

struct PointsTable {
    PointMatrix points;
    std::optional<Labels> labels;
    std::optional<Vector> weights;

    EmpiricalMeasure to_measure() const {
        return weights ? EmpiricalMeasure(points, *weights, labels) : EmpiricalMeasure(points, labels);
    }
};

inline void write_points_csv(std::ostream& out, const PointMatrix& points, const std::optional<Labels>& labels,
                             const std::optional<Vector>& weights) {
    const Index d = points.cols();
    for (Index c = 0; c < d; ++c) out << (c ? "," : "") << 'x' << c;
    if (labels) out << ",label";
    if (weights) out << ",weight";
    out << '\n';
    for (Index i = 0; i < points.rows(); ++i) {
        for (Index c = 0; c < d; ++c) out << (c ? "," : "") << format_double(points(i, c));
        if (labels) out << ',' << (*labels)[static_cast<std::size_t>(i)];
        if (weights) out << ',' << format_double((*weights)[i]);
        out << '\n';
    }
}

inline void write_points_csv(std::ostream& out, const EmpiricalMeasure& measure) {
    write_points_csv(out, measure.points(), measure.labels(), measure.weights());
}

namespace detail {

inline std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(sep, start);
        parts.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    for (auto& p : parts) {
        while (!p.empty() && (p.front() == ' ' || p.front() == '\t')) p.remove_prefix(1);
        while (!p.empty() && (p.back() == ' ' || p.back() == '\t' || p.back() == '\r')) p.remove_suffix(1);
    }
    return parts;
}

template <typename T>
T parse_number(std::string_view text, std::size_t line_no) {
    T value{};
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw InputError("line " + std::to_string(line_no) + ": cannot parse '" + std::string(text) + "'");
    }
    return value;
}

}  // namespace detail

inline PointsTable read_points_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw InputError("empty points file");
    const auto header = detail::split(line, ',');
    Index d = 0;
    while (static_cast<std::size_t>(d) < header.size() && header[static_cast<std::size_t>(d)] == "x" + std::to_string(d)) ++d;
    if (d == 0) throw InputError("points header must start with x0");
    int label_col = -1;
    int weight_col = -1;
    for (std::size_t c = static_cast<std::size_t>(d); c < header.size(); ++c) {
        if (header[c] == "label" && label_col < 0) {
            label_col = static_cast<int>(c);
        } else if (header[c] == "weight" && weight_col < 0) {
            weight_col = static_cast<int>(c);
        } else {
            throw InputError("unexpected points column '" + std::string(header[c]) + "'");
        }
    }

    std::vector<double> coords;
    Labels labels;
    std::vector<double> weights;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto fields = detail::split(line, ',');
        if (fields.size() != header.size()) {
            throw InputError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                             " fields, got " + std::to_string(fields.size()));
        }
        for (Index c = 0; c < d; ++c) coords.push_back(detail::parse_number<double>(fields[static_cast<std::size_t>(c)], line_no));
        if (label_col >= 0) labels.push_back(detail::parse_number<int>(fields[static_cast<std::size_t>(label_col)], line_no));
        if (weight_col >= 0) weights.push_back(detail::parse_number<double>(fields[static_cast<std::size_t>(weight_col)], line_no));
    }
    const auto n = static_cast<Index>(coords.size()) / d;
    if (n == 0) throw InputError("points file has no rows");

    PointsTable table;
    table.points = Eigen::Map<const PointMatrix>(coords.data(), n, d);
    if (label_col >= 0) table.labels = std::move(labels);
    if (weight_col >= 0) table.weights = Eigen::Map<const Vector>(weights.data(), n);
    return table;
}

inline PointsTable read_points_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    return read_points_csv(in);
}

inline void write_points_csv(const std::string& path, const PointMatrix& points, const std::optional<Labels>& labels,
                             const std::optional<Vector>& weights) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    write_points_csv(out, points, labels, weights);
}

struct TopologySpec {
    CurveTopology topology;
    std::map<Index, Eigen::VectorXd> fixed_positions;
};

/// Parses the topology JSON; node count is one past the largest index seen.
inline TopologySpec parse_topology(const nlohmann::json& doc) {
    auto fail = [](const std::string& what) { throw InputError("topology: " + what); };
    if (!doc.is_object()) fail("document must be an object");
    if (!doc.contains("branches") || !doc["branches"].is_array() || doc["branches"].empty()) {
        fail("'branches' must be a non-empty array");
    }
    std::vector<std::vector<Index>> branches;
    Index max_index = -1;
    for (const auto& b : doc["branches"]) {
        if (!b.is_array()) fail("each branch must be an array of node indices");
        std::vector<Index> branch;
        for (const auto& v : b) {
            if (!v.is_number_integer() || v.get<long long>() < 0) fail("node indices must be nonnegative integers");
            branch.push_back(static_cast<Index>(v.get<long long>()));
            max_index = std::max(max_index, branch.back());
        }
        branches.push_back(std::move(branch));
    }
    std::set<Index> fixed;
    if (doc.contains("fixed")) {
        if (!doc["fixed"].is_array()) fail("'fixed' must be an array");
        for (const auto& v : doc["fixed"]) {
            if (!v.is_number_integer() || v.get<long long>() < 0) fail("fixed indices must be nonnegative integers");
            fixed.insert(static_cast<Index>(v.get<long long>()));
        }
    }
    std::map<Index, Eigen::VectorXd> positions;
    if (doc.contains("fixed_positions")) {
        if (!doc["fixed_positions"].is_object()) fail("'fixed_positions' must be an object");
        for (const auto& [key, value] : doc["fixed_positions"].items()) {
            Index node = 0;
            try {
                std::size_t used = 0;
                node = static_cast<Index>(std::stoll(key, &used));
                if (used != key.size() || node < 0) throw std::invalid_argument(key);
            } catch (const std::exception&) {
                fail("fixed_positions key '" + key + "' is not a node index");
            }
            if (!value.is_array() || value.empty()) fail("fixed position of node " + key + " must be a coordinate array");
            Eigen::VectorXd p(static_cast<Index>(value.size()));
            for (std::size_t c = 0; c < value.size(); ++c) {
                if (!value[c].is_number()) fail("fixed position of node " + key + " must be numeric");
                p[static_cast<Index>(c)] = value[c].get<double>();
            }
            positions[node] = std::move(p);
        }
    }
    for (Index f : fixed) {
        if (!positions.count(f)) fail("fixed node " + std::to_string(f) + " has no position");
    }
    try {
        return {CurveTopology(std::move(branches), std::move(fixed), max_index + 1), std::move(positions)};
    } catch (const std::invalid_argument& e) {
        fail(e.what());
    }
    return {};
}

inline TopologySpec read_topology_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("topology: ") + e.what());
    }
    return parse_topology(doc);
}

}  // namespace rwm::io
