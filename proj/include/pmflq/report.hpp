#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "pmflq/numerics.hpp"

namespace pmflq {

/// Column-oriented time series; the CSV output flattens these.
struct Series {
    std::string name;
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
};

struct RunReport {
    std::string command;
    std::string inputs_digest;
    nlohmann::json outputs = nlohmann::json::object();
    std::vector<Series> series;
    std::vector<std::string> warnings;
    double wall_time = 0.0;
};

inline std::string fnv1a_hex(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string format_number(double x) {
    if (std::isnan(x)) return "\"nan\"";
    if (std::isinf(x)) return x > 0 ? "\"inf\"" : "\"-inf\"";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

namespace detail {

inline void write_json(std::ostream& os, const nlohmann::json& j, int indent) {
    const std::string pad(static_cast<std::size_t>(indent + 2), ' ');
    const std::string close(static_cast<std::size_t>(indent), ' ');
    switch (j.type()) {
    case nlohmann::json::value_t::object: {
        if (j.empty()) {
            os << "{}";
            return;
        }
        os << "{\n";
        bool first = true;
        for (const auto& [key, value] : j.items()) {
            if (!first) os << ",\n";
            first = false;
            os << pad << nlohmann::json(key).dump() << ": ";
            write_json(os, value, indent + 2);
        }
        os << '\n' << close << '}';
        return;
    }
    case nlohmann::json::value_t::array: {
        if (j.empty()) {
            os << "[]";
            return;
        }
        // Arrays of scalars stay on one line.
        const bool flat = std::none_of(j.begin(), j.end(), [](const auto& e) { return e.is_structured(); });
        os << '[';
        bool first = true;
        for (const auto& e : j) {
            if (!first) os << (flat ? ", " : ",");
            first = false;
            if (!flat) os << '\n' << pad;
            write_json(os, e, indent + 2);
        }
        if (!flat) os << '\n' << close;
        os << ']';
        return;
    }
    case nlohmann::json::value_t::number_float:
        os << format_number(j.get<double>());
        return;
    default:
        os << j.dump();
    }
}

} // namespace detail

/// Serializes every float with 17 significant digits.
inline void write_json(std::ostream& os, const nlohmann::json& j) {
    detail::write_json(os, j, 0);
    os << '\n';
}

inline nlohmann::json to_json(const Series& s) {
    return {{"columns", s.columns}, {"rows", s.rows}};
}

inline nlohmann::json to_json(const RunReport& r, bool include_wall_time = true) {
    nlohmann::json j = {{"command", r.command}, {"inputs_digest", r.inputs_digest}, {"outputs", r.outputs},
                        {"warnings", r.warnings}};
    if (!r.series.empty()) {
        nlohmann::json s = nlohmann::json::object();
        for (const auto& series : r.series) s[series.name] = to_json(series);
        j["series"] = s;
    }
    if (include_wall_time) j["wall_time"] = r.wall_time;
    return j;
}

inline nlohmann::json to_json(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
        rows.push_back(row);
    }
    return rows;
}

inline nlohmann::json to_json(const Vector& v) {
    nlohmann::json out = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

/// One block per series: "# name", a header line, then the rows.
inline void write_csv(std::ostream& os, const RunReport& r) {
    bool first = true;
    for (const auto& s : r.series) {
        if (!first) os << '\n';
        first = false;
        os << "# " << s.name << '\n';
        for (std::size_t c = 0; c < s.columns.size(); ++c) os << (c ? "," : "") << s.columns[c];
        os << '\n';
        for (const auto& row : s.rows) {
            for (std::size_t c = 0; c < row.size(); ++c) {
                const std::string v = format_number(row[c]);
                os << (c ? "," : "") << (v.front() == '"' ? v.substr(1, v.size() - 2) : v);
            }
            os << '\n';
        }
    }
}

} // namespace pmflq
