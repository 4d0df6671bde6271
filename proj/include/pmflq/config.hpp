#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include "json.hpp"

#include "pmflq/builtin_models.hpp"
#include "pmflq/model.hpp"

namespace pmflq {

using Json = nlohmann::json;

/// Run options a config file may carry; command-line flags override them.
struct RunOptions {
    std::optional<double> tol;
    std::optional<int> grid;
    std::optional<int> paths;
    std::optional<double> dt;
    std::optional<double> horizon_periods;
    std::optional<double> burn_in_periods;
    std::optional<std::uint64_t> seed;
    std::optional<double> phase;
};

struct LoadedConfig {
    std::string source;  // builtin name or file path
    PeriodicModel model;
    std::optional<FeedbackPolicy> policy;
    RunOptions options;
    AssumptionReport prescan;
    std::string digest_input;  // canonical text hashed into the report digest
};

namespace detail {

inline std::string line_col(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

inline Json parse_text(const std::string& text, const std::string& origin) {
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw ParseError(origin + ": " + line_col(text, e.byte == 0 ? 0 : e.byte - 1) + ": " + e.what());
    }
}

inline double number_at(const Json& j, const std::string& path) {
    if (!j.is_number()) throw ParseError(path + ": expected a number");
    return j.get<double>();
}

/// Scalar curve: a number, {"const", "harmonics"} or {"table", "grid"}.
inline Curve parse_curve(const Json& j, double tau, const std::string& path) {
    if (j.is_number()) return TrigPolynomial(tau, j.get<double>());
    if (!j.is_object()) throw ParseError(path + ": expected a number or a curve object");
    if (j.contains("table")) {
        const auto& table = j.at("table");
        if (!table.is_array() || table.empty()) throw ParseError(path + ".table: expected a non-empty array");
        std::vector<double> values;
        for (std::size_t i = 0; i < table.size(); ++i) {
            values.push_back(number_at(table[i], path + ".table[" + std::to_string(i) + "]"));
        }
        if (j.contains("grid") && (!j.at("grid").is_number_integer() || j.at("grid").get<long long>() != static_cast<long long>(values.size()))) {
            throw ParseError(path + ".grid: must equal the table length");
        }
        return TabularCurve(tau, std::move(values));
    }
    for (const auto& [key, value] : j.items()) {
        if (key != "const" && key != "harmonics") throw ParseError(path + ": unknown curve field '" + key + "'");
    }
    const double c0 = j.contains("const") ? number_at(j.at("const"), path + ".const") : 0.0;
    std::vector<Harmonic> hs;
    if (j.contains("harmonics")) {
        const auto& arr = j.at("harmonics");
        if (!arr.is_array()) throw ParseError(path + ".harmonics: expected an array");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string hp = path + ".harmonics[" + std::to_string(i) + "]";
            const auto& h = arr[i];
            if (!h.is_object() || !h.contains("k")) throw ParseError(hp + ": expected an object with field k");
            if (!h.at("k").is_number_integer() || h.at("k").get<long long>() < 1) {
                throw ParseError(hp + ".k: expected a positive integer");
            }
            Harmonic hm;
            hm.multiple = h.at("k").get<int>();
            hm.cos_coeff = h.contains("cos") ? number_at(h.at("cos"), hp + ".cos") : 0.0;
            hm.sin_coeff = h.contains("sin") ? number_at(h.at("sin"), hp + ".sin") : 0.0;
            hs.push_back(hm);
        }
    }
    try {
        return TrigPolynomial(tau, c0, std::move(hs));
    } catch (const ValidationError& e) {
        throw ParseError(path + ": " + e.what());
    }
}

/// Matrix curve: nested rows of curves, a flat array for a column, or a
/// matrix-level table {"table": [M_0, ..., M_{G-1}], "grid": G}.
inline MatrixCurve parse_matrix_curve(const Json& j, double tau, int rows, int cols, const std::string& path) {
    if (j.is_object() && j.contains("table") && j.at("table").is_array() && !j.at("table").empty() &&
        j.at("table")[0].is_array()) {
        const auto& table = j.at("table");
        if (j.contains("grid") && (!j.at("grid").is_number_integer() || j.at("grid").get<long long>() != static_cast<long long>(table.size()))) {
            throw ParseError(path + ".grid: must equal the table length");
        }
        std::vector<Matrix> mats;
        for (std::size_t k = 0; k < table.size(); ++k) {
            const std::string tp = path + ".table[" + std::to_string(k) + "]";
            const MatrixCurve slice = parse_matrix_curve(table[k], tau, rows, cols, tp);
            mats.push_back(slice(0.0));
        }
        return MatrixCurve::tabular(tau, mats);
    }
    if (!j.is_array()) {
        if (rows == 1 && cols == 1) return MatrixCurve(1, 1, {parse_curve(j, tau, path)});
        throw ParseError(path + ": expected a " + std::to_string(rows) + "x" + std::to_string(cols) + " array");
    }
    std::vector<Curve> entries;
    const bool flat = cols == 1 && j.size() == static_cast<std::size_t>(rows) &&
                      std::none_of(j.begin(), j.end(), [](const Json& e) { return e.is_array(); });
    if (flat) {
        for (int i = 0; i < rows; ++i) entries.push_back(parse_curve(j[static_cast<std::size_t>(i)], tau, path + "[" + std::to_string(i) + "]"));
        return MatrixCurve(rows, 1, std::move(entries));
    }
    if (j.size() != static_cast<std::size_t>(rows)) {
        throw ParseError(path + ": expected " + std::to_string(rows) + " rows, got " + std::to_string(j.size()));
    }
    for (int i = 0; i < rows; ++i) {
        const auto& row = j[static_cast<std::size_t>(i)];
        const std::string rp = path + "[" + std::to_string(i) + "]";
        if (!row.is_array() || row.size() != static_cast<std::size_t>(cols)) {
            throw ParseError(rp + ": expected a row of " + std::to_string(cols) + " entries");
        }
        for (int c = 0; c < cols; ++c) entries.push_back(parse_curve(row[static_cast<std::size_t>(c)], tau, rp + "[" + std::to_string(c) + "]"));
    }
    return MatrixCurve(rows, cols, std::move(entries));
}

inline int int_field(const Json& j, const char* key) {
    if (!j.contains(key) || !j.at(key).is_number_integer() || j.at(key).get<long long>() < 1) {
        throw ParseError(std::string(key) + ": expected a positive integer");
    }
    return j.at(key).get<int>();
}

inline void read_options(const Json& j, RunOptions& o) {
    if (!j.is_object()) throw ParseError("options: expected an object");
    auto num = [&](const char* k) -> std::optional<double> {
        if (!j.contains(k)) return std::nullopt;
        return number_at(j.at(k), std::string("options.") + k);
    };
    auto integer = [&](const char* k) -> std::optional<long long> {
        if (!j.contains(k)) return std::nullopt;
        if (!j.at(k).is_number_integer()) throw ParseError(std::string("options.") + k + ": expected an integer");
        return j.at(k).get<long long>();
    };
    o.tol = num("tol");
    if (auto g = integer("grid")) o.grid = static_cast<int>(*g);
    if (auto p = integer("paths")) o.paths = static_cast<int>(*p);
    o.dt = num("dt");
    o.horizon_periods = num("horizon_periods");
    o.burn_in_periods = num("burn_in_periods");
    if (auto s = integer("seed")) o.seed = static_cast<std::uint64_t>(*s);
    o.phase = num("phase");
}

} // namespace detail

inline FeedbackPolicy policy_from_json(const Json& j, const PeriodicModel& model, const std::string& origin = "policy") {
    if (!j.is_object()) throw ParseError(origin + ": expected an object");
    const Json& body = j.contains("policy") ? j.at("policy") : j;
    if (body.contains("tau") && std::abs(detail::number_at(body.at("tau"), origin + ".tau") - model.tau) > 1e-12 * model.tau) {
        throw ValidationError(origin + ": policy period differs from the model period");
    }
    FeedbackPolicy p = FeedbackPolicy::zeros(model.n, model.m, model.tau);
    bool any = false;
    for (const char* key : {"Theta", "Thetabar", "v"}) {
        if (!body.contains(key)) continue;
        any = true;
        const int cols = std::string(key) == "v" ? 1 : model.n;
        auto curve = detail::parse_matrix_curve(body.at(key), model.tau, model.m, cols, origin + "." + key);
        if (std::string(key) == "Theta") p.Theta = std::move(curve);
        else if (std::string(key) == "Thetabar") p.Thetabar = std::move(curve);
        else p.v = std::move(curve);
    }
    if (!any) throw ParseError(origin + ": policy needs at least one of Theta, Thetabar, v");
    check_policy_shape(model, p);
    return p;
}

/// Model from the config schema; absent coefficients are zero.
inline PeriodicModel model_from_json(const Json& j) {
    if (!j.is_object()) throw ParseError("config: expected an object");
    if (!j.contains("tau")) throw ParseError("tau: missing");
    const double tau = detail::number_at(j.at("tau"), "tau");
    if (!(tau > 0.0)) throw ValidationError("tau must be positive");
    const int n = detail::int_field(j, "n");
    const int m = detail::int_field(j, "m");
    auto model = PeriodicModel::zeros(n, m, tau);
    if (j.contains("coefficients")) {
        const auto& coeffs = j.at("coefficients");
        if (!coeffs.is_object()) throw ParseError("coefficients: expected an object");
        auto named = model.named_curves();
        for (const auto& [key, value] : coeffs.items()) {
            auto it = std::find_if(named.begin(), named.end(), [&](const auto& e) { return e.first == key; });
            if (it == named.end()) throw ParseError("coefficients." + key + ": unknown coefficient");
            const auto [r, c] = model.expected_shape(key);
            *it->second = detail::parse_matrix_curve(value, tau, r, c, "coefficients." + key);
        }
    }
    return model;
}

/// Resolves a builtin name or reads a JSON file. The model is validated
/// (shapes, periods, symmetry) and pre-scanned for the definiteness
/// conditions on a coarse grid; a singular R throws.
inline LoadedConfig load_config(const std::string& path_or_name) {
    LoadedConfig cfg;
    cfg.source = path_or_name;
    if (auto builtin = builtin_model(path_or_name)) {
        cfg.model = validated(*builtin);
        cfg.prescan = check_assumption_a2(cfg.model, 512);
        cfg.digest_input = "builtin:" + path_or_name;
        return cfg;
    }
    std::ifstream in(path_or_name);
    if (!in) throw ParseError("cannot open config '" + path_or_name + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    const Json j = detail::parse_text(text, path_or_name);
    if (j.is_object() && j.contains("builtin")) {
        const std::string name = j.at("builtin").get<std::string>();
        auto builtin = builtin_model(name);
        if (!builtin) throw ValidationError("unknown builtin model '" + name + "'");
        cfg.model = *builtin;
    } else {
        cfg.model = model_from_json(j);
    }
    cfg.model = validated(cfg.model);
    cfg.prescan = check_assumption_a2(cfg.model, 512);
    if (j.contains("policy")) cfg.policy = policy_from_json(j.at("policy"), cfg.model, path_or_name + ": policy");
    if (j.contains("options")) detail::read_options(j.at("options"), cfg.options);
    cfg.digest_input = j.dump();
    return cfg;
}

inline FeedbackPolicy load_policy(const std::string& path, const PeriodicModel& model) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open policy '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return policy_from_json(detail::parse_text(ss.str(), path), model, path);
}

inline Json curve_to_json(const Curve& c) {
    if (const auto* tp = std::get_if<TrigPolynomial>(&c)) {
        Json hs = Json::array();
        for (const auto& h : tp->harmonics()) hs.push_back({{"k", h.multiple}, {"cos", h.cos_coeff}, {"sin", h.sin_coeff}});
        return {{"const", tp->constant_term()}, {"harmonics", hs}};
    }
    const auto& tab = std::get<TabularCurve>(c);
    return {{"table", tab.values()}, {"grid", tab.values().size()}};
}

inline Json matrix_curve_to_json(const MatrixCurve& m) {
    Json rows = Json::array();
    for (int i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (int j = 0; j < m.cols(); ++j) row.push_back(curve_to_json(m.entry(i, j)));
        rows.push_back(row);
    }
    return rows;
}

inline Json policy_to_json(const FeedbackPolicy& p, double tau) {
    return {{"tau", tau},
            {"Theta", matrix_curve_to_json(p.Theta)},
            {"Thetabar", matrix_curve_to_json(p.Thetabar)},
            {"v", matrix_curve_to_json(p.v)}};
}

} // namespace pmflq
