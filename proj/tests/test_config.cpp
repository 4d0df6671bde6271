#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "pmflq/builtin_models.hpp"
#include "pmflq/config.hpp"
#include "pmflq/report.hpp"

using namespace pmflq;
using Catch::Matchers::ContainsSubstring;

namespace {
const std::string kConfigDir = PMFLQ_CONFIG_DIR;

std::string temp_file(const std::string& name, const std::string& text) {
    const auto path = std::filesystem::temp_directory_path() / ("pmflq_test_" + name);
    std::ofstream(path) << text;
    return path.string();
}

double curve_gap(const PeriodicModel& a, const PeriodicModel& b) {
    double gap = 0.0;
    const auto na = a.named_curves();
    const auto nb = b.named_curves();
    for (std::size_t i = 0; i < na.size(); ++i) {
        for (int k = 0; k < 97; ++k) {
            const double t = a.tau * k / 97.0 + 0.013;
            gap = std::max(gap, sup_norm((*na[i].second)(t) - (*nb[i].second)(t)));
        }
    }
    return gap;
}

std::string parse_error_message(const std::string& text) {
    try {
        load_config(temp_file("bad.json", text));
    } catch (const ParseError& e) {
        return e.what();
    }
    return "";
}
} // namespace

TEST_CASE("builtin names resolve without a file", "[config]") {
    const auto ex = load_config("example-5");
    CHECK(ex.model.n == 2);
    CHECK(ex.model.m == 2);
    CHECK(ex.model.tau == 2 * std::numbers::pi);
    CHECK(ex.prescan.passed);
    CHECK_FALSE(ex.policy);
    CHECK(ex.source == "example-5");

    const auto sc1 = load_config("scalar-sc1");
    CHECK(sc1.model.n == 1);
    CHECK(sc1.model.tau == 1.0);
    CHECK(sc1.model.A(0.4)(0, 0) == -1.0);
    CHECK(sc1.model.sigma(0.4)(0, 0) == 1.0);

    const auto hom = load_config("example-5-homogeneous");
    CHECK(hom.model.b(1.0).norm() == 0.0);
    CHECK(hom.model.q(1.0).norm() == 0.0);
}

TEST_CASE("the JSON worked example matches the builtin", "[config]") {
    const auto file = load_config(kConfigDir + "/example-5.json");
    CHECK(curve_gap(file.model, load_config("example-5").model) <= 1e-13);
    CHECK(file.prescan.passed);
    CHECK(file.digest_input != "builtin:example-5");
}

TEST_CASE("config options are read", "[config]") {
    const auto sc1 = load_config(kConfigDir + "/scalar-sc1.json");
    CHECK(curve_gap(sc1.model, scalar_sc1_model()) == 0.0);
    CHECK(sc1.options.grid == 1024);
    CHECK(sc1.options.paths == 1024);
    CHECK(sc1.options.seed == 7u);
    CHECK(sc1.options.dt == 1.0 / 256);
    CHECK(sc1.options.horizon_periods == 100.0);
    CHECK_FALSE(sc1.options.tol);
}

TEST_CASE("config referring to a builtin with an embedded policy", "[config]") {
    const auto path = temp_file("embedded.json", R"({
  "builtin": "scalar-sc1",
  "policy": {"Theta": -0.41421356237309503, "v": [-0.29289321881345254]},
  "options": {"tol": 1e-10}
})");
    const auto cfg = load_config(path);
    REQUIRE(cfg.policy);
    CHECK(cfg.policy->Theta(0.3)(0, 0) == -0.41421356237309503);
    CHECK(cfg.policy->Thetabar(0.3)(0, 0) == 0.0);
    CHECK(cfg.policy->v(0.3)(0, 0) == -0.29289321881345254);
    CHECK(cfg.options.tol == 1e-10);

    CHECK_THROWS_AS(load_config(temp_file("unknown.json", R"({"builtin": "nope"})")), ValidationError);
}

TEST_CASE("malformed JSON reports line and column", "[config]") {
    const std::string msg = parse_error_message("{\n  \"tau\": 1,\n  \"n\": 1,,\n}");
    CHECK_THAT(msg, ContainsSubstring("line 3"));
    CHECK_THAT(msg, ContainsSubstring("column"));
    CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ParseError);
}

TEST_CASE("schema errors name the offending field", "[config]") {
    CHECK_THAT(parse_error_message(R"({"tau": 1, "n": 1, "m": 1, "coefficients": {"Z": 1}})"),
               ContainsSubstring("coefficients.Z"));
    CHECK_THAT(parse_error_message(R"({"tau": 1, "n": 2, "m": 1, "coefficients": {"A": [[1, 0]]}})"),
               ContainsSubstring("coefficients.A"));
    CHECK_THAT(parse_error_message(R"({"tau": 1, "n": 1, "m": 1, "coefficients": {"A": {"const": 1, "bogus": 2}}})"),
               ContainsSubstring("bogus"));
    CHECK_THAT(parse_error_message(R"({"tau": 1, "n": 1, "m": 1, "coefficients": {"A": {"harmonics": [{"k": 0}]}}})"),
               ContainsSubstring("harmonics[0].k"));
    CHECK_THAT(parse_error_message(R"({"tau": 1, "n": 1, "m": 1, "coefficients": {"A": {"table": [1, 2], "grid": 3}}})"),
               ContainsSubstring("grid"));
    CHECK_THAT(parse_error_message(R"({"tau": 1, "m": 1})"), ContainsSubstring("n"));
    CHECK_THAT(parse_error_message(R"({"tau": "one", "n": 1, "m": 1})"), ContainsSubstring("tau"));
}

TEST_CASE("asymmetric weights are rejected", "[config]") {
    const auto path = temp_file("asym.json", R"({
  "tau": 1, "n": 2, "m": 1,
  "coefficients": {"Q": [[1, 0.1], [0, 1]], "R": 1}
})");
    CHECK_THROWS_AS(load_config(path), ValidationError);
    const auto tiny = temp_file("tiny.json", R"({
  "tau": 1, "n": 2, "m": 1,
  "coefficients": {"Q": [[1, 1e-14], [0, 1]], "R": 1}
})");
    CHECK_NOTHROW(load_config(tiny));
}

TEST_CASE("tabular curves", "[config]") {
    const auto path = temp_file("table.json", R"({
  "tau": 2, "n": 1, "m": 1,
  "coefficients": {"A": {"table": [-1, -2, -3, -4], "grid": 4}, "R": 1}
})");
    const auto cfg = load_config(path);
    CHECK(cfg.model.A(0.0)(0, 0) == -1.0);
    CHECK(cfg.model.A(0.6)(0, 0) == -2.0);
    CHECK(cfg.model.A(1.9)(0, 0) == -4.0);
    CHECK(cfg.model.A(2.1)(0, 0) == -1.0);
}

TEST_CASE("policy files", "[config]") {
    const auto model = load_config("example-5").model;
    const auto p = load_policy(kConfigDir + "/perturbed.json", model);
    for (double t : {0.0, 1.0, 4.0}) {
        Matrix theta(2, 2), bar(2, 2);
        theta << -5, -std::cos(t), -std::cos(t), -5;
        const double d = std::cos(t) - std::sin(t);
        bar << 2.1, d, d, 2.1;
        CHECK(sup_norm(p.Theta(t) - theta) <= 1e-15);
        CHECK(sup_norm(p.Thetabar(t) - bar) <= 1e-15);
        CHECK(p.v(t).norm() == 0.0);
    }
    CHECK_THROWS_AS(load_policy(temp_file("p_tau.json", R"({"tau": 3, "v": [0, 0]})"), model), ValidationError);
    CHECK_THROWS_AS(load_policy(temp_file("p_none.json", R"({"tau": 6.283185307179586})"), model), ParseError);
    CHECK_THROWS_AS(load_policy(temp_file("p_shape.json", R"({"Theta": [[1, 2, 3], [4, 5, 6]]})"), model), ParseError);
}

TEST_CASE("policy JSON round trip", "[config]") {
    const double tau = 2.5;
    auto model = PeriodicModel::zeros(2, 1, tau);
    FeedbackPolicy p = FeedbackPolicy::zeros(2, 1, tau);
    Matrix c(1, 2), a(1, 2), b(1, 2);
    c << 0.3, -1.25;
    a << 0.1, 0.0;
    b << 0.0, 2.0 / 3.0;
    p.Theta = MatrixCurve::trig(tau, c, {{1, a, b}, {4, b, a}});
    p.Thetabar = MatrixCurve::tabular(tau, {c, a, b});
    p.v = MatrixCurve::constant(Matrix::Constant(1, 1, 1e-17), tau);
    std::ostringstream os;
    write_json(os, policy_to_json(p, tau));
    const auto back = policy_from_json(Json::parse(os.str()), model);
    for (int k = 0; k < 50; ++k) {
        const double t = tau * k / 50.0 + 0.01;
        CHECK(sup_norm(back.Theta(t) - p.Theta(t)) == 0.0);
        CHECK(sup_norm(back.Thetabar(t) - p.Thetabar(t)) == 0.0);
        CHECK(sup_norm(back.v(t) - p.v(t)) == 0.0);
    }
}

TEST_CASE("report serialization", "[config]") {
    CHECK(fnv1a_hex("") == "cbf29ce484222325");
    CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
    CHECK(format_number(0.1) == "0.10000000000000001");
    CHECK(format_number(std::nan("")) == "\"nan\"");
    CHECK(format_number(-INFINITY) == "\"-inf\"");

    RunReport r;
    r.command = "synthesize";
    r.inputs_digest = fnv1a_hex("x");
    r.outputs["value"] = {{"value", 8.5}, {"tolerance", 1e-9}};
    r.series.push_back({"s", {"t", "y"}, {{0.0, 1.0 / 3.0}, {1.0, std::nan("")}}});
    r.warnings.push_back("w");
    r.wall_time = 1.5;
    std::ostringstream os;
    write_json(os, to_json(r));
    const auto j = Json::parse(os.str());
    CHECK(j.at("outputs").at("value").at("value") == 8.5);
    CHECK(j.at("series").at("s").at("rows")[0][1].get<double>() == 1.0 / 3.0);
    CHECK(j.at("wall_time") == 1.5);
    CHECK_FALSE(to_json(r, false).contains("wall_time"));

    std::ostringstream csv;
    write_csv(csv, r);
    CHECK(csv.str() == "# s\nt,y\n0,0.33333333333333331\n1,nan\n");
}
