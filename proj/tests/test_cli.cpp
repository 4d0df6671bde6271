#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "pmflq/cli.hpp"

using namespace pmflq;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {
const std::string kConfigDir = PMFLQ_CONFIG_DIR;

struct Outcome {
    int code = 0;
    std::string out, err;
    nlohmann::json report() const { return nlohmann::json::parse(out); }
};

Outcome run(std::vector<std::string> args) {
    args.insert(args.begin(), "pmflq");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    Outcome o;
    o.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    o.out = out.str();
    o.err = err.str();
    return o;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("pmflq_cli_" + name)).string();
}

std::string temp_file(const std::string& name, const std::string& text) {
    const auto path = temp_path(name);
    std::ofstream(path) << text;
    return path;
}

std::string dt_string(int per_period) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", 2 * std::numbers::pi / per_period);
    return buf;
}

const Outcome& synthesized() {
    static const Outcome o = run({"synthesize", "--config", "example-5", "--policy-out", temp_path("optimal.json")});
    return o;
}
} // namespace

TEST_CASE("synthesize reports the worked-example solution", "[cli]") {
    const auto& o = synthesized();
    REQUIRE(o.code == 0);
    const auto j = o.report();
    CHECK(j.at("command") == "synthesize");
    CHECK_THAT(j.at("outputs").at("value").at("value").get<double>(), WithinAbs(8.5, 1e-8));
    CHECK(j.at("outputs").at("value").at("tolerance").get<double>() == 1e-9);
    CHECK(j.at("warnings").empty());
    CHECK(j.contains("wall_time"));

    const auto& sol = j.at("series").at("solution");
    const auto& cols = sol.at("columns");
    auto col = [&](const std::string& name) {
        return static_cast<std::size_t>(std::find(cols.begin(), cols.end(), name) - cols.begin());
    };
    for (const auto& row : sol.at("rows")) {
        const double t = row[0].get<double>();
        CHECK_THAT(row[col("P12")].get<double>(), WithinAbs(std::cos(t), 1e-6));
        CHECK_THAT(row[col("Pi12")].get<double>(), WithinAbs(std::sin(t), 1e-6));
        CHECK_THAT(row[col("Theta11")].get<double>(), WithinAbs(-5.0, 1e-6));
        CHECK_THAT(row[col("Thetahat21")].get<double>(), WithinAbs(-std::sin(t), 1e-6));
        CHECK_THAT(row[col("eta2")].get<double>(), WithinAbs(std::sin(t), 1e-6));
        CHECK(std::abs(row[col("v1")].get<double>()) <= 1e-6);
    }
    CHECK(std::filesystem::exists(temp_path("optimal.json")));
}

TEST_CASE("evaluate on the synthesized policy returns the value", "[cli]") {
    REQUIRE(synthesized().code == 0);
    const double value = synthesized().report().at("outputs").at("value").at("value").get<double>();
    const auto o = run({"evaluate", "--config", "example-5", "--policy", temp_path("optimal.json")});
    REQUIRE(o.code == 0);
    const auto j = o.report();
    CHECK_THAT(j.at("outputs").at("cost").at("value").get<double>(), WithinAbs(value, 1e-8));
    CHECK(j.at("outputs").at("optimality").at("satisfied") == true);
    CHECK(j.at("outputs").at("certificate").at("admissible") == true);
}

TEST_CASE("evaluate detects a perturbed policy", "[cli]") {
    const auto o = run({"evaluate", "--config", "example-5", "--policy", kConfigDir + "/perturbed.json"});
    REQUIRE(o.code == 0);
    const auto j = o.report();
    CHECK(j.at("outputs").at("cost").at("value").get<double>() > 8.5);
    CHECK(j.at("outputs").at("optimality").at("satisfied") == false);
    CHECK(j.at("outputs").at("optimality").at("offset_condition_sup").get<double>() > 1e-4);
    CHECK(j.at("outputs").at("optimality").at("excess_cost").get<double>() > 0.0);
}

TEST_CASE("evaluate needs a policy", "[cli]") {
    const auto o = run({"evaluate", "--config", "example-5"});
    CHECK(o.code == 2);
    CHECK_THAT(o.err, ContainsSubstring("policy"));
}

TEST_CASE("check reports the assumption and a certificate", "[cli]") {
    const auto bare = run({"check", "--config", "example-5"});
    REQUIRE(bare.code == 0);
    const auto j = bare.report();
    CHECK(j.at("outputs").at("assumption").at("passed") == true);
    CHECK_FALSE(j.at("outputs").contains("certificate"));
    CHECK(j.at("warnings").size() == 1);

    const auto with = run({"check", "--config", "example-5", "--policy", kConfigDir + "/perturbed.json"});
    REQUIRE(with.code == 0);
    CHECK(with.report().at("outputs").at("certificate").at("admissible") == true);
}

TEST_CASE("simulate on the scalar model", "[cli]") {
    const auto o = run({"simulate", "--config", kConfigDir + "/scalar-sc1.json"});
    REQUIRE(o.code == 0);
    const auto j = o.report();
    const auto& cost = j.at("outputs").at("cost");
    CHECK(cost.at("batches") == 95);
    CHECK(std::abs(cost.at("estimate").get<double>() - (std::sqrt(2.0) - 0.5)) <= 3 * cost.at("std_error").get<double>());
    CHECK(j.at("outputs").at("config").at("paths") == 1024);
    CHECK(j.at("outputs").at("config").at("seed") == 7);
    CHECK(j.at("warnings").size() == 1);
    CHECK(j.at("series").contains("period_means"));
}

TEST_CASE("reports are reproducible", "[cli]") {
    const std::vector<std::string> args{"simulate", "--config", "example-5", "--paths", "64", "--dt", dt_string(128),
                                        "--horizon-periods", "22", "--burn-in-periods", "2", "--x", "1", "1"};
    auto a = run(args).report();
    auto b = run(args).report();
    a.erase("wall_time");
    b.erase("wall_time");
    CHECK(a == b);
    auto other = args;
    other.insert(other.end(), {"--seed", "43"});
    auto c = run(other).report();
    c.erase("wall_time");
    CHECK(a.at("outputs") != c.at("outputs"));
    CHECK(a.at("inputs_digest") == c.at("inputs_digest"));
}

TEST_CASE("measure reports the W2 sequence", "[cli]") {
    const auto o = run({"measure", "--config", "example-5", "--paths", "128", "--dt", dt_string(128), "--kmax", "4",
                        "--w2-paths", "64", "--x", "5", "5", "--format", "csv"});
    REQUIRE(o.code == 0);
    CHECK(o.out.rfind("# w2_consecutive\nk,w2\n0,", 0) == 0);
    std::istringstream in(o.out);
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) ++lines;
    CHECK(lines == 6);
}

TEST_CASE("example command summary", "[cli]") {
    const auto o = run({"example", "--paths", "512", "--dt", dt_string(512), "--horizon-periods", "60",
                        "--burn-in-periods", "5", "--x", "1", "1"});
    const auto j = o.report();
    for (const auto& c : j.at("outputs").at("checks")) {
        INFO(c.at("name").get<std::string>() << " error " << c.at("error").get<double>());
        CHECK(c.at("pass") == true);
    }
    CHECK(j.at("outputs").at("passed") == true);
    CHECK(o.code == 0);

    // A coarse grid cannot meet the Riccati residual bound.
    const auto coarse = run({"example", "--grid", "64", "--paths", "16", "--dt", dt_string(64), "--horizon-periods", "21",
                             "--burn-in-periods", "1"});
    CHECK(coarse.code == 3);
    CHECK(coarse.out.empty());
    CHECK_THAT(coarse.err, ContainsSubstring("ResidualTooLarge"));

    CHECK(run({"example", "--config", "scalar-sc1"}).code == 2);
}

TEST_CASE("exit codes", "[cli]") {
    CHECK(run({}).code == 2);
    CHECK(run({"frobnicate"}).code == 2);
    CHECK(run({"synthesize", "--config", "example-5", "--bogus"}).code == 2);
    CHECK(run({"synthesize", "--config", "/nonexistent.json"}).code == 2);
    CHECK(run({"synthesize", "--config", "example-5", "--tol", "-1"}).code == 2);
    CHECK(run({"simulate", "--config", "example-5", "--horizon-periods", "5", "--burn-in-periods", "10"}).code == 2);
    CHECK(run({"simulate", "--config", "example-5", "--x", "1", "2", "3"}).code == 2);

    const auto bad = temp_file("bad.json", "{\n  \"tau\": 1,\n  \"n\": }");
    const auto parse = run({"check", "--config", bad});
    CHECK(parse.code == 2);
    CHECK_THAT(parse.err, ContainsSubstring("line 3"));

    // Without any control channel P grows by tau every sweep.
    const auto drifting = temp_file("drift.json", R"({"tau": 1, "n": 1, "m": 1, "coefficients": {"Q": 1, "R": 1}})");
    CHECK(run({"synthesize", "--config", drifting, "--grid", "64"}).code == 4);

    CHECK(cli::detail::exit_code(SingularAnchor("x")) == 3);
    CHECK(cli::detail::exit_code(NoConvergence("x")) == 4);
    CHECK(cli::detail::exit_code(NotAdmissible("x")) == 2);
    CHECK(run({"--help"}).code == 0);
}

TEST_CASE("csv and file output", "[cli]") {
    const auto path = temp_path("report.json");
    std::filesystem::remove(path);
    const auto o = run({"synthesize", "--config", kConfigDir + "/scalar-sc1.json", "--out", path});
    REQUIRE(o.code == 0);
    CHECK(o.out.empty());
    std::ifstream in(path);
    const auto j = nlohmann::json::parse(in);
    CHECK_THAT(j.at("outputs").at("value").at("value").get<double>(), WithinAbs(std::sqrt(2.0) - 0.5, 1e-8));

    const auto csv = run({"synthesize", "--config", "scalar-sc1", "--format", "csv"});
    REQUIRE(csv.code == 0);
    CHECK(csv.out.rfind("# solution\nt,P1,Pi1,eta1,Theta1,Thetahat1,v1\n0,0.4142135623", 0) == 0);
    CHECK_THAT(csv.out, ContainsSubstring("# value_integrand"));
}
