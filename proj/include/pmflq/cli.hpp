#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "pmflq/config.hpp"
#include "pmflq/moments.hpp"
#include "pmflq/montecarlo.hpp"
#include "pmflq/report.hpp"
#include "pmflq/stability.hpp"
#include "pmflq/synthesis.hpp"

namespace pmflq::cli {

struct Options {
    std::string command;
    std::string config;
    std::string policy;
    std::optional<double> tol;
    std::optional<int> grid;
    std::optional<int> paths;
    std::optional<double> dt;
    std::optional<double> horizon_periods;
    std::optional<double> burn_in_periods;
    std::optional<std::uint64_t> seed;
    std::optional<double> phase;
    std::string out;
    std::string format = "json";
    std::string policy_out;
    int workers = 0;
    std::string mode = "exact-mean";
    std::string scheme = "platen";
    int kmax = 20;
    int w2_paths = 1024;
    std::vector<double> x;
};

/// Flag values win over config options, which win over defaults.
struct Resolved {
    double tol = 1e-9;
    int grid = 4096;
    int paths = 4096;
    double dt = 0.0;
    double horizon_periods = 200.0;
    double burn_in_periods = 10.0;
    std::uint64_t seed = 42;
    double phase = 0.0;
};

inline Resolved resolve(const Options& o, const RunOptions& file) {
    Resolved r;
    r.tol = o.tol.value_or(file.tol.value_or(r.tol));
    r.grid = o.grid.value_or(file.grid.value_or(r.grid));
    r.paths = o.paths.value_or(file.paths.value_or(r.paths));
    r.dt = o.dt.value_or(file.dt.value_or(r.dt));
    r.horizon_periods = o.horizon_periods.value_or(file.horizon_periods.value_or(r.horizon_periods));
    r.burn_in_periods = o.burn_in_periods.value_or(file.burn_in_periods.value_or(r.burn_in_periods));
    r.seed = o.seed.value_or(file.seed.value_or(r.seed));
    r.phase = o.phase.value_or(file.phase.value_or(r.phase));
    if (!(r.tol > 0.0)) throw ValidationError("--tol must be positive");
    if (r.grid < 8) throw ValidationError("--grid must be at least 8");
    if (r.burn_in_periods < 0.0 || r.horizon_periods <= r.burn_in_periods) {
        throw ValidationError("need 0 <= burn-in < horizon");
    }
    return r;
}

namespace detail {

inline nlohmann::json to_json(const AssumptionReport& a) {
    return {{"alpha_R", a.alpha_R},       {"alpha_Rhat", a.alpha_Rhat}, {"alpha_QS", a.alpha_QS},
            {"alpha_QShat", a.alpha_QShat}, {"grid_size", a.grid_size}, {"threshold", a.threshold},
            {"passed", a.passed}};
}

inline nlohmann::json to_json(const StabilityCertificate& c) {
    nlohmann::json j = {{"rho_mean", c.rho_mean},
                        {"rho_second", c.rho_second},
                        {"decay_rate_mean", c.decay_rate_mean},
                        {"decay_rate_second", c.decay_rate_second},
                        {"margin", c.margin},
                        {"admissible", c.admissible}};
    if (!c.failure.empty()) j["failure"] = c.failure;
    return j;
}

inline nlohmann::json to_json(const PeriodicMatrixSolution& s, double tol) {
    return {{"sweeps", s.sweeps},           {"periodicity_gap", s.periodicity_gap},
            {"residual_sup", s.residual_sup}, {"min_eig", s.min_eig},
            {"grid", s.steps()},            {"tolerance", tol},
            {"at_zero", pmflq::to_json(s.values.front())}};
}

inline SimulationMode parse_mode(const std::string& m) {
    if (m == "exact-mean") return SimulationMode::exact_mean;
    if (m == "particle") return SimulationMode::particle;
    throw ValidationError("--mode must be exact-mean or particle");
}

inline Scheme parse_scheme(const std::string& s) {
    if (s == "platen") return Scheme::platen_weak2;
    if (s == "euler") return Scheme::euler_maruyama;
    throw ValidationError("--scheme must be platen or euler");
}

inline Vector initial_state(const Options& o, int n) {
    if (o.x.empty()) return Vector::Zero(n);
    if (static_cast<int>(o.x.size()) != n) throw SizeMismatch("--x needs " + std::to_string(n) + " components");
    return Eigen::Map<const Vector>(o.x.data(), n);
}

inline SynthesisOptions synthesis_options(const Resolved& r) {
    SynthesisOptions s;
    s.riccati.tol = r.tol;
    s.riccati.grid = r.grid;
    s.eta.tol = std::max(r.tol, 1e-9);
    s.eta.grid = r.grid;
    return s;
}

struct Context {
    LoadedConfig config;
    Resolved resolved;
    std::optional<FeedbackPolicy> policy;
    std::string digest_text;
};

inline Context load(const Options& o) {
    if (o.config.empty()) throw ValidationError("--config is required");
    Context c;
    c.config = load_config(o.config);
    c.resolved = resolve(o, c.config.options);
    c.policy = c.config.policy;
    c.digest_text = c.config.digest_input;
    if (!o.policy.empty()) {
        c.policy = load_policy(o.policy, c.config.model);
        std::ifstream in(o.policy);
        std::stringstream ss;
        ss << in.rdbuf();
        c.digest_text += "\npolicy:" + ss.str();
    }
    return c;
}

inline void add_prescan_warning(const Context& c, RunReport& r) {
    if (!c.config.prescan.passed) r.warnings.push_back("definiteness pre-scan did not pass at threshold 1e-8");
}

/// Samples of the synthesized objects on a coarse grid for the report.
inline Series solution_series(const PeriodicModel& model, const OptimalSolution& sol, int samples = 64) {
    Series s;
    s.name = "solution";
    s.columns = {"t"};
    const int n = model.n, m = model.m;
    auto names = [&](const std::string& base, int rows, int cols) {
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j)
                s.columns.push_back(base + std::to_string(i + 1) + (cols > 1 ? std::to_string(j + 1) : ""));
    };
    names("P", n, n);
    names("Pi", n, n);
    names("eta", n, 1);
    names("Theta", m, n);
    names("Thetahat", m, n);
    names("v", m, 1);
    for (int k = 0; k <= samples; ++k) {
        const double t = model.tau * k / samples;
        const auto cs = eval_coefficients(model, t);
        const Matrix P = sol.P(t), Pi = sol.Pi(t);
        const Vector eta = sol.eta(t);
        std::vector<double> row{t};
        auto push = [&](const Matrix& a) {
            for (Eigen::Index i = 0; i < a.rows(); ++i)
                for (Eigen::Index j = 0; j < a.cols(); ++j) row.push_back(a(i, j));
        };
        push(P);
        push(Pi);
        push(eta);
        push(gain_theta0(cs, P));
        push(gain_thetahat0(cs, Pi, P));
        push(offset_v0(cs, eta, P));
        s.rows.push_back(std::move(row));
    }
    return s;
}

inline nlohmann::json value_json(const ValueReport& v, double tol) {
    return {{"value", v.value},
            {"tolerance", tol},
            {"components",
             {{"quadratic_penalty", v.components.quadratic_penalty},
              {"sigma_term", v.components.sigma_term},
              {"eta_b_term", v.components.eta_b_term}}}};
}

inline void write_policy_file(const std::string& path, const FeedbackPolicy& p, double tau) {
    std::ofstream f(path);
    if (!f) throw ValidationError("cannot write policy to '" + path + "'");
    write_json(f, policy_to_json(p, tau));
}

inline FeedbackPolicy policy_or_optimal(const Context& c, RunReport& r, std::optional<OptimalSolution>& sol) {
    if (c.policy) return *c.policy;
    r.warnings.push_back("no policy supplied; using the synthesized optimal policy");
    sol = synthesize(c.config.model, synthesis_options(c.resolved));
    return sol->policy;
}

inline SimulationConfig simulation_config(const Options& o, const Resolved& r) {
    SimulationConfig cfg;
    cfg.paths = r.paths;
    cfg.dt = r.dt;
    cfg.seed = r.seed;
    cfg.workers = o.workers;
    cfg.mode = parse_mode(o.mode);
    cfg.scheme = parse_scheme(o.scheme);
    return cfg;
}

inline void cmd_check(const Options&, const Context& c, RunReport& r) {
    r.outputs["assumption"] = to_json(check_assumption_a2(c.config.model, std::max(c.resolved.grid, 2048)));
    if (c.policy) {
        r.outputs["certificate"] = to_json(certify(c.config.model, *c.policy, c.resolved.grid));
    } else {
        r.warnings.push_back("no policy supplied; stability certificate skipped");
    }
}

inline void cmd_synthesize(const Options& o, const Context& c, RunReport& r) {
    const auto& model = c.config.model;
    r.outputs["assumption"] = to_json(check_assumption_a2(model, 2048));
    const auto sol = synthesize(model, synthesis_options(c.resolved));
    r.outputs["P"] = to_json(sol.P, c.resolved.tol);
    r.outputs["Pi"] = to_json(sol.Pi, c.resolved.tol);
    r.outputs["eta"] = {{"periodicity_gap", sol.eta.periodicity_gap},
                        {"residual_sup", sol.eta.residual_sup},
                        {"condition_I_minus_psi", sol.eta.condition_I_minus_psi},
                        {"tolerance", std::max(c.resolved.tol, 1e-9)},
                        {"at_zero", pmflq::to_json(sol.eta.values.front())}};
    r.outputs["value"] = value_json(sol.value, c.resolved.tol);
    r.outputs["policy"] = policy_to_json(sol.policy, model.tau);
    r.series.push_back(solution_series(model, sol));
    Series integrand{"value_integrand", {"t", "integrand"}, {}};
    for (std::size_t i = 0; i < sol.value.times.size(); i += 16) {
        integrand.rows.push_back({sol.value.times[i], sol.value.integrand_samples[i]});
    }
    r.series.push_back(std::move(integrand));
    if (!o.policy_out.empty()) write_policy_file(o.policy_out, sol.policy, model.tau);
}

inline void cmd_evaluate(const Options&, const Context& c, RunReport& r) {
    if (!c.policy) throw MissingPolicy("evaluate needs --policy or a policy in the config");
    const auto& model = c.config.model;
    const auto cert = certify(model, *c.policy, c.resolved.grid);
    r.outputs["certificate"] = to_json(cert);
    require_admissible(cert);
    const MomentPropagator prop(model, *c.policy, c.resolved.grid);
    OrbitOptions oo;
    oo.grid = c.resolved.grid;
    const auto orbit = periodic_moment_orbit(prop, oo);
    const double cost = period_average_cost(model, *c.policy, orbit);
    r.outputs["cost"] = {{"value", cost}, {"tolerance", 1e-6}, {"orbit_gap", orbit.gap}};
    const auto sol = synthesize(model, synthesis_options(c.resolved));
    const auto check = optimality_conditions(*c.policy, sol.policy, orbit);
    r.outputs["optimality"] = {{"gain_condition_sup", check.gain_condition_sup},
                               {"offset_condition_sup", check.offset_condition_sup},
                               {"threshold", 1e-7},
                               {"satisfied", check.satisfied},
                               {"optimal_value", sol.value.value},
                               {"excess_cost", cost - sol.value.value}};
}

inline nlohmann::json cost_json(const CostEstimate& e) {
    return {{"estimate", e.estimate}, {"std_error", e.std_error}, {"batches", e.batches}};
}

inline void cmd_simulate(const Options& o, const Context& c, RunReport& r) {
    const auto& model = c.config.model;
    std::optional<OptimalSolution> sol;
    const auto policy = policy_or_optimal(c, r, sol);
    auto cfg = simulation_config(o, c.resolved);
    cfg.horizon = c.resolved.horizon_periods * model.tau;
    const auto ens = simulate_ensemble(model, policy, initial_state(o, model.n), cfg);
    const auto est = time_average_cost(ens, model, policy, c.resolved.burn_in_periods * model.tau);
    r.outputs["cost"] = cost_json(est);
    r.outputs["config"] = {{"paths", cfg.paths}, {"dt", ens.dt}, {"horizon", cfg.horizon},
                           {"burn_in", c.resolved.burn_in_periods * model.tau}, {"seed", cfg.seed},
                           {"mode", o.mode}, {"scheme", o.scheme}};
    Series means{"period_means", {"t"}, {}};
    for (int i = 1; i <= model.n; ++i) means.columns.push_back("mean" + std::to_string(i));
    for (int i = 1; i <= model.n; ++i) means.columns.push_back("sample_mean" + std::to_string(i));
    for (int k = 0; k <= ens.steps; k += ens.steps_per_period) {
        std::vector<double> row{ens.time(k)};
        const Vector a = ens.mean_at(k), b = ens.sample_mean_at(k);
        row.insert(row.end(), a.data(), a.data() + a.size());
        row.insert(row.end(), b.data(), b.data() + b.size());
        means.rows.push_back(std::move(row));
    }
    r.series.push_back(std::move(means));
}

inline void cmd_measure(const Options& o, const Context& c, RunReport& r) {
    const auto& model = c.config.model;
    std::optional<OptimalSolution> sol;
    const auto policy = policy_or_optimal(c, r, sol);
    auto cfg = simulation_config(o, c.resolved);
    DiagnosticsOptions dopt;
    dopt.w2_paths = o.w2_paths;
    const auto d = periodic_measure_diagnostics(model, policy, initial_state(o, model.n), c.resolved.phase, o.kmax,
                                                cfg, dopt);
    r.outputs["diagnostics"] = {{"phase", d.phase},
                                {"floor", d.floor},
                                {"fit_points", d.fit_points},
                                {"slope", d.fit.slope},
                                {"r_squared", d.fit.r_squared},
                                {"decays", d.decays},
                                {"two_start_k", d.two_start_k},
                                {"two_start_w2", d.two_start_w2},
                                {"two_start_ok", d.two_start_ok},
                                {"w2_paths", d.w2_paths},
                                {"seed", d.seed},
                                {"floor_seed", d.floor_seed},
                                {"second_start_seed", d.second_start_seed},
                                {"sub_seed", d.sub_seed}};
    if (d.fit_points < 2) r.warnings.push_back("fewer than two W2 values above the floor; no decay fit");
    Series w{"w2_consecutive", {"k", "w2"}, {}};
    for (std::size_t i = 0; i < d.k.size(); ++i) w.rows.push_back({static_cast<double>(d.k[i]), d.w2_consecutive[i]});
    r.series.push_back(std::move(w));
}

struct ExampleCheck {
    std::string name;
    double error;
    double tolerance;
};

/// Three-route reproduction of the worked example against V = 17/2.
inline void cmd_example(const Options& o, const Context& c, RunReport& r, bool& passed) {
    const auto& model = c.config.model;
    const auto sol = synthesize(model, synthesis_options(c.resolved));
    double eP = 0.0, ePi = 0.0, eEta = 0.0, eV = 0.0, eTh = 0.0;
    for (int i = 0; i <= sol.P.steps(); ++i) {
        const double t = i * sol.P.step();
        Matrix P(2, 2), Pi(2, 2);
        P << 5.0, std::cos(t), std::cos(t), 5.0;
        Pi << 3.0, std::sin(t), std::sin(t), 3.0;
        Vector eta(2);
        eta << std::cos(t), std::sin(t);
        eP = std::max(eP, sup_norm(sol.P.values[static_cast<std::size_t>(i)] - P));
        ePi = std::max(ePi, sup_norm(sol.Pi.values[static_cast<std::size_t>(i)] - Pi));
        eEta = std::max(eEta, (sol.eta.values[static_cast<std::size_t>(i)] - eta).cwiseAbs().maxCoeff());
        const auto cs = eval_coefficients(model, t);
        const Matrix Ps = sol.P.values[static_cast<std::size_t>(i)];
        eV = std::max(eV, offset_v0(cs, sol.eta.values[static_cast<std::size_t>(i)], Ps).cwiseAbs().maxCoeff());
        eTh = std::max(eTh, sup_norm(gain_theta0(cs, Ps) + Ps));
        eTh = std::max(eTh, sup_norm(gain_thetahat0(cs, sol.Pi.values[static_cast<std::size_t>(i)], Ps) +
                                     sol.Pi.values[static_cast<std::size_t>(i)]));
    }
    const MomentPropagator prop(model, sol.policy, c.resolved.grid);
    OrbitOptions oo;
    oo.grid = c.resolved.grid;
    const auto orbit = periodic_moment_orbit(prop, oo);
    const double moment_cost = period_average_cost(model, sol.policy, orbit);

    auto cfg = simulation_config(o, c.resolved);
    cfg.horizon = c.resolved.horizon_periods * model.tau;
    const auto ens = simulate_ensemble(model, sol.policy, initial_state(o, model.n), cfg);
    const auto mc = time_average_cost(ens, model, sol.policy, c.resolved.burn_in_periods * model.tau);

    const double target = 8.5;
    std::vector<ExampleCheck> checks = {
        {"riccati_P", eP, 1e-6},
        {"riccati_Pi", ePi, 1e-6},
        {"residual_P", sol.P.residual_sup, 1e-7},
        {"residual_Pi", sol.Pi.residual_sup, 1e-7},
        {"eta", eEta, 1e-6},
        {"v0", eV, 1e-6},
        {"gains", eTh, 1e-8},
        {"value_closed_form", std::abs(sol.value.value - target), 1e-8},
        {"value_moment_route", std::abs(moment_cost - target), 1e-6},
        {"value_monte_carlo_relative", std::abs(mc.estimate - target) / target, 0.02},
        {"value_monte_carlo_se", std::abs(mc.estimate - target), 3.0 * mc.std_error},
    };
    passed = true;
    nlohmann::json list = nlohmann::json::array();
    for (const auto& ch : checks) {
        const bool ok = ch.error <= ch.tolerance;
        passed = passed && ok;
        list.push_back({{"name", ch.name}, {"error", ch.error}, {"tolerance", ch.tolerance}, {"pass", ok}});
    }
    r.outputs["checks"] = list;
    r.outputs["value"] = {{"closed_form", sol.value.value},
                          {"moment_route", moment_cost},
                          {"monte_carlo", cost_json(mc)},
                          {"target", target}};
    r.outputs["passed"] = passed;
    r.series.push_back(solution_series(model, sol));
}

inline int exit_code(const Error& e) {
    switch (e.kind()) {
    case ErrorKind::validation: return 2;
    case ErrorKind::numerical: return 3;
    case ErrorKind::no_convergence: return 4;
    }
    return 1;
}

inline void emit(const Options& o, const RunReport& r, std::ostream& out) {
    std::ofstream file;
    std::ostream* os = &out;
    if (!o.out.empty()) {
        file.open(o.out);
        if (!file) throw ValidationError("cannot write '" + o.out + "'");
        os = &file;
    }
    if (o.format == "csv") {
        write_csv(*os, r);
    } else {
        write_json(*os, to_json(r));
    }
}

} // namespace detail

/// Parses argv, runs one subcommand and writes its report. Returns the
/// process exit code: 0 ok, 2 validation, 3 numerical failure (including
/// a failed example summary), 4 no convergence, 1 anything else.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    Options o;
    CLI::App app{"Periodic mean-field LQ control: synthesis, evaluation, simulation and diagnostics"};
    app.require_subcommand(1, 1);
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "config file or builtin name (example-5, scalar-sc1)");
        sub->add_option("--policy", o.policy, "policy JSON file");
        sub->add_option("--tol", o.tol, "solver tolerance (default 1e-9)");
        sub->add_option("--grid", o.grid, "time steps per period (default 4096)");
        sub->add_option("--paths", o.paths, "Monte Carlo paths (default 4096)");
        sub->add_option("--dt", o.dt, "SDE step (default tau/2048)");
        sub->add_option("--horizon-periods", o.horizon_periods, "averaging horizon in periods (default 200)");
        sub->add_option("--burn-in-periods", o.burn_in_periods, "burn-in in periods (default 10)");
        sub->add_option("--seed", o.seed, "random seed (default 42)");
        sub->add_option("--phase", o.phase, "phase r in [0, tau) for measure diagnostics");
        sub->add_option("--out", o.out, "write the report to this file");
        sub->add_option("--format", o.format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
        sub->add_option("--policy-out", o.policy_out, "write the synthesized policy here");
        sub->add_option("--workers", o.workers, "worker threads (0 = hardware)");
        sub->add_option("--mode", o.mode, "exact-mean or particle");
        sub->add_option("--scheme", o.scheme, "platen or euler");
        sub->add_option("--kmax", o.kmax, "periods for measure diagnostics (default 20)");
        sub->add_option("--w2-paths", o.w2_paths, "subsample size per W2 evaluation (default 1024)");
        sub->add_option("--x", o.x, "initial state components")->expected(1, 64);
    };
    const std::pair<const char*, const char*> commands[] = {
        {"check", "definiteness pre-scan and stability certificate of --policy"},
        {"synthesize", "periodic Riccati and offset solves, optimal policy and value"},
        {"evaluate", "moment-route cost of --policy and its optimality conditions"},
        {"simulate", "Monte Carlo time-average cost with batch-means standard error"},
        {"measure", "consecutive-period W2 diagnostics of the simulated laws"},
        {"example", "three-route reproduction of the built-in 2x2 example"},
    };
    for (const auto& [name, help] : commands) {
        add_common(app.add_subcommand(name, help)->callback([&o, name = name] { o.command = name; }));
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << '\n';
        return 2;
    }
    const auto start = std::chrono::steady_clock::now();
    try {
        if (o.command == "example") {
            if (o.config.empty()) o.config = "example-5";
            if (o.config != "example-5") throw ValidationError("example runs only on the example-5 builtin");
        }
        detail::Context c = detail::load(o);
        RunReport r;
        r.command = o.command;
        r.inputs_digest = fnv1a_hex(c.digest_text);
        detail::add_prescan_warning(c, r);
        bool passed = true;
        if (o.command == "check") detail::cmd_check(o, c, r);
        else if (o.command == "synthesize") detail::cmd_synthesize(o, c, r);
        else if (o.command == "evaluate") detail::cmd_evaluate(o, c, r);
        else if (o.command == "simulate") detail::cmd_simulate(o, c, r);
        else if (o.command == "measure") detail::cmd_measure(o, c, r);
        else detail::cmd_example(o, c, r, passed);
        r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        detail::emit(o, r, out);
        return passed ? 0 : 3;
    } catch (const Error& e) {
        err << e.what() << '\n';
        return detail::exit_code(e);
    } catch (const nlohmann::json::exception& e) {
        err << "ParseError: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return 1;
    }
}

} // namespace pmflq::cli
