#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "pmflq/affine.hpp"
#include "pmflq/builtin_models.hpp"
#include "pmflq/riccati.hpp"

using namespace pmflq;
using Catch::Matchers::WithinAbs;

namespace {
const double kRoot2 = std::sqrt(2.0);

struct Solved {
    PeriodicModel model;
    PeriodicMatrixSolution P, Pi;
    PeriodicVectorSolution eta;
};

Solved solve(const PeriodicModel& m) {
    Solved s;
    s.model = validated(m);
    s.P = solve_periodic_riccati_P(s.model);
    s.Pi = solve_periodic_riccati_Pi(s.model, s.P);
    s.eta = solve_periodic_eta(s.model, s.Pi, s.P);
    return s;
}

const Solved& example() {
    static const Solved s = solve(example5_model());
    return s;
}

const Solved& homogeneous() {
    static const Solved s = solve(without_inhomogeneity(example5_model()));
    return s;
}

const Solved& sc1() {
    static const Solved s = solve(scalar_sc1_model());
    return s;
}

Vector eta_exact(double t) {
    Vector v(2);
    v << std::cos(t), std::sin(t);
    return v;
}

PeriodicMatrixSolution constant_solution(const Matrix& value, double tau, int steps = 8) {
    PeriodicMatrixSolution s;
    s.tau = tau;
    s.values.assign(static_cast<std::size_t>(steps) + 1, value);
    s.derivatives.assign(s.values.size(), Matrix::Zero(value.rows(), value.cols()));
    return s;
}
} // namespace

TEST_CASE("closed-loop generator", "[affine]") {
    const auto& e = example();
    // Ahat - Pi with the closed form of Pi: [[-4, 0], [-sin t, -4]].
    for (double t : {0.0, 0.8, 2.4, 4.0}) {
        Matrix expected(2, 2);
        expected << -4, 0, -std::sin(t), -4;
        CHECK(sup_norm(closed_loop_generator(e.model, e.Pi, e.P, t) - expected) <= 1e-8);
        const auto s = eval_coefficients(e.model, t);
        const Matrix direct = s.Ahat + s.Bhat * gain_thetahat0(s, e.Pi(t), e.P(t));
        CHECK(sup_norm(closed_loop_generator(s, e.Pi(t), e.P(t)) - direct) <= 1e-12);
    }
    CHECK_THAT(closed_loop_generator(sc1().model, sc1().Pi, sc1().P, 0.3)(0, 0), WithinAbs(-kRoot2, 1e-9));

    auto no_input = scalar_sc1_model();
    no_input.B = MatrixCurve::zero(1, 1, 1.0);
    const auto s = eval_coefficients(no_input, 0.0);
    CHECK(closed_loop_generator(s, Matrix::Ones(1, 1), Matrix::Ones(1, 1))(0, 0) == s.Ahat(0, 0));
}

TEST_CASE("forcing term", "[affine]") {
    const auto& e = example();
    for (int i = 0; i <= 64; ++i) {
        const double t = e.model.tau * i / 64;
        Vector deta(2);
        deta << -std::sin(t), std::cos(t);
        const Vector r = deta + closed_loop_generator(e.model, e.Pi, e.P, t).transpose() * eta_exact(t) +
                         forcing_g(e.model, e.Pi, e.P, t);
        CHECK(r.cwiseAbs().maxCoeff() <= 1e-8);
    }
    const auto& h = homogeneous();
    for (double t : {0.0, 1.0, 3.0}) CHECK(forcing_g(h.model, h.Pi, h.P, t).norm() == 0.0);
    CHECK_THAT(forcing_g(sc1().model, sc1().Pi, sc1().P, 0.2)(0), WithinAbs(kRoot2 - 1, 1e-9));
}

TEST_CASE("periodic offset on the worked example", "[affine]") {
    const auto& eta = example().eta;
    double err = 0.0;
    for (int i = 0; i <= eta.steps(); ++i) err = std::max(err, (eta.values[static_cast<std::size_t>(i)] - eta_exact(i * eta.step())).cwiseAbs().maxCoeff());
    CHECK(err <= 1e-6);
    for (double t : {0.05, 1.9, 6.2}) CHECK((eta(t) - eta_exact(t)).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(eta.periodicity_gap <= 1e-9);
    CHECK((eta.values.front() - eta.anchor_h).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((eta.values.back() - eta.anchor_h).norm() == 0.0);
    CHECK(eta.residual_sup <= 1e-8);
    CHECK(std::isfinite(eta.condition_I_minus_psi));
}

TEST_CASE("periodic offset vanishes without inhomogeneity", "[affine]") {
    double sup = 0.0;
    for (const auto& v : homogeneous().eta.values) sup = std::max(sup, v.cwiseAbs().maxCoeff());
    CHECK(sup <= 1e-10);
}

TEST_CASE("periodic offset of the scalar model", "[affine]") {
    for (const auto& v : sc1().eta.values) CHECK_THAT(v(0), WithinAbs(1 - 1 / kRoot2, 1e-9));
    CHECK_THAT(sc1().eta.anchor_h(0), WithinAbs(0.2928932, 1e-7));
}

TEST_CASE("optimal offset v0", "[affine]") {
    const auto& e = example();
    for (int i = 0; i <= 64; ++i) {
        const double t = e.model.tau * i / 64;
        CHECK(offset_v0(e.model, e.eta, e.P, t).cwiseAbs().maxCoeff() <= 1e-6);
        // The reason v0 vanishes: Bhat' eta cancels rho.
        const auto s = eval_coefficients(e.model, t);
        CHECK((s.Bhat.transpose() * e.eta(t) + s.rho).cwiseAbs().maxCoeff() <= 1e-6);
    }
    const auto& h = homogeneous();
    CHECK(offset_v0(h.model, h.eta, h.P, 1.0).norm() <= 1e-10);
    CHECK_THAT(offset_v0(sc1().model, sc1().eta, sc1().P, 0.4)(0), WithinAbs(-(1 - 1 / kRoot2), 1e-9));
}

TEST_CASE("value function", "[affine]") {
    const auto v = value_function(example().model, example().P, example().eta);
    CHECK_THAT(v.value, WithinAbs(8.5, 1e-8));
    const auto& c = v.components;
    CHECK_THAT(c.quadratic_penalty + c.sigma_term + c.eta_b_term, WithinAbs(v.value, 1e-12));
    CHECK(v.times.size() == v.integrand_samples.size());
    CHECK(std::abs(c.quadratic_penalty) <= 1e-10);

    const auto z = value_function(homogeneous().model, homogeneous().P, homogeneous().eta);
    CHECK(std::abs(z.value) <= 1e-10);
    CHECK(z.components.sigma_term == 0.0);
    CHECK(z.components.eta_b_term == 0.0);

    const auto s = value_function(sc1().model, sc1().P, sc1().eta);
    CHECK_THAT(s.value, WithinAbs(kRoot2 - 0.5, 1e-8));
    CHECK_THAT(s.value, WithinAbs(0.9142136, 1e-7));
}

TEST_CASE("flow identity for the offset propagator", "[affine]") {
    const auto& e = example();
    auto rhs = [&](double t, const Vector& y) {
        return Vector(flatten(closed_loop_generator(e.model, e.Pi, e.P, t) * unflatten(y, 2, 2)));
    };
    const Vector id = flatten(Matrix::Identity(2, 2));
    const Matrix psi_tau = e.eta.psi_tau;
    for (double t : {0.4, 1.3, 2.9, 5.1}) {
        const int steps = static_cast<int>(std::lround(4096 * t / e.model.tau)) + 1;
        const Matrix psi_t = unflatten(integrate_ode(rhs, id, TimeGrid(0, t, steps)).back(), 2, 2);
        const Matrix psi_t_tau =
            unflatten(integrate_ode(rhs, id, TimeGrid(0, t + e.model.tau, steps + 4096)).back(), 2, 2);
        CHECK(sup_norm(psi_t_tau * psi_tau.inverse() - psi_t) <= 1e-6 * sup_norm(psi_t));
    }
}

TEST_CASE("singular anchor and periodicity failures", "[affine]") {
    // F = Ahat + Bhat Thetahat0 = 0 makes psi_tau = I.
    auto frozen = PeriodicModel::zeros(1, 1, 1.0);
    frozen.R = MatrixCurve::constant(Matrix::Ones(1, 1), 1.0);
    frozen.b = MatrixCurve::constant(Matrix::Ones(1, 1), 1.0);
    const auto one = constant_solution(Matrix::Ones(1, 1), 1.0);
    EtaOptions opt;
    opt.grid = 64;
    CHECK_THROWS_AS(solve_periodic_eta(frozen, one, one, opt), SingularAnchor);

    EtaOptions strict;
    strict.tol = 1e-30;
    const auto& e = example();
    CHECK_THROWS_AS(solve_periodic_eta(e.model, e.Pi, e.P, strict), PeriodicityViolation);
}
