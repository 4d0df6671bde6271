#pragma once

#include <numbers>
#include <optional>
#include <string>

#include "pmflq/model.hpp"

namespace pmflq {

namespace detail {
inline Curve trig(double tau, double c0, std::vector<Harmonic> hs = {}) {
    return TrigPolynomial(tau, c0, std::move(hs));
}

inline MatrixCurve curve_grid(int rows, int cols, std::vector<Curve> entries) {
    return MatrixCurve(rows, cols, std::move(entries));
}
} // namespace detail

/// Two-dimensional worked example with period 2 pi. Known solution:
/// P = [[5, cos],[cos, 5]], Pi = [[3, sin],[sin, 3]], eta = (cos, sin),
/// v0 = 0 and value 17/2.
inline PeriodicModel example5_model() {
    const double tau = 2.0 * std::numbers::pi;
    using detail::trig;
    auto M = PeriodicModel::zeros(2, 2, tau);
    const Matrix I = Matrix::Identity(2, 2);

    M.A = detail::curve_grid(2, 2, {trig(tau, -1), trig(tau, 0, {{1, 1, 0}}), trig(tau, 0), trig(tau, -1)});
    M.Abar = detail::curve_grid(2, 2, {trig(tau, 0), trig(tau, 0, {{1, -1, 1}}), trig(tau, 0), trig(tau, 0)});
    M.B = MatrixCurve::constant(I, tau);
    M.C = MatrixCurve::trig(tau, Matrix::Zero(2, 2), {{1, 2.0 * I, Matrix()}});
    M.Cbar = MatrixCurve::trig(tau, Matrix::Zero(2, 2), {{1, -2.0 * I, I}});
    M.b = detail::curve_grid(2, 1, {trig(tau, 0, {{1, 0, 1}}), trig(tau, 1)});
    M.sigma = detail::curve_grid(2, 1, {trig(tau, 0, {{1, 1, 0}}), trig(tau, 1)});

    // 35 - 19cos^2, sin + 7cos - 4cos^3, 35 - 21cos^2 with cos^2 and cos^3
    // expanded into harmonics.
    const Curve q01 = trig(tau, 0, {{1, 4, 1}, {3, -1, 0}});
    M.Q = detail::curve_grid(2, 2, {trig(tau, 25.5, {{2, -9.5, 0}}), q01, q01, trig(tau, 24.5, {{2, -10.5, 0}})});
    // -24 + 23cos^2, 4sin - 9cos + 5cos^3, -26 + 27cos^2.
    const Curve qb01 = trig(tau, 0, {{1, -5.25, 4}, {3, 1.25, 0}});
    M.Qbar = detail::curve_grid(2, 2, {trig(tau, -12.5, {{2, 11.5, 0}}), qb01, qb01, trig(tau, -12.5, {{2, 13.5, 0}})});
    M.R = MatrixCurve::constant(I, tau);

    // q1 = -3sin + cos - 6 sin cos
    // q2 = -3 - 5sin - cos - sin cos - sin^2 + sin^3
    M.q = detail::curve_grid(2, 1, {trig(tau, 0, {{1, 1, -3}, {2, 0, -3}}),
                                    trig(tau, -3.5, {{1, -1, -4.25}, {2, 0.5, -0.5}, {3, 0, -0.25}})});
    M.rho = detail::curve_grid(2, 1, {trig(tau, 0, {{1, -1, 0}}), trig(tau, 0, {{1, 0, -1}})});
    return M;
}

/// Scalar model: A = -1, B = 1, Q = R = 1, b = sigma = 1, period 1.
inline PeriodicModel scalar_sc1_model() {
    const double tau = 1.0;
    auto M = PeriodicModel::zeros(1, 1, tau);
    const Matrix one = Matrix::Ones(1, 1);
    M.A = MatrixCurve::constant(-one, tau);
    M.B = MatrixCurve::constant(one, tau);
    M.Q = MatrixCurve::constant(one, tau);
    M.R = MatrixCurve::constant(one, tau);
    M.b = MatrixCurve::constant(one, tau);
    M.sigma = MatrixCurve::constant(one, tau);
    return M;
}

/// Same model with b = sigma = q = rho = 0.
inline PeriodicModel without_inhomogeneity(PeriodicModel model) {
    model.b = MatrixCurve::zero(model.n, 1, model.tau);
    model.sigma = MatrixCurve::zero(model.n, 1, model.tau);
    model.q = MatrixCurve::zero(model.n, 1, model.tau);
    model.rho = MatrixCurve::zero(model.m, 1, model.tau);
    return model;
}

inline std::optional<PeriodicModel> builtin_model(const std::string& name) {
    if (name == "example-5") return example5_model();
    if (name == "scalar-sc1") return scalar_sc1_model();
    if (name == "example-5-homogeneous") return without_inhomogeneity(example5_model());
    return std::nullopt;
}

} // namespace pmflq
