#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/SVD>

#include "pmflq/model.hpp"
#include "pmflq/numerics.hpp"
#include "pmflq/riccati.hpp"

namespace pmflq {

/// Periodic vector curve on a uniform grid over [0, tau] with Hermite
/// interpolation, plus the anchor data of its construction.
struct PeriodicVectorSolution {
    double tau = 1.0;
    std::vector<Vector> values;
    std::vector<Vector> derivatives;
    Vector anchor_h;
    Matrix psi_tau;
    double condition_I_minus_psi = 0.0;
    double periodicity_gap = 0.0;
    double residual_sup = 0.0;

    int steps() const { return static_cast<int>(values.size()) - 1; }
    double step() const { return tau / steps(); }

    Vector operator()(double t) const {
        const auto [i, s] = locate(t);
        return hermite_value<Vector>(values[i], values[i + 1], derivatives[i], derivatives[i + 1], step(), s);
    }

    Vector derivative(double t) const {
        const auto [i, s] = locate(t);
        return hermite_derivative<Vector>(values[i], values[i + 1], derivatives[i], derivatives[i + 1], step(), s);
    }

private:
    std::pair<std::size_t, double> locate(double t) const {
        const double x = phase_of(t, tau) / step();
        auto i = static_cast<std::size_t>(std::floor(x));
        if (i >= static_cast<std::size_t>(steps())) i = static_cast<std::size_t>(steps()) - 1;
        return {i, std::clamp(x - static_cast<double>(i), 0.0, 1.0)};
    }
};

/// F = Ahat + Bhat Thetahat0.
inline Matrix closed_loop_generator(const CoefficientSample& s, const Matrix& Pi, const Matrix& P) {
    return s.Ahat + s.Bhat * gain_thetahat0(s, Pi, P);
}

inline Matrix closed_loop_generator(const PeriodicModel& model, const PeriodicMatrixSolution& Pi,
                                    const PeriodicMatrixSolution& P, double t) {
    return closed_loop_generator(eval_coefficients(model, t), Pi(t), P(t));
}

/// g = (Chat + Dhat Thetahat0)' P sigma + Pi b + q + Thetahat0' rho.
inline Vector forcing_g(const CoefficientSample& s, const Matrix& Pi, const Matrix& P) {
    const Matrix th = gain_thetahat0(s, Pi, P);
    return (s.Chat + s.Dhat * th).transpose() * P * s.sigma + Pi * s.b + s.q + th.transpose() * s.rho;
}

inline Vector forcing_g(const PeriodicModel& model, const PeriodicMatrixSolution& Pi, const PeriodicMatrixSolution& P,
                        double t) {
    return forcing_g(eval_coefficients(model, t), Pi(t), P(t));
}

struct EtaOptions {
    double tol = 1e-9;
    int grid = 4096;
};

/// Periodic solution of eta' = -F'eta - g. The one-period propagator psi of
/// F and l = int_0^tau psi' g give the periodic value h from
/// (I - psi_tau)' h = l; eta is then integrated backward from eta(tau) = h,
/// the direction in which the homogeneous part contracts.
inline PeriodicVectorSolution solve_periodic_eta(const PeriodicModel& model, const PeriodicMatrixSolution& Pi,
                                                 const PeriodicMatrixSolution& P, const EtaOptions& opt = {}) {
    const int n = model.n;
    const int G = opt.grid;
    const double tau = model.tau;
    const double h = tau / G;

    // F and g on the half-step lattice.
    std::vector<Matrix> F(static_cast<std::size_t>(2 * G) + 1);
    std::vector<Vector> g(F.size());
    for (int k = 0; k <= 2 * G; ++k) {
        const double t = 0.5 * h * k;
        const auto s = eval_coefficients(model, t);
        const Matrix p = P(t);
        const Matrix pi = Pi(t);
        F[static_cast<std::size_t>(k)] = closed_loop_generator(s, pi, p);
        g[static_cast<std::size_t>(k)] = forcing_g(s, pi, p);
    }
    auto lattice = [&](double t) {
        const long long k = std::llround(t / (0.5 * h));
        return static_cast<std::size_t>(std::clamp<long long>(k, 0, 2LL * G));
    };

    // psi and l together: state = [vec(psi); l].
    const Eigen::Index nn = n * n;
    auto psi_rhs = [&](double t, const Vector& y) {
        const std::size_t k = lattice(t);
        const Matrix psi = unflatten(y.head(nn), n, n);
        Vector out(nn + n);
        out.head(nn) = flatten(F[k] * psi);
        out.tail(n) = psi.transpose() * g[k];
        return out;
    };
    Vector start = Vector::Zero(nn + n);
    start.head(nn) = flatten(Matrix::Identity(n, n));
    const Vector end = integrate_ode_observed(psi_rhs, start, TimeGrid(0.0, tau, G), [](int, double, const Vector&) {});

    PeriodicVectorSolution sol;
    sol.tau = tau;
    sol.psi_tau = unflatten(end.head(nn), n, n);
    const Vector l = end.tail(n);
    const Matrix anchor = (Matrix::Identity(n, n) - sol.psi_tau).transpose();
    Eigen::JacobiSVD<Matrix> svd(anchor);
    const auto sv = svd.singularValues();
    sol.condition_I_minus_psi = sv(sv.size() - 1) > 0 ? sv(0) / sv(sv.size() - 1) : std::numeric_limits<double>::infinity();
    try {
        sol.anchor_h = solve_linear(anchor, l);
    } catch (const NumericalError& e) {
        throw SingularAnchor(std::string("I - psi_tau is not invertible: ") + e.what());
    }

    auto eta_rhs = [&](double t, const Vector& eta) -> Vector {
        const std::size_t k = lattice(t);
        return -F[k].transpose() * eta - g[k];
    };
    sol.values.assign(static_cast<std::size_t>(G) + 1, Vector());
    integrate_ode_observed(eta_rhs, sol.anchor_h, TimeGrid(tau, 0.0, G),
                           [&](int i, double, const Vector& y) { sol.values[static_cast<std::size_t>(G - i)] = y; });
    sol.periodicity_gap = (sol.values.front() - sol.anchor_h).cwiseAbs().maxCoeff();
    for (int i = 0; i <= G; ++i) sol.derivatives.push_back(eta_rhs(i * h, sol.values[static_cast<std::size_t>(i)]));

    sol.residual_sup = 0.0;
    for (int i = 0; i < G; ++i) {
        const double t = (i + 0.5) * h;
        const std::size_t k = lattice(t);
        const Vector r = sol.derivative(t) + F[k].transpose() * sol(t) + g[k];
        sol.residual_sup = std::max(sol.residual_sup, r.cwiseAbs().maxCoeff());
    }
    if (sol.periodicity_gap > opt.tol) {
        throw PeriodicityViolation("eta(0) differs from the anchor by " + std::to_string(sol.periodicity_gap));
    }
    return sol;
}

/// v0 = -(Rhat + Dhat'P Dhat)^{-1}(Bhat'eta + Dhat'P sigma + rho).
inline Vector offset_v0(const CoefficientSample& s, const Vector& eta, const Matrix& P) {
    const Vector lp = s.Bhat.transpose() * eta + s.Dhat.transpose() * P * s.sigma + s.rho;
    return -pd_solve(symmetrize(s.Rhat + s.Dhat.transpose() * P * s.Dhat), lp);
}

inline Vector offset_v0(const PeriodicModel& model, const PeriodicVectorSolution& eta, const PeriodicMatrixSolution& P,
                        double t) {
    return offset_v0(eval_coefficients(model, t), eta(t), P(t));
}

struct ValueComponents {
    double quadratic_penalty = 0.0;
    double sigma_term = 0.0;
    double eta_b_term = 0.0;
};

struct ValueReport {
    double value = 0.0;
    std::vector<double> times;
    std::vector<double> integrand_samples;
    ValueComponents components;
};

/// V = (1/tau) int_0^tau [-<RhatP^{-1} lP, lP> + <P sigma, sigma> + 2<eta, b>] dt.
inline ValueReport value_function(const PeriodicModel& model, const PeriodicMatrixSolution& P,
                                  const PeriodicVectorSolution& eta) {
    int G = eta.steps();
    if (G % 2 != 0) G *= 2;
    const double h = model.tau / G;
    std::vector<double> a(static_cast<std::size_t>(G) + 1), b(a.size()), c(a.size());
    ValueReport report;
    for (int i = 0; i <= G; ++i) {
        const double t = i * h;
        const auto s = eval_coefficients(model, t);
        const Matrix p = P(t);
        const Vector e = eta(t);
        const Vector lp = s.Bhat.transpose() * e + s.Dhat.transpose() * p * s.sigma + s.rho;
        const Matrix rp = symmetrize(s.Rhat + s.Dhat.transpose() * p * s.Dhat);
        const auto k = static_cast<std::size_t>(i);
        a[k] = -lp.dot(pd_solve(rp, lp).col(0));
        b[k] = (p * s.sigma).dot(s.sigma);
        c[k] = 2.0 * e.dot(s.b);
        report.times.push_back(t);
        report.integrand_samples.push_back(a[k] + b[k] + c[k]);
    }
    report.components.quadratic_penalty = simpson(a, h) / model.tau;
    report.components.sigma_term = simpson(b, h) / model.tau;
    report.components.eta_b_term = simpson(c, h) / model.tau;
    report.value = report.components.quadratic_penalty + report.components.sigma_term + report.components.eta_b_term;
    return report;
}

} // namespace pmflq
