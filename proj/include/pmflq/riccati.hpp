#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "pmflq/model.hpp"
#include "pmflq/numerics.hpp"

namespace pmflq {

/// Periodic matrix curve stored on a uniform grid over [0, tau] with
/// node derivatives; evaluated by cubic Hermite interpolation.
struct PeriodicMatrixSolution {
    double tau = 1.0;
    std::vector<Matrix> values;       // steps + 1 nodes, values.front() ~ values.back()
    std::vector<Matrix> derivatives;  // ODE right-hand side at the nodes
    double periodicity_gap = 0.0;
    double residual_sup = 0.0;
    double min_eig = 0.0;
    int sweeps = 0;

    int steps() const { return static_cast<int>(values.size()) - 1; }
    double step() const { return tau / steps(); }

    Matrix operator()(double t) const {
        const auto [i, s] = locate(t);
        return hermite_value<Matrix>(values[i], values[i + 1], derivatives[i], derivatives[i + 1], step(), s);
    }

    Matrix derivative(double t) const {
        const auto [i, s] = locate(t);
        return hermite_derivative<Matrix>(values[i], values[i + 1], derivatives[i], derivatives[i + 1], step(), s);
    }

private:
    std::pair<std::size_t, double> locate(double t) const {
        const double x = phase_of(t, tau) / step();
        auto i = static_cast<std::size_t>(std::floor(x));
        if (i >= static_cast<std::size_t>(steps())) i = static_cast<std::size_t>(steps()) - 1;
        return {i, std::clamp(x - static_cast<double>(i), 0.0, 1.0)};
    }
};

enum class RiccatiSeed { zero, terminal_weight };

struct RiccatiOptions {
    double tol = 1e-9;
    int max_sweeps = 500;
    int grid = 4096;
    RiccatiSeed seed = RiccatiSeed::zero;
    double residual_limit = 1e-6;
};

/// P' for the plain Riccati equation:
/// -[Q + A'P + PA + C'PC - K'(R + D'PD)^{-1}K], K = B'P + D'PC + S.
inline Matrix riccati_rhs_P(const CoefficientSample& s, const Matrix& P) {
    const Matrix K = s.B.transpose() * P + s.D.transpose() * P * s.C + s.S;
    const Matrix L = factor_pd(symmetrize(s.R + s.D.transpose() * P * s.D));
    const Matrix core = s.Q + s.A.transpose() * P + P * s.A + s.C.transpose() * P * s.C -
                        K.transpose() * cholesky_solve(L, K);
    return symmetrize(-core);
}

inline Matrix riccati_rhs_P(const PeriodicModel& model, double t, const Matrix& P) {
    return riccati_rhs_P(eval_coefficients(model, t), P);
}

/// Pi' for the mean-field Riccati equation with hatted coefficients; the
/// diffusion term couples in P at the same time.
inline Matrix riccati_rhs_Pi(const CoefficientSample& s, const Matrix& Pi, const Matrix& P) {
    const Matrix K = s.Bhat.transpose() * Pi + s.Dhat.transpose() * P * s.Chat + s.Shat;
    const Matrix L = factor_pd(symmetrize(s.Rhat + s.Dhat.transpose() * P * s.Dhat));
    const Matrix core = s.Qhat + s.Ahat.transpose() * Pi + Pi * s.Ahat + s.Chat.transpose() * P * s.Chat -
                        K.transpose() * cholesky_solve(L, K);
    return symmetrize(-core);
}

inline Matrix riccati_rhs_Pi(const PeriodicModel& model, double t, const Matrix& Pi, const Matrix& P) {
    return riccati_rhs_Pi(eval_coefficients(model, t), Pi, P);
}

namespace detail {

/// Backward periodic sweeps of X' = rhs(t, X) on the table grid; each sweep
/// restarts at tau from the previous sweep's value at 0.
template <class Rhs>
PeriodicMatrixSolution periodic_sweep(Rhs&& rhs, const Matrix& seed, double tau, const RiccatiOptions& opt) {
    const auto n = seed.rows();
    const int G = opt.grid;
    std::vector<Matrix> trace(static_cast<std::size_t>(G) + 1);
    std::vector<Matrix> previous;
    Matrix terminal = seed;
    auto flat_rhs = [&](double t, const Vector& y) { return flatten(rhs(t, unflatten(y, n, n))); };
    auto resym = [&](Vector& y) { y = flatten(symmetrize(unflatten(y, n, n))); };

    PeriodicMatrixSolution sol;
    sol.tau = tau;
    for (int sweep = 1; sweep <= opt.max_sweeps; ++sweep) {
        // Backward grid tau -> 0; node i of the sweep is time tau - i h.
        integrate_ode_observed(
            flat_rhs, flatten(terminal), TimeGrid(tau, 0.0, G),
            [&](int i, double, const Vector& y) { trace[static_cast<std::size_t>(G - i)] = unflatten(y, n, n); },
            resym);
        double change = std::numeric_limits<double>::infinity();
        if (!previous.empty()) {
            change = 0.0;
            for (std::size_t k = 0; k < trace.size(); ++k) change = std::max(change, sup_norm(trace[k] - previous[k]));
        }
        previous = trace;
        terminal = trace.front();
        if (change <= opt.tol) {
            sol.values = trace;
            sol.sweeps = sweep;
            sol.periodicity_gap = sup_norm(trace.front() - trace.back());
            return sol;
        }
    }
    throw NoConvergence("periodic Riccati sweep did not converge in " + std::to_string(opt.max_sweeps) + " sweeps");
}

template <class Rhs>
void finish_solution(PeriodicMatrixSolution& sol, Rhs&& rhs, const RiccatiOptions& opt) {
    const double h = sol.step();
    sol.derivatives.clear();
    for (int i = 0; i <= sol.steps(); ++i) sol.derivatives.push_back(rhs(i * h, sol.values[static_cast<std::size_t>(i)]));
    sol.min_eig = std::numeric_limits<double>::infinity();
    for (const auto& v : sol.values) sol.min_eig = std::min(sol.min_eig, min_eigenvalue_sym(v));
    if (!(sol.min_eig > 0.0)) {
        throw NotPositiveDefinite("periodic solution is not uniformly positive definite (min eigenvalue " +
                                  std::to_string(sol.min_eig) + ")");
    }
    // Substitute the interpolant back into the equation at the midpoints.
    sol.residual_sup = 0.0;
    for (int i = 0; i < sol.steps(); ++i) {
        const double t = (i + 0.5) * h;
        sol.residual_sup = std::max(sol.residual_sup, sup_norm(sol.derivative(t) - rhs(t, sol(t))));
    }
    if (sol.residual_sup > opt.residual_limit) {
        throw ResidualTooLarge("Riccati residual " + std::to_string(sol.residual_sup) + " exceeds " +
                               std::to_string(opt.residual_limit));
    }
}

} // namespace detail

/// Periodic solution of the plain Riccati equation by backward sweeps.
inline PeriodicMatrixSolution solve_periodic_riccati_P(const PeriodicModel& model, const RiccatiOptions& opt = {}) {
    const CoefficientTable table(model, opt.grid);
    auto rhs = [&](double t, const Matrix& P) { return riccati_rhs_P(table.at(t), P); };
    const Matrix seed = opt.seed == RiccatiSeed::zero ? Matrix::Zero(model.n, model.n) : symmetrize(model.Q(model.tau));
    auto sol = detail::periodic_sweep(rhs, seed, model.tau, opt);
    // Midpoint residuals fall between table nodes; evaluate directly there.
    auto exact_rhs = [&](double t, const Matrix& P) { return riccati_rhs_P(model, t, P); };
    detail::finish_solution(sol, exact_rhs, opt);
    return sol;
}

/// Periodic solution of the mean-field Riccati equation; needs the
/// converged P first.
inline PeriodicMatrixSolution solve_periodic_riccati_Pi(const PeriodicModel& model, const PeriodicMatrixSolution& P,
                                                        const RiccatiOptions& opt = {}) {
    const CoefficientTable table(model, opt.grid);
    // P on the half-step lattice of this grid.
    std::vector<Matrix> p_half;
    for (int k = 0; k < 2 * opt.grid; ++k) p_half.push_back(P(model.tau * k / (2.0 * opt.grid)));
    auto rhs = [&](double t, const Matrix& Pi) {
        const double x = phase_of(t, model.tau) / (0.5 * table.step());
        const auto k = static_cast<std::size_t>(std::llround(x)) % p_half.size();
        return riccati_rhs_Pi(table.at(t), Pi, p_half[k]);
    };
    const Matrix seed =
        opt.seed == RiccatiSeed::zero ? Matrix::Zero(model.n, model.n) : symmetrize(model.Q(model.tau) + model.Qbar(model.tau));
    auto sol = detail::periodic_sweep(rhs, seed, model.tau, opt);
    auto exact_rhs = [&](double t, const Matrix& Pi) { return riccati_rhs_Pi(model, t, Pi, P(t)); };
    detail::finish_solution(sol, exact_rhs, opt);
    return sol;
}

enum class RiccatiWhich { P, Pi };

inline PeriodicMatrixSolution solve_periodic_riccati(const PeriodicModel& model, RiccatiWhich which,
                                                     const PeriodicMatrixSolution* P_solution,
                                                     const RiccatiOptions& opt = {}) {
    if (which == RiccatiWhich::P) return solve_periodic_riccati_P(model, opt);
    if (!P_solution) throw ValidationError("solving for Pi requires the P solution");
    return solve_periodic_riccati_Pi(model, *P_solution, opt);
}

/// Theta0 = -(R + D'PD)^{-1}(B'P + D'PC + S).
inline Matrix gain_theta0(const CoefficientSample& s, const Matrix& P) {
    const Matrix K = s.B.transpose() * P + s.D.transpose() * P * s.C + s.S;
    return -pd_solve(symmetrize(s.R + s.D.transpose() * P * s.D), K);
}

inline Matrix gain_theta0(const PeriodicModel& model, const PeriodicMatrixSolution& P, double t) {
    return gain_theta0(eval_coefficients(model, t), P(t));
}

/// Thetahat0 = -(Rhat + Dhat'P Dhat)^{-1}(Bhat'Pi + Dhat'P Chat + Shat).
inline Matrix gain_thetahat0(const CoefficientSample& s, const Matrix& Pi, const Matrix& P) {
    const Matrix K = s.Bhat.transpose() * Pi + s.Dhat.transpose() * P * s.Chat + s.Shat;
    return -pd_solve(symmetrize(s.Rhat + s.Dhat.transpose() * P * s.Dhat), K);
}

inline Matrix gain_thetahat0(const PeriodicModel& model, const PeriodicMatrixSolution& Pi,
                             const PeriodicMatrixSolution& P, double t) {
    return gain_thetahat0(eval_coefficients(model, t), Pi(t), P(t));
}

inline Matrix gain_thetabar0(const PeriodicModel& model, const PeriodicMatrixSolution& Pi,
                             const PeriodicMatrixSolution& P, double t) {
    const auto s = eval_coefficients(model, t);
    const Matrix p = P(t);
    return gain_thetahat0(s, Pi(t), p) - gain_theta0(s, p);
}

} // namespace pmflq
