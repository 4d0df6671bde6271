#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "pmflq/model.hpp"
#include "pmflq/numerics.hpp"

namespace pmflq {

struct StabilityCertificate {
    double rho_mean = 0.0;
    double rho_second = 0.0;
    double decay_rate_mean = 0.0;
    double decay_rate_second = 0.0;
    double margin = 1e-6;
    bool admissible = false;
    std::string failure;
};

namespace detail {
/// Batched RK4 propagation of k matrices X_i(t) under dX = rhs(t, X).
/// The batch is stacked into one vector so a single integrator call
/// advances every basis element in lockstep.
template <class Rhs>
std::vector<Matrix> propagate_matrices(Rhs&& rhs, const std::vector<Matrix>& initial, double t0, double t1,
                                       int steps, bool symmetric) {
    const auto rows = initial.front().rows();
    const auto cols = initial.front().cols();
    const Eigen::Index block = rows * cols;
    const auto count = static_cast<Eigen::Index>(initial.size());
    Vector y(block * count);
    for (Eigen::Index k = 0; k < count; ++k) y.segment(k * block, block) = flatten(initial[static_cast<std::size_t>(k)]);
    auto stacked = [&](double t, const Vector& state) {
        Vector out(state.size());
        for (Eigen::Index k = 0; k < count; ++k) {
            const Matrix x = unflatten(state.segment(k * block, block), rows, cols);
            out.segment(k * block, block) = flatten(rhs(t, x));
        }
        return out;
    };
    auto resym = [&](Vector& state) {
        if (!symmetric) return;
        for (Eigen::Index k = 0; k < count; ++k) {
            state.segment(k * block, block) = flatten(symmetrize(unflatten(state.segment(k * block, block), rows, cols)));
        }
    };
    const Vector end = integrate_ode_observed(stacked, y, TimeGrid(t0, t1, steps), [](int, double, const Vector&) {},
                                              resym);
    std::vector<Matrix> out;
    for (Eigen::Index k = 0; k < count; ++k) out.push_back(unflatten(end.segment(k * block, block), rows, cols));
    return out;
}

inline int steps_for(double span, double tau, int grid) {
    return std::max(1, static_cast<int>(std::lround(std::abs(span) / tau * grid)));
}
} // namespace detail

/// Fundamental matrix of dPsi = (Ahat + Bhat Thetahat) Psi dt from Psi(t0) = I.
inline Matrix mean_transition(const PeriodicModel& model, const FeedbackPolicy& policy, double t0, double t1,
                              int grid = 4096) {
    check_policy_shape(model, policy);
    auto rhs = [&](double t, const Matrix& psi) -> Matrix {
        const auto cl = closed_loop_matrices(eval_coefficients(model, t, policy));
        return (cl.drift_state + cl.drift_mean) * psi;
    };
    const int steps = detail::steps_for(t1 - t0, model.tau, grid);
    return detail::propagate_matrices(rhs, {Matrix::Identity(model.n, model.n)}, t0, t1, steps, false).front();
}

inline Matrix mean_monodromy(const PeriodicModel& model, const FeedbackPolicy& policy, int grid = 4096) {
    return mean_transition(model, policy, 0.0, model.tau, grid);
}

/// Propagates second moments M of the homogeneous closed-loop state
/// dM = (A+B Theta) M + M (A+B Theta)' + (C+D Theta) M (C+D Theta)'.
inline std::vector<Matrix> propagate_second_moments(const PeriodicModel& model, const FeedbackPolicy& policy,
                                                    const std::vector<Matrix>& initial, double t0, double t1,
                                                    int grid = 4096, bool symmetric = true) {
    check_policy_shape(model, policy);
    auto rhs = [&](double t, const Matrix& m) -> Matrix {
        const auto cl = closed_loop_matrices(eval_coefficients(model, t, policy));
        return cl.drift_state * m + m * cl.drift_state.transpose() + cl.diff_state * m * cl.diff_state.transpose();
    };
    return detail::propagate_matrices(rhs, initial, t0, t1, detail::steps_for(t1 - t0, model.tau, grid), symmetric);
}

/// n^2 x n^2 one-period map on row-major vectorized matrices, built column
/// by column from the basis E_ij.
inline Matrix second_moment_monodromy(const PeriodicModel& model, const FeedbackPolicy& policy, int grid = 4096,
                                      double periods = 1.0) {
    const int n = model.n;
    std::vector<Matrix> basis;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            Matrix e = Matrix::Zero(n, n);
            e(i, j) = 1.0;
            basis.push_back(e);
        }
    const auto images = propagate_second_moments(model, policy, basis, 0.0, periods * model.tau, grid, false);
    Matrix map(n * n, n * n);
    for (int k = 0; k < n * n; ++k) map.col(k) = flatten(images[static_cast<std::size_t>(k)]);
    return map;
}

/// Same map restricted to symmetric matrices, in svec coordinates.
inline Matrix second_moment_monodromy_sym(const PeriodicModel& model, const FeedbackPolicy& policy, int grid = 4096) {
    const int n = model.n;
    std::vector<Matrix> basis;
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
            Matrix e = Matrix::Zero(n, n);
            e(i, j) = 1.0;
            e(j, i) = 1.0;
            basis.push_back(e);
        }
    const auto images = propagate_second_moments(model, policy, basis, 0.0, model.tau, grid, true);
    const int d = n * (n + 1) / 2;
    Matrix map(d, d);
    for (int k = 0; k < d; ++k) map.col(k) = svec(images[static_cast<std::size_t>(k)]);
    return map;
}

inline StabilityCertificate certify(const PeriodicModel& model, const FeedbackPolicy& policy, int grid = 4096,
                                    double margin = 1e-6) {
    StabilityCertificate cert;
    cert.margin = margin;
    try {
        cert.rho_mean = spectral_radius(mean_monodromy(model, policy, grid));
        cert.rho_second = spectral_radius(second_moment_monodromy_sym(model, policy, grid));
    } catch (const NonFiniteState& e) {
        cert.rho_mean = cert.rho_second = std::numeric_limits<double>::infinity();
        cert.failure = std::string("NotStabilizing: ") + e.what();
    }
    auto rate = [&](double rho) {
        return rho > 0.0 ? -std::log(rho) / model.tau : std::numeric_limits<double>::infinity();
    };
    cert.decay_rate_mean = rate(cert.rho_mean);
    cert.decay_rate_second = rate(cert.rho_second);
    cert.admissible = cert.rho_mean < 1.0 - margin && cert.rho_second < 1.0 - margin;
    return cert;
}

inline void require_admissible(const StabilityCertificate& cert) {
    if (!cert.admissible) {
        throw NotAdmissible("policy is not a periodic stabilizer (rho_mean=" + std::to_string(cert.rho_mean) +
                            ", rho_second=" + std::to_string(cert.rho_second) + ")");
    }
}

} // namespace pmflq
