#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "pmflq/affine.hpp"
#include "pmflq/model.hpp"
#include "pmflq/riccati.hpp"

namespace pmflq {

/// Trigonometric interpolant of G equispaced samples f(i tau / G) on [0, tau).
/// Harmonics with amplitude below drop_below * max(1, max|f|) are discarded.
inline TrigPolynomial fit_trig(const std::vector<double>& samples, double tau, double drop_below = 1e-12) {
    const auto G = static_cast<int>(samples.size());
    if (G < 2) throw ValidationError("trigonometric fit needs at least two samples");
    double scale = 1.0;
    double mean = 0.0;
    for (double v : samples) {
        scale = std::max(scale, std::abs(v));
        mean += v;
    }
    mean /= G;
    std::vector<Harmonic> hs;
    const int kmax = (G - 1) / 2;
    for (int k = 1; k <= kmax; ++k) {
        double a = 0.0;
        double b = 0.0;
        for (int i = 0; i < G; ++i) {
            const double th = 2.0 * std::numbers::pi * static_cast<double>((static_cast<long long>(k) * i) % G) / G;
            a += samples[static_cast<std::size_t>(i)] * std::cos(th);
            b += samples[static_cast<std::size_t>(i)] * std::sin(th);
        }
        a *= 2.0 / G;
        b *= 2.0 / G;
        if (std::hypot(a, b) > drop_below * scale) hs.push_back({k, a, b});
    }
    return TrigPolynomial(tau, mean, std::move(hs));
}

inline MatrixCurve fit_matrix_curve(const std::vector<Matrix>& samples, double tau, double drop_below = 1e-12) {
    const auto rows = static_cast<int>(samples.front().rows());
    const auto cols = static_cast<int>(samples.front().cols());
    std::vector<Curve> entries;
    std::vector<double> column(samples.size());
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) {
            for (std::size_t k = 0; k < samples.size(); ++k) column[k] = samples[k](i, j);
            entries.emplace_back(fit_trig(column, tau, drop_below));
        }
    return MatrixCurve(rows, cols, std::move(entries));
}

struct SynthesisOptions {
    RiccatiOptions riccati;
    EtaOptions eta;
    /// Samples per period for the trigonometric fit of the optimal policy.
    int policy_samples = 512;
};

struct OptimalSolution {
    PeriodicMatrixSolution P;
    PeriodicMatrixSolution Pi;
    PeriodicVectorSolution eta;
    FeedbackPolicy policy;
    ValueReport value;
};

/// Optimal closed-loop triple (Theta0, Thetabar0, v0) as trigonometric
/// curves fitted to the gains at equispaced times.
inline FeedbackPolicy optimal_policy(const PeriodicModel& model, const PeriodicMatrixSolution& P,
                                     const PeriodicMatrixSolution& Pi, const PeriodicVectorSolution& eta,
                                     int samples = 512) {
    std::vector<Matrix> theta, thetabar, v;
    for (int i = 0; i < samples; ++i) {
        const double t = model.tau * i / samples;
        const auto s = eval_coefficients(model, t);
        const Matrix p = P(t);
        const Matrix th = gain_theta0(s, p);
        theta.push_back(th);
        thetabar.push_back(gain_thetahat0(s, Pi(t), p) - th);
        v.push_back(offset_v0(s, eta(t), p));
    }
    return {fit_matrix_curve(theta, model.tau), fit_matrix_curve(thetabar, model.tau), fit_matrix_curve(v, model.tau)};
}

inline OptimalSolution synthesize(const PeriodicModel& model, const SynthesisOptions& opt = {}) {
    OptimalSolution sol;
    sol.P = solve_periodic_riccati_P(model, opt.riccati);
    sol.Pi = solve_periodic_riccati_Pi(model, sol.P, opt.riccati);
    EtaOptions eo = opt.eta;
    eo.grid = opt.riccati.grid;
    sol.eta = solve_periodic_eta(model, sol.Pi, sol.P, eo);
    sol.policy = optimal_policy(model, sol.P, sol.Pi, sol.eta, opt.policy_samples);
    sol.value = value_function(model, sol.P, sol.eta);
    return sol;
}

} // namespace pmflq
