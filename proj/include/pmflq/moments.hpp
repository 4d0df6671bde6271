#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "pmflq/model.hpp"
#include "pmflq/numerics.hpp"

namespace pmflq {

/// Mean and centered covariance of the state law at one instant.
struct MomentState {
    Vector mean;
    Matrix cov;
};

inline double moment_distance(const MomentState& a, const MomentState& b) {
    return std::max((a.mean - b.mean).cwiseAbs().maxCoeff(), sup_norm(a.cov - b.cov));
}

/// Y' = (Ahat + Bhat Thetahat) Y + Bhat v + b
/// V' = (A+B Theta) V + V (A+B Theta)' + (C+D Theta) V (C+D Theta)' + m m'
/// with m = (Chat + Dhat Thetahat) Y + Dhat v + sigma. `homogeneous` drops
/// the affine forcing (used to build the period maps).
inline MomentState moment_rhs(const ClosedLoopMatrices& cl, const MomentState& x, bool homogeneous = false) {
    MomentState d;
    const Matrix mean_drift = cl.drift_state + cl.drift_mean;
    d.mean = mean_drift * x.mean;
    d.cov = cl.drift_state * x.cov + x.cov * cl.drift_state.transpose() + cl.diff_state * x.cov * cl.diff_state.transpose();
    const Vector m = (cl.diff_state + cl.diff_mean) * x.mean;
    if (homogeneous) {
        d.cov += m * m.transpose();
    } else {
        d.mean += cl.drift_affine;
        const Vector mm = m + cl.diff_affine;
        d.cov += mm * mm.transpose();
    }
    d.cov = symmetrize(d.cov);
    return d;
}

inline MomentState moment_rhs(const PeriodicModel& model, const FeedbackPolicy& policy, double t,
                              const MomentState& x) {
    return moment_rhs(closed_loop_matrices(eval_coefficients(model, t, policy)), x);
}

/// E F = <Ka, V> + <(Ka + Kb) Y, Y> + <Kc, Y> + Kd for a law with mean Y
/// and covariance V.
struct CostDecomposition {
    Matrix Ka;
    Matrix Kb;
    Vector Kc;
    double Kd = 0.0;

    double expected_cost(const MomentState& x) const {
        return (Ka.cwiseProduct(x.cov)).sum() + x.mean.dot((Ka + Kb) * x.mean) + Kc.dot(x.mean) + Kd;
    }
};

inline CostDecomposition cost_decomposition(const CoefficientSample& s) {
    if (!s.policy) throw MissingPolicy("cost decomposition needs a policy sample");
    const auto& p = *s.policy;
    CostDecomposition k;
    k.Ka = symmetrize(s.Q + s.S.transpose() * p.Theta + p.Theta.transpose() * s.S +
                      p.Theta.transpose() * s.R * p.Theta);
    const Matrix hat = symmetrize(s.Qhat + s.Shat.transpose() * p.Thetahat + p.Thetahat.transpose() * s.Shat +
                                  p.Thetahat.transpose() * s.Rhat * p.Thetahat);
    k.Kb = hat - k.Ka;
    k.Kc = 2.0 * ((s.Shat + s.Rhat * p.Thetahat).transpose() * p.v + s.q + p.Thetahat.transpose() * s.rho);
    k.Kd = p.v.dot(s.Rhat * p.v) + 2.0 * s.rho.dot(p.v);
    return k;
}

inline CostDecomposition cost_decomposition(const PeriodicModel& model, const FeedbackPolicy& policy, double t) {
    return cost_decomposition(eval_coefficients(model, t, policy));
}

namespace detail {
inline Vector pack(const MomentState& x) {
    Vector y(x.mean.size() + x.cov.size());
    y << x.mean, flatten(x.cov);
    return y;
}

inline MomentState unpack(const Vector& y, Eigen::Index n) {
    return {y.head(n), unflatten(y.tail(n * n), n, n)};
}
} // namespace detail

/// RK4 propagation of the moment ODE. Spans starting on the table lattice
/// reuse precomputed closed-loop matrices; other spans evaluate directly.
class MomentPropagator {
public:
    MomentPropagator(const PeriodicModel& model, const FeedbackPolicy& policy, int grid = 4096)
        : model_(&model), policy_(&policy), grid_(grid) {
        check_policy_shape(model, policy);
        const double h = model.tau / grid;
        closed_loop_.reserve(static_cast<std::size_t>(2 * grid));
        for (int k = 0; k < 2 * grid; ++k) {
            const auto sample = eval_coefficients(model, 0.5 * h * k, policy);
            closed_loop_.push_back(closed_loop_matrices(sample));
            costs_.push_back(cost_decomposition(sample));
        }
    }

    const PeriodicModel& model() const { return *model_; }
    const FeedbackPolicy& policy() const { return *policy_; }
    int grid() const { return grid_; }
    double step() const { return model_->tau / grid_; }

    /// Integrates from t0 to t1 in about |t1-t0|/h steps (rounded up to an
    /// even count when `even` is set), calling observer(t, state) at every node.
    template <class Observer>
    MomentState propagate(const MomentState& start, double t0, double t1, Observer&& observer, bool homogeneous = false,
                          bool even = false) const {
        const double h = step();
        int steps = std::max(1, static_cast<int>(std::lround(std::abs(t1 - t0) / h)));
        if (even && steps % 2 != 0) ++steps;
        const double x0 = phase_of(t0, model_->tau) / (0.5 * h);
        const bool on_lattice = std::abs(x0 - std::round(x0)) < 1e-7 && std::abs(std::abs(t1 - t0) - steps * h) < 1e-9 * h * steps;
        const auto n = static_cast<Eigen::Index>(model_->n);
        auto rhs = [&](double t, const Vector& y) {
            const MomentState x = detail::unpack(y, n);
            const MomentState d = on_lattice ? moment_rhs(lattice(t), x, homogeneous)
                                             : moment_rhs(closed_loop_matrices(eval_coefficients(*model_, t, *policy_)), x,
                                                          homogeneous);
            return detail::pack(d);
        };
        auto resym = [&](Vector& y) {
            y.tail(n * n) = flatten(symmetrize(unflatten(y.tail(n * n), n, n)));
        };
        const Vector end = integrate_ode_observed(
            rhs, detail::pack(start), TimeGrid(t0, t1, steps),
            [&](int, double t, const Vector& y) { observer(t, detail::unpack(y, n)); }, resym);
        return detail::unpack(end, n);
    }

    MomentState propagate(const MomentState& start, double t0, double t1, bool homogeneous = false) const {
        return propagate(start, t0, t1, [](double, const MomentState&) {}, homogeneous);
    }

    const ClosedLoopMatrices& lattice(double t) const { return closed_loop_[lattice_index(t)]; }

    /// Cost decomposition at t, from the lattice when t sits on it.
    CostDecomposition cost_at(double t) const {
        const double x = phase_of(t, model_->tau) / (0.5 * step());
        if (std::abs(x - std::round(x)) < 1e-7) return costs_[lattice_index(t)];
        return cost_decomposition(*model_, *policy_, t);
    }

private:
    std::size_t lattice_index(double t) const {
        const double x = phase_of(t, model_->tau) / (0.5 * step());
        const long long count = 2LL * grid_;
        return static_cast<std::size_t>(((std::llround(x) % count) + count) % count);
    }

    const PeriodicModel* model_;
    const FeedbackPolicy* policy_;
    int grid_;
    std::vector<ClosedLoopMatrices> closed_loop_;
    std::vector<CostDecomposition> costs_;
};

/// Periodic fixed point of the moment dynamics on a uniform grid over
/// [0, tau], Hermite-interpolated between nodes.
struct PeriodicMomentOrbit {
    double tau = 1.0;
    std::vector<MomentState> states;
    std::vector<MomentState> derivatives;
    double contraction_rho_mean = 0.0;
    double contraction_rho_cov = 0.0;
    double gap = 0.0;

    int steps() const { return static_cast<int>(states.size()) - 1; }
    double step() const { return tau / steps(); }

    MomentState at(double t) const {
        const double x = phase_of(t, tau) / step();
        auto i = static_cast<std::size_t>(std::floor(x));
        if (i >= static_cast<std::size_t>(steps())) i = static_cast<std::size_t>(steps()) - 1;
        const double s = std::clamp(x - static_cast<double>(i), 0.0, 1.0);
        const auto& a = states[i];
        const auto& b = states[i + 1];
        const auto& da = derivatives[i];
        const auto& db = derivatives[i + 1];
        return {hermite_value<Vector>(a.mean, b.mean, da.mean, db.mean, step(), s),
                symmetrize(hermite_value<Matrix>(a.cov, b.cov, da.cov, db.cov, step(), s))};
    }
};

struct OrbitOptions {
    double tol = 1e-8;
    int grid = 4096;
    double margin = 1e-6;
};

/// Fixed point of the affine period maps Y0 -> Psi Y0 + r and
/// svec V0 -> L svec V0 + f, then one period of propagation from it.
inline PeriodicMomentOrbit periodic_moment_orbit(const MomentPropagator& prop, const OrbitOptions& opt = {}) {
    const auto& model = prop.model();
    const int n = model.n;
    const double tau = model.tau;
    const MomentState zero{Vector::Zero(n), Matrix::Zero(n, n)};

    Matrix psi(n, n);
    for (int i = 0; i < n; ++i) {
        MomentState e = zero;
        e.mean(i) = 1.0;
        psi.col(i) = prop.propagate(e, 0.0, tau, true).mean;
    }
    const int d = n * (n + 1) / 2;
    Matrix L(d, d);
    int col = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
            MomentState e = zero;
            e.cov(i, j) = 1.0;
            e.cov(j, i) = 1.0;
            L.col(col++) = svec(prop.propagate(e, 0.0, tau, true).cov);
        }

    PeriodicMomentOrbit orbit;
    orbit.tau = tau;
    orbit.contraction_rho_mean = spectral_radius(psi);
    orbit.contraction_rho_cov = spectral_radius(L);
    if (orbit.contraction_rho_mean >= 1.0 - opt.margin || orbit.contraction_rho_cov >= 1.0 - opt.margin) {
        throw NotAdmissible("moment period maps are not contractions (rho_mean=" +
                            std::to_string(orbit.contraction_rho_mean) +
                            ", rho_cov=" + std::to_string(orbit.contraction_rho_cov) + ")");
    }

    MomentState start = zero;
    try {
        const Vector r = prop.propagate(zero, 0.0, tau).mean;
        start.mean = solve_linear(Matrix::Identity(n, n) - psi, r);
        MomentState probe{start.mean, Matrix::Zero(n, n)};
        const Vector f = svec(prop.propagate(probe, 0.0, tau).cov);
        start.cov = smat(solve_linear(Matrix::Identity(d, d) - L, f), n);
    } catch (const SingularMatrix& e) {
        throw SingularAnchor(std::string("moment fixed-point system is singular: ") + e.what());
    }

    orbit.states.reserve(static_cast<std::size_t>(prop.grid()) + 1);
    const MomentState end = prop.propagate(start, 0.0, tau, [&](double, const MomentState& x) { orbit.states.push_back(x); });
    orbit.gap = moment_distance(end, start);
    for (int i = 0; i < static_cast<int>(orbit.states.size()); ++i) {
        orbit.derivatives.push_back(moment_rhs(prop.lattice(i * prop.step()), orbit.states[static_cast<std::size_t>(i)]));
    }
    if (orbit.gap > opt.tol) {
        throw PeriodicityViolation("moment orbit does not close: gap " + std::to_string(orbit.gap));
    }
    return orbit;
}

inline PeriodicMomentOrbit periodic_moment_orbit(const PeriodicModel& model, const FeedbackPolicy& policy,
                                                 const OrbitOptions& opt = {}) {
    const MomentPropagator prop(model, policy, opt.grid);
    return periodic_moment_orbit(prop, opt);
}

/// (1/tau) int_0^tau E F dt over the periodic orbit.
inline double period_average_cost(const PeriodicModel& model, const FeedbackPolicy& policy,
                                  const PeriodicMomentOrbit& orbit) {
    const int G = orbit.steps();
    const double h = orbit.step();
    std::vector<double> f;
    for (int i = 0; i <= G; ++i) {
        f.push_back(cost_decomposition(model, policy, i * h).expected_cost(orbit.states[static_cast<std::size_t>(i)]));
    }
    if (G % 2 == 0) return simpson(f, h) / model.tau;
    // Odd grids fall back to the trapezoid rule.
    double s = 0.5 * (f.front() + f.back());
    for (int i = 1; i < G; ++i) s += f[static_cast<std::size_t>(i)];
    return s * h / model.tau;
}

/// (1/T) int_0^T E F dt from a start law with the given moments at time 0.
inline double finite_horizon_average(const MomentPropagator& prop, const MomentState& start, double T) {
    if (!(T > 0.0)) throw ValidationError("horizon must be positive");
    std::vector<double> f;
    prop.propagate(
        start, 0.0, T, [&](double t, const MomentState& x) { f.push_back(prop.cost_at(t).expected_cost(x)); }, false,
        true);
    return simpson(f, T / static_cast<double>(f.size() - 1)) / T;
}

inline double finite_horizon_average(const MomentPropagator& prop, const Vector& x, double T) {
    return finite_horizon_average(prop, MomentState{x, Matrix::Zero(x.size(), x.size())}, T);
}

/// Propagates the orbit state at s forward by t and returns its distance to
/// the orbit state at s + t.
inline double measure_flow_check(const MomentPropagator& prop, const PeriodicMomentOrbit& orbit, double s, double t) {
    const MomentState start = orbit.at(s);
    if (t == 0.0) return 0.0;
    const MomentState end = prop.propagate(start, s, s + t);
    return moment_distance(end, orbit.at(s + t));
}

struct OptimalityCheck {
    double gain_condition_sup = 0.0;
    double offset_condition_sup = 0.0;
    bool satisfied = false;
};

/// Moment-level optimality conditions of a candidate against the optimal
/// gains, on the candidate's own periodic orbit:
///   trace[(Theta* - Theta0) V (Theta* - Theta0)'] = 0,
///   v* - v0 + (Thetahat* - Thetahat0) Y = 0.
inline OptimalityCheck optimality_conditions(const FeedbackPolicy& candidate, const FeedbackPolicy& optimal,
                                             const PeriodicMomentOrbit& orbit, double threshold = 1e-7) {
    OptimalityCheck out;
    for (int i = 0; i <= orbit.steps(); ++i) {
        const double t = i * orbit.step();
        const auto c = eval_policy(candidate, t);
        const auto o = eval_policy(optimal, t);
        const auto& x = orbit.states[static_cast<std::size_t>(i)];
        const Matrix dth = c.Theta - o.Theta;
        out.gain_condition_sup = std::max(out.gain_condition_sup, std::abs((dth * x.cov * dth.transpose()).trace()));
        const Vector off = c.v - o.v + (c.Thetahat - o.Thetahat) * x.mean;
        out.offset_condition_sup = std::max(out.offset_condition_sup, off.cwiseAbs().maxCoeff());
    }
    out.satisfied = out.gain_condition_sup <= threshold && out.offset_condition_sup <= threshold;
    return out;
}

} // namespace pmflq
