#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "pmflq/errors.hpp"
#include "pmflq/numerics.hpp"

namespace pmflq {

struct Harmonic {
    int multiple = 1;
    double cos_coeff = 0.0;
    double sin_coeff = 0.0;
};

/// c0 + sum_k (a_k cos(k w t) + b_k sin(k w t)) with w = 2 pi / tau.
class TrigPolynomial {
public:
    TrigPolynomial() = default;

    TrigPolynomial(double tau, double constant, std::vector<Harmonic> harmonics = {})
        : tau_(tau), constant_(constant), harmonics_(std::move(harmonics)) {
        if (!(tau > 0.0)) throw ValidationError("trigonometric curve needs tau > 0");
        std::sort(harmonics_.begin(), harmonics_.end(),
                  [](const Harmonic& a, const Harmonic& b) { return a.multiple < b.multiple; });
        for (std::size_t i = 0; i < harmonics_.size(); ++i) {
            if (harmonics_[i].multiple < 1) throw ValidationError("harmonic multiples must be positive");
            if (i > 0 && harmonics_[i].multiple == harmonics_[i - 1].multiple) {
                throw ValidationError("harmonic multiples must be distinct");
            }
        }
    }

    double tau() const { return tau_; }
    double base_frequency() const { return 2.0 * std::numbers::pi / tau_; }
    double constant_term() const { return constant_; }
    const std::vector<Harmonic>& harmonics() const { return harmonics_; }

    double operator()(double t) const {
        double value = constant_;
        if (harmonics_.empty()) return value;
        const double theta = base_frequency() * phase_of(t, tau_);
        const double c1 = std::cos(theta);
        const double s1 = std::sin(theta);
        // cos(k theta), sin(k theta) by rotation; exact calls every 16 steps
        // keep the recurrence from drifting for long harmonic lists.
        double ck = c1;
        double sk = s1;
        int k = 1;
        for (const auto& h : harmonics_) {
            while (k < h.multiple) {
                ++k;
                if (k % 16 == 0) {
                    ck = std::cos(k * theta);
                    sk = std::sin(k * theta);
                } else {
                    const double c = ck * c1 - sk * s1;
                    sk = sk * c1 + ck * s1;
                    ck = c;
                }
            }
            value += h.cos_coeff * ck + h.sin_coeff * sk;
        }
        return value;
    }

    TrigPolynomial scaled(double factor) const {
        TrigPolynomial out = *this;
        out.constant_ *= factor;
        for (auto& h : out.harmonics_) {
            h.cos_coeff *= factor;
            h.sin_coeff *= factor;
        }
        return out;
    }

    friend TrigPolynomial operator+(const TrigPolynomial& a, const TrigPolynomial& b) {
        if (std::abs(a.tau_ - b.tau_) > 1e-12 * a.tau_) throw ValidationError("cannot add curves with different periods");
        std::map<int, Harmonic> merged;
        for (const auto* p : {&a, &b}) {
            for (const auto& h : p->harmonics_) {
                auto& slot = merged[h.multiple];
                slot.multiple = h.multiple;
                slot.cos_coeff += h.cos_coeff;
                slot.sin_coeff += h.sin_coeff;
            }
        }
        std::vector<Harmonic> hs;
        for (const auto& [k, h] : merged) hs.push_back(h);
        return TrigPolynomial(a.tau_, a.constant_ + b.constant_, std::move(hs));
    }

private:
    double tau_ = 2.0 * std::numbers::pi;
    double constant_ = 0.0;
    std::vector<Harmonic> harmonics_;
};

/// Piecewise-constant periodic curve on a uniform grid (left-constant).
class TabularCurve {
public:
    TabularCurve(double tau, std::vector<double> values) : tau_(tau), values_(std::move(values)) {
        if (!(tau > 0.0)) throw ValidationError("tabular curve needs tau > 0");
        if (values_.empty()) throw ValidationError("tabular curve needs at least one value");
    }

    double tau() const { return tau_; }
    const std::vector<double>& values() const { return values_; }

    double operator()(double t) const {
        const double h = tau_ / static_cast<double>(values_.size());
        auto idx = static_cast<std::size_t>(std::floor(phase_of(t, tau_) / h));
        return values_[std::min(idx, values_.size() - 1)];
    }

private:
    double tau_;
    std::vector<double> values_;
};

using Curve = std::variant<TrigPolynomial, TabularCurve>;

inline double evaluate(const Curve& c, double t) {
    return std::visit([t](const auto& curve) { return curve(t); }, c);
}

struct MatrixHarmonic {
    int multiple = 1;
    Matrix cos_coeff;
    Matrix sin_coeff;
};

/// rows x cols grid of periodic scalar curves.
class MatrixCurve {
public:
    MatrixCurve() = default;

    MatrixCurve(int rows, int cols, std::vector<Curve> entries)
        : rows_(rows), cols_(cols), entries_(std::move(entries)) {
        if (rows < 1 || cols < 1) throw ValidationError("matrix curve needs positive dimensions");
        if (entries_.size() != static_cast<std::size_t>(rows * cols)) {
            throw ValidationError("matrix curve entry count does not match its shape");
        }
    }

    static MatrixCurve constant(const Matrix& value, double tau) {
        std::vector<Curve> entries;
        for (Eigen::Index i = 0; i < value.rows(); ++i)
            for (Eigen::Index j = 0; j < value.cols(); ++j) entries.emplace_back(TrigPolynomial(tau, value(i, j)));
        return MatrixCurve(static_cast<int>(value.rows()), static_cast<int>(value.cols()), std::move(entries));
    }

    static MatrixCurve zero(int rows, int cols, double tau) {
        return constant(Matrix::Zero(rows, cols), tau);
    }

    /// C0 + sum_k (Ccos_k cos(k w t) + Csin_k sin(k w t)).
    static MatrixCurve trig(double tau, const Matrix& constant_term, const std::vector<MatrixHarmonic>& harmonics) {
        const auto rows = constant_term.rows();
        const auto cols = constant_term.cols();
        std::vector<Curve> entries;
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index j = 0; j < cols; ++j) {
                std::vector<Harmonic> hs;
                for (const auto& h : harmonics) {
                    const double a = h.cos_coeff.size() ? h.cos_coeff(i, j) : 0.0;
                    const double b = h.sin_coeff.size() ? h.sin_coeff(i, j) : 0.0;
                    if (a != 0.0 || b != 0.0) hs.push_back({h.multiple, a, b});
                }
                entries.emplace_back(TrigPolynomial(tau, constant_term(i, j), std::move(hs)));
            }
        }
        return MatrixCurve(static_cast<int>(rows), static_cast<int>(cols), std::move(entries));
    }

    static MatrixCurve tabular(double tau, const std::vector<Matrix>& table) {
        if (table.empty()) throw ValidationError("empty table");
        const auto rows = table.front().rows();
        const auto cols = table.front().cols();
        std::vector<Curve> entries;
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index j = 0; j < cols; ++j) {
                std::vector<double> values;
                for (const auto& m : table) {
                    if (m.rows() != rows || m.cols() != cols) throw ValidationError("table entries have mixed shapes");
                    values.push_back(m(i, j));
                }
                entries.emplace_back(TabularCurve(tau, std::move(values)));
            }
        }
        return MatrixCurve(static_cast<int>(rows), static_cast<int>(cols), std::move(entries));
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    bool empty() const { return entries_.empty(); }
    const Curve& entry(int i, int j) const { return entries_[static_cast<std::size_t>(i * cols_ + j)]; }

    double tau() const {
        return entries_.empty() ? 0.0 : std::visit([](const auto& c) { return c.tau(); }, entries_.front());
    }

    bool is_trig() const {
        return std::all_of(entries_.begin(), entries_.end(),
                           [](const Curve& c) { return std::holds_alternative<TrigPolynomial>(c); });
    }

    Matrix operator()(double t) const {
        Matrix m(rows_, cols_);
        for (int i = 0; i < rows_; ++i)
            for (int j = 0; j < cols_; ++j) m(i, j) = evaluate(entry(i, j), t);
        return m;
    }

    /// Entrywise sum; both operands must be trigonometric.
    friend MatrixCurve operator+(const MatrixCurve& a, const MatrixCurve& b) {
        if (a.rows_ != b.rows_ || a.cols_ != b.cols_) throw SizeMismatch("matrix curve shapes differ");
        if (!a.is_trig() || !b.is_trig()) throw ValidationError("only trigonometric curves can be added");
        std::vector<Curve> entries;
        for (std::size_t k = 0; k < a.entries_.size(); ++k) {
            entries.emplace_back(std::get<TrigPolynomial>(a.entries_[k]) + std::get<TrigPolynomial>(b.entries_[k]));
        }
        return MatrixCurve(a.rows_, a.cols_, std::move(entries));
    }

    /// (M + M^T) / 2 entrywise where the representations allow it.
    MatrixCurve symmetrized() const {
        if (rows_ != cols_) throw SizeMismatch("only square curves can be symmetrized");
        std::vector<Curve> entries = entries_;
        for (int i = 0; i < rows_; ++i) {
            for (int j = i + 1; j < cols_; ++j) {
                const Curve& a = entry(i, j);
                const Curve& b = entry(j, i);
                std::optional<Curve> avg;
                if (std::holds_alternative<TrigPolynomial>(a) && std::holds_alternative<TrigPolynomial>(b)) {
                    avg = (std::get<TrigPolynomial>(a) + std::get<TrigPolynomial>(b)).scaled(0.5);
                } else if (std::holds_alternative<TabularCurve>(a) && std::holds_alternative<TabularCurve>(b)) {
                    const auto& va = std::get<TabularCurve>(a).values();
                    const auto& vb = std::get<TabularCurve>(b).values();
                    if (va.size() == vb.size()) {
                        std::vector<double> v(va.size());
                        for (std::size_t k = 0; k < v.size(); ++k) v[k] = 0.5 * (va[k] + vb[k]);
                        avg = TabularCurve(std::get<TabularCurve>(a).tau(), std::move(v));
                    }
                }
                if (avg) {
                    entries[static_cast<std::size_t>(i * cols_ + j)] = *avg;
                    entries[static_cast<std::size_t>(j * cols_ + i)] = *avg;
                }
            }
        }
        return MatrixCurve(rows_, cols_, std::move(entries));
    }

    /// Largest table length among the entries (0 when all are trigonometric).
    std::size_t table_resolution() const {
        std::size_t res = 0;
        for (const auto& c : entries_) {
            if (const auto* tab = std::get_if<TabularCurve>(&c)) res = std::max(res, tab->values().size());
        }
        return res;
    }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<Curve> entries_;
};

/// Coefficients of the periodic mean-field LQ problem. Hat coefficients
/// (A + Abar, ...) are derived on evaluation, never stored.
struct PeriodicModel {
    int n = 1;
    int m = 1;
    double tau = 1.0;
    MatrixCurve A, Abar, B, Bbar, C, Cbar, D, Dbar;
    MatrixCurve b, sigma;
    MatrixCurve Q, Qbar, S, Sbar, R, Rbar;
    MatrixCurve q, rho;

    static PeriodicModel zeros(int n, int m, double tau) {
        PeriodicModel model;
        model.n = n;
        model.m = m;
        model.tau = tau;
        for (auto* c : {&model.A, &model.Abar, &model.C, &model.Cbar, &model.Q, &model.Qbar}) *c = MatrixCurve::zero(n, n, tau);
        for (auto* c : {&model.B, &model.Bbar, &model.D, &model.Dbar}) *c = MatrixCurve::zero(n, m, tau);
        for (auto* c : {&model.S, &model.Sbar}) *c = MatrixCurve::zero(m, n, tau);
        for (auto* c : {&model.R, &model.Rbar}) *c = MatrixCurve::zero(m, m, tau);
        for (auto* c : {&model.b, &model.sigma, &model.q}) *c = MatrixCurve::zero(n, 1, tau);
        model.rho = MatrixCurve::zero(m, 1, tau);
        return model;
    }

    /// Named access used by config loading and validation.
    std::vector<std::pair<std::string, MatrixCurve*>> named_curves() {
        return {{"A", &A},     {"Abar", &Abar}, {"B", &B},         {"Bbar", &Bbar}, {"C", &C},
                {"Cbar", &Cbar}, {"D", &D},     {"Dbar", &Dbar},   {"b", &b},       {"sigma", &sigma},
                {"Q", &Q},     {"Qbar", &Qbar}, {"S", &S},         {"Sbar", &Sbar}, {"R", &R},
                {"Rbar", &Rbar}, {"q", &q},     {"rho", &rho}};
    }
    std::vector<std::pair<std::string, const MatrixCurve*>> named_curves() const {
        auto list = const_cast<PeriodicModel*>(this)->named_curves();
        std::vector<std::pair<std::string, const MatrixCurve*>> out;
        for (auto& [name, ptr] : list) out.emplace_back(name, ptr);
        return out;
    }

    std::pair<int, int> expected_shape(const std::string& name) const {
        static const std::map<std::string, char> kinds = {
            {"A", 'N'}, {"Abar", 'N'}, {"C", 'N'}, {"Cbar", 'N'}, {"Q", 'N'}, {"Qbar", 'N'},
            {"B", 'B'}, {"Bbar", 'B'}, {"D", 'B'}, {"Dbar", 'B'},
            {"S", 'S'}, {"Sbar", 'S'}, {"R", 'R'}, {"Rbar", 'R'},
            {"b", 'v'}, {"sigma", 'v'}, {"q", 'v'}, {"rho", 'u'}};
        switch (kinds.at(name)) {
            case 'N': return {n, n};
            case 'B': return {n, m};
            case 'S': return {m, n};
            case 'R': return {m, m};
            case 'v': return {n, 1};
            default: return {m, 1};
        }
    }
};

/// Closed-loop triple u = Theta X + Thetabar E[X] + v.
struct FeedbackPolicy {
    MatrixCurve Theta;
    MatrixCurve Thetabar;
    MatrixCurve v;

    static FeedbackPolicy zeros(int n, int m, double tau) {
        return {MatrixCurve::zero(m, n, tau), MatrixCurve::zero(m, n, tau), MatrixCurve::zero(m, 1, tau)};
    }
};

struct PolicySample {
    Matrix Theta, Thetabar, Thetahat;
    Vector v;
};

struct CoefficientSample {
    double t = 0.0;
    Matrix A, Abar, B, Bbar, C, Cbar, D, Dbar;
    Vector b, sigma;
    Matrix Q, Qbar, S, Sbar, R, Rbar;
    Vector q, rho;
    Matrix Ahat, Bhat, Chat, Dhat, Qhat, Shat, Rhat;
    std::optional<PolicySample> policy;
};

inline CoefficientSample eval_coefficients(const PeriodicModel& model, double t) {
    CoefficientSample s;
    s.t = t;
    s.A = model.A(t);
    s.Abar = model.Abar(t);
    s.B = model.B(t);
    s.Bbar = model.Bbar(t);
    s.C = model.C(t);
    s.Cbar = model.Cbar(t);
    s.D = model.D(t);
    s.Dbar = model.Dbar(t);
    s.b = model.b(t);
    s.sigma = model.sigma(t);
    s.Q = model.Q(t);
    s.Qbar = model.Qbar(t);
    s.S = model.S(t);
    s.Sbar = model.Sbar(t);
    s.R = model.R(t);
    s.Rbar = model.Rbar(t);
    s.q = model.q(t);
    s.rho = model.rho(t);
    s.Ahat = s.A + s.Abar;
    s.Bhat = s.B + s.Bbar;
    s.Chat = s.C + s.Cbar;
    s.Dhat = s.D + s.Dbar;
    s.Qhat = s.Q + s.Qbar;
    s.Shat = s.S + s.Sbar;
    s.Rhat = s.R + s.Rbar;
    return s;
}

inline PolicySample eval_policy(const FeedbackPolicy& policy, double t) {
    PolicySample p;
    p.Theta = policy.Theta(t);
    p.Thetabar = policy.Thetabar(t);
    p.Thetahat = p.Theta + p.Thetabar;
    p.v = policy.v(t);
    return p;
}

inline CoefficientSample eval_coefficients(const PeriodicModel& model, double t, const FeedbackPolicy& policy) {
    CoefficientSample s = eval_coefficients(model, t);
    s.policy = eval_policy(policy, t);
    return s;
}

/// Coefficients of the closed-loop state equation
///   dX = (Ms X + Mm E[X] + a) dt + (Gs X + Gm E[X] + s) dW.
/// drift_state + drift_mean = Ahat + Bhat Thetahat, diff_state + diff_mean = Chat + Dhat Thetahat.
struct ClosedLoopMatrices {
    Matrix drift_state, drift_mean;
    Vector drift_affine;
    Matrix diff_state, diff_mean;
    Vector diff_affine;
};

inline ClosedLoopMatrices closed_loop_matrices(const CoefficientSample& s) {
    if (!s.policy) throw MissingPolicy("closed-loop matrices need a policy sample");
    const auto& p = *s.policy;
    ClosedLoopMatrices cl;
    cl.drift_state = s.A + s.B * p.Theta;
    cl.drift_mean = s.Abar + s.B * p.Thetabar + s.Bbar * p.Theta + s.Bbar * p.Thetabar;
    cl.drift_affine = s.Bhat * p.v + s.b;
    cl.diff_state = s.C + s.D * p.Theta;
    cl.diff_mean = s.Cbar + s.D * p.Thetabar + s.Dbar * p.Theta + s.Dbar * p.Thetabar;
    cl.diff_affine = s.Dhat * p.v + s.sigma;
    return cl;
}

struct AssumptionReport {
    double alpha_R = 0.0;
    double alpha_Rhat = 0.0;
    double alpha_QS = 0.0;
    double alpha_QShat = 0.0;
    int grid_size = 0;
    double threshold = 0.0;
    bool passed = false;
};

/// Certifies uniform positive definiteness of R, Rhat, Q - S'R^{-1}S and
/// Qhat - Shat'Rhat^{-1}Shat by their minimum eigenvalues on a uniform grid.
inline AssumptionReport check_assumption_a2(const PeriodicModel& model, int grid_points = 2048,
                                            double threshold = 1e-8) {
    if (grid_points < 2) throw ValidationError("assumption check needs at least two grid points");
    AssumptionReport report;
    report.grid_size = grid_points;
    report.threshold = threshold;
    report.alpha_R = report.alpha_Rhat = report.alpha_QS = report.alpha_QShat = std::numeric_limits<double>::infinity();
    for (int i = 0; i < grid_points; ++i) {
        const double t = model.tau * i / grid_points;
        const auto s = eval_coefficients(model, t);
        Matrix lr, lrh;
        try {
            lr = factor_pd(symmetrize(s.R));
        } catch (const NotPositiveDefinite&) {
            throw SingularR("R(t) is not positive definite at t=" + std::to_string(t));
        }
        try {
            lrh = factor_pd(symmetrize(s.Rhat));
        } catch (const NotPositiveDefinite&) {
            throw SingularR("Rhat(t) is not positive definite at t=" + std::to_string(t));
        }
        report.alpha_R = std::min(report.alpha_R, min_eigenvalue_sym(s.R));
        report.alpha_Rhat = std::min(report.alpha_Rhat, min_eigenvalue_sym(s.Rhat));
        const Matrix qs = s.Q - s.S.transpose() * cholesky_solve(lr, s.S);
        const Matrix qsh = s.Qhat - s.Shat.transpose() * cholesky_solve(lrh, s.Shat);
        report.alpha_QS = std::min(report.alpha_QS, min_eigenvalue_sym(qs));
        report.alpha_QShat = std::min(report.alpha_QShat, min_eigenvalue_sym(qsh));
    }
    report.passed = report.alpha_R > threshold && report.alpha_Rhat > threshold && report.alpha_QS > threshold &&
                    report.alpha_QShat > threshold;
    return report;
}

namespace detail {
inline double max_asymmetry(const MatrixCurve& curve, double tau) {
    const std::size_t samples = std::max<std::size_t>(512, 2 * curve.table_resolution());
    double worst = 0.0;
    for (std::size_t k = 0; k < samples; ++k) {
        const double t = tau * (static_cast<double>(k) + 0.5) / static_cast<double>(samples);
        const Matrix m = curve(t);
        worst = std::max(worst, sup_norm(m - m.transpose()));
    }
    return worst;
}
} // namespace detail

/// Checks shapes and periods, rejects asymmetric Q, Qbar, R, Rbar (beyond
/// 1e-12) and returns a copy with those curves symmetrized.
inline PeriodicModel validated(PeriodicModel model) {
    if (!(model.tau > 0.0)) throw ValidationError("tau must be positive");
    if (model.n < 1 || model.m < 1) throw ValidationError("dimensions must be positive");
    for (auto& [name, curve] : model.named_curves()) {
        if (curve->empty()) throw ValidationError("coefficient " + name + " is missing");
        const auto [r, c] = model.expected_shape(name);
        if (curve->rows() != r || curve->cols() != c) {
            throw ValidationError("coefficient " + name + " has shape " + std::to_string(curve->rows()) + "x" +
                                  std::to_string(curve->cols()) + ", expected " + std::to_string(r) + "x" +
                                  std::to_string(c));
        }
        if (std::abs(curve->tau() - model.tau) > 1e-12 * model.tau) {
            throw ValidationError("coefficient " + name + " has a period different from tau");
        }
    }
    for (auto* curve : {&model.Q, &model.Qbar, &model.R, &model.Rbar}) {
        const double asym = detail::max_asymmetry(*curve, model.tau);
        if (asym > 1e-12) {
            throw ValidationError("symmetric coefficient has asymmetry " + std::to_string(asym));
        }
        *curve = curve->symmetrized();
    }
    return model;
}

inline void check_policy_shape(const PeriodicModel& model, const FeedbackPolicy& policy) {
    auto check = [&](const MatrixCurve& c, int r, int k, const char* name) {
        if (c.empty() || c.rows() != r || c.cols() != k) {
            throw ValidationError(std::string("policy component ") + name + " has the wrong shape");
        }
        if (std::abs(c.tau() - model.tau) > 1e-12 * model.tau) {
            throw ValidationError(std::string("policy component ") + name + " has a period different from tau");
        }
    };
    check(policy.Theta, model.m, model.n, "Theta");
    check(policy.Thetabar, model.m, model.n, "Thetabar");
    check(policy.v, model.m, 1, "v");
}

/// Coefficient samples on the half-step lattice t = k h / 2 of a uniform
/// grid with `steps` intervals per period, for RK4 sweeps that revisit the
/// same times many times.
class CoefficientTable {
public:
    CoefficientTable(const PeriodicModel& model, int steps, const FeedbackPolicy* policy = nullptr)
        : tau_(model.tau), steps_(steps) {
        if (steps < 1) throw ValidationError("coefficient table needs at least one step");
        samples_.reserve(static_cast<std::size_t>(2 * steps));
        for (int k = 0; k < 2 * steps; ++k) {
            const double t = tau_ * k / (2.0 * steps);
            samples_.push_back(policy ? eval_coefficients(model, t, *policy) : eval_coefficients(model, t));
        }
    }

    int steps() const { return steps_; }
    double step() const { return tau_ / steps_; }
    double tau() const { return tau_; }

    const CoefficientSample& half_node(long long k) const {
        const long long count = 2LL * steps_;
        return samples_[static_cast<std::size_t>(((k % count) + count) % count)];
    }

    /// Sample at t, which must sit on the half-step lattice modulo tau.
    const CoefficientSample& at(double t) const {
        const double x = phase_of(t, tau_) / (0.5 * step());
        const long long k = std::llround(x);
        if (std::abs(x - static_cast<double>(k)) > 1e-6) {
            throw NotAGridNode("time " + std::to_string(t) + " is not on the coefficient lattice");
        }
        return half_node(k);
    }

private:
    double tau_;
    int steps_;
    std::vector<CoefficientSample> samples_;
};

} // namespace pmflq
