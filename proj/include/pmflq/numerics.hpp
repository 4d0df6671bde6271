#pragma once

// Small dense numerical kernels shared by every solver in the library:
// fixed-step RK4, composite Simpson quadrature, pivoted Gaussian
// elimination, Cholesky, spectral radius and cubic Hermite interpolation.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "pmflq/errors.hpp"

namespace pmflq {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Uniform grid t0, t0+h, ..., t1 with `steps` intervals. Backward grids
/// (t1 < t0) have h < 0.
struct TimeGrid {
    double t0 = 0.0;
    double t1 = 1.0;
    int steps = 1;

    TimeGrid(double start, double end, int n) : t0(start), t1(end), steps(n) {
        if (n < 1) throw ValidationError("TimeGrid needs at least one step");
    }

    double step() const { return (t1 - t0) / steps; }
    double node(int i) const { return i == steps ? t1 : t0 + i * step(); }
};

namespace detail {
struct NoPostStep {
    void operator()(Vector&) const {}
};

inline bool all_finite(const Vector& y) {
    return y.allFinite();
}
} // namespace detail

/// Classical RK4 over `grid`, calling `observer(i, t_i, y_i)` at every node
/// (including the initial one). `post_step` may project the state after each
/// step, e.g. to re-symmetrize a flattened matrix. Returns the final state.
template <class Rhs, class Observer, class PostStep = detail::NoPostStep>
    requires std::invocable<Rhs&, double, const Vector&>
Vector integrate_ode_observed(Rhs&& rhs, const Vector& initial, const TimeGrid& grid,
                              Observer&& observer, PostStep&& post_step = {}) {
    if (!detail::all_finite(initial)) throw NonFiniteState("initial state is not finite");
    const double h = grid.step();
    Vector y = initial;
    Vector tmp(y.size());
    observer(0, grid.t0, y);
    for (int i = 0; i < grid.steps; ++i) {
        const double t = grid.node(i);
        const Vector k1 = rhs(t, y);
        tmp = y + 0.5 * h * k1;
        const Vector k2 = rhs(t + 0.5 * h, tmp);
        tmp = y + 0.5 * h * k2;
        const Vector k3 = rhs(t + 0.5 * h, tmp);
        tmp = y + h * k3;
        const Vector k4 = rhs(t + h, tmp);
        y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        post_step(y);
        if (!detail::all_finite(y)) {
            throw NonFiniteState("state became non-finite at t=" + std::to_string(grid.node(i + 1)));
        }
        observer(i + 1, grid.node(i + 1), y);
    }
    return y;
}

/// RK4 trajectory, one state per grid node; trajectory[0] == initial.
template <class Rhs, class PostStep = detail::NoPostStep>
    requires std::invocable<Rhs&, double, const Vector&>
std::vector<Vector> integrate_ode(Rhs&& rhs, const Vector& initial, const TimeGrid& grid,
                                  PostStep&& post_step = {}) {
    std::vector<Vector> trajectory;
    trajectory.reserve(static_cast<std::size_t>(grid.steps) + 1);
    integrate_ode_observed(
        std::forward<Rhs>(rhs), initial, grid,
        [&](int, double, const Vector& y) { trajectory.push_back(y); },
        std::forward<PostStep>(post_step));
    return trajectory;
}

/// Composite Simpson rule on node samples with spacing h (even panel count).
inline double simpson(std::span<const double> samples, double h) {
    const std::size_t panels = samples.size() - 1;
    if (samples.size() < 3 || panels % 2 != 0) {
        throw ValidationError("Simpson rule needs an even number of panels");
    }
    double odd = 0.0;
    double even = 0.0;
    for (std::size_t i = 1; i < panels; ++i) {
        (i % 2 == 1 ? odd : even) += samples[i];
    }
    return h / 3.0 * (samples.front() + 4.0 * odd + 2.0 * even + samples.back());
}

template <class F>
    requires std::invocable<F&, double>
double quadrature(F&& f, double t0, double t1, int panels) {
    if (panels < 2 || panels % 2 != 0) throw ValidationError("Simpson rule needs an even number of panels");
    const double h = (t1 - t0) / panels;
    std::vector<double> samples(static_cast<std::size_t>(panels) + 1);
    for (int i = 0; i <= panels; ++i) samples[static_cast<std::size_t>(i)] = f(i == panels ? t1 : t0 + i * h);
    return simpson(samples, h);
}

/// Gaussian elimination with partial pivoting and one refinement step.
inline Vector solve_linear(const Matrix& a, const Vector& rhs) {
    const Eigen::Index k = a.rows();
    if (a.cols() != k || rhs.size() != k) throw SizeMismatch("solve_linear expects a square system");
    const double scale = a.cwiseAbs().maxCoeff();
    if (!(scale > 0.0)) throw SingularMatrix("zero matrix");

    Matrix lu = a;
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(k));
    for (Eigen::Index i = 0; i < k; ++i) perm[static_cast<std::size_t>(i)] = i;
    for (Eigen::Index col = 0; col < k; ++col) {
        Eigen::Index pivot = col;
        for (Eigen::Index r = col + 1; r < k; ++r) {
            if (std::abs(lu(r, col)) > std::abs(lu(pivot, col))) pivot = r;
        }
        if (std::abs(lu(pivot, col)) < 1e-13 * scale) {
            throw SingularMatrix("pivot below 1e-13 * scale in column " + std::to_string(col));
        }
        if (pivot != col) {
            lu.row(pivot).swap(lu.row(col));
            std::swap(perm[static_cast<std::size_t>(pivot)], perm[static_cast<std::size_t>(col)]);
        }
        for (Eigen::Index r = col + 1; r < k; ++r) {
            lu(r, col) /= lu(col, col);
            lu.row(r).tail(k - col - 1) -= lu(r, col) * lu.row(col).tail(k - col - 1);
        }
    }

    auto substitute = [&](const Vector& b) {
        Vector y(k);
        for (Eigen::Index i = 0; i < k; ++i) {
            double s = b(perm[static_cast<std::size_t>(i)]);
            for (Eigen::Index j = 0; j < i; ++j) s -= lu(i, j) * y(j);
            y(i) = s;
        }
        for (Eigen::Index i = k - 1; i >= 0; --i) {
            double s = y(i);
            for (Eigen::Index j = i + 1; j < k; ++j) s -= lu(i, j) * y(j);
            y(i) = s / lu(i, i);
        }
        return y;
    };

    Vector x = substitute(rhs);
    x += substitute(rhs - a * x);
    const double residual = (a * x - rhs).cwiseAbs().maxCoeff();
    const double bound = 1e-10 * (1.0 + rhs.cwiseAbs().maxCoeff());
    if (!(residual <= bound)) {
        throw SingularMatrix("residual " + std::to_string(residual) + " exceeds bound");
    }
    return x;
}

/// Cholesky factor L with L*L^T = a. Rejects pivots <= 1e-12 * scale.
inline Matrix factor_pd(const Matrix& a) {
    const Eigen::Index k = a.rows();
    if (a.cols() != k) throw SizeMismatch("factor_pd expects a square matrix");
    const double scale = std::max(a.cwiseAbs().maxCoeff(), 1e-300);
    Matrix l = Matrix::Zero(k, k);
    for (Eigen::Index j = 0; j < k; ++j) {
        double d = a(j, j) - l.row(j).head(j).squaredNorm();
        if (!(d > 1e-12 * scale)) {
            throw NotPositiveDefinite("non-positive pivot at index " + std::to_string(j));
        }
        l(j, j) = std::sqrt(d);
        for (Eigen::Index i = j + 1; i < k; ++i) {
            l(i, j) = (a(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / l(j, j);
        }
    }
    return l;
}

/// Solves (L L^T) X = B for a Cholesky factor L.
inline Matrix cholesky_solve(const Matrix& l, const Matrix& b) {
    const Matrix y = l.triangularView<Eigen::Lower>().solve(b);
    return l.transpose().triangularView<Eigen::Upper>().solve(y);
}

/// Solves a X = b for symmetric positive definite a.
inline Matrix pd_solve(const Matrix& a, const Matrix& b) {
    return cholesky_solve(factor_pd(a), b);
}

/// Largest eigenvalue modulus: Hessenberg reduction followed by shifted
/// (Francis) QR sweeps, capped at max_iterations per eigenvalue.
inline double spectral_radius(const Matrix& a, int max_iterations = 40) {
    if (a.rows() != a.cols() || a.rows() < 1) throw SizeMismatch("spectral_radius expects a square matrix");
    if (!a.allFinite()) throw NonFiniteState("matrix has non-finite entries");
    Eigen::EigenSolver<Matrix> solver;
    solver.setMaxIterations(max_iterations * static_cast<int>(a.rows()));
    solver.compute(a, false);
    if (solver.info() != Eigen::Success) throw NoConvergence("QR iteration did not converge");
    return solver.eigenvalues().cwiseAbs().maxCoeff();
}

inline Matrix symmetrize(const Matrix& m) {
    return 0.5 * (m + m.transpose());
}

inline double min_eigenvalue_sym(const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetrize(m), Eigen::EigenvaluesOnly);
    return solver.eigenvalues().minCoeff();
}

inline double sup_norm(const Matrix& m) {
    return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

/// Row-major flattening of a matrix into a vector, and back.
inline Vector flatten(const Matrix& m) {
    Vector v(m.size());
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) v(i * m.cols() + j) = m(i, j);
    return v;
}

inline Matrix unflatten(const Eigen::Ref<const Vector>& v, Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = v(i * cols + j);
    return m;
}

/// Coordinates of a symmetric matrix on the basis {E_ii} and {E_ij + E_ji, i<j}.
inline Vector svec(const Matrix& m) {
    const Eigen::Index n = m.rows();
    Vector v(n * (n + 1) / 2);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i; j < n; ++j) v(k++) = m(i, j);
    return v;
}

inline Matrix smat(const Eigen::Ref<const Vector>& v, Eigen::Index n) {
    Matrix m(n, n);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i; j < n; ++j) {
            m(i, j) = v(k);
            m(j, i) = v(k);
            ++k;
        }
    return m;
}

/// Cubic Hermite interpolation on [0, h] at s in [0, 1]; works for any
/// Eigen expression type supporting linear combinations.
template <class T>
T hermite_value(const T& y0, const T& y1, const T& d0, const T& d1, double h, double s) {
    const double s2 = s * s;
    const double s3 = s2 * s;
    return (2 * s3 - 3 * s2 + 1) * y0 + (s3 - 2 * s2 + s) * h * d0 + (-2 * s3 + 3 * s2) * y1 +
           (s3 - s2) * h * d1;
}

template <class T>
T hermite_derivative(const T& y0, const T& y1, const T& d0, const T& d1, double h, double s) {
    const double s2 = s * s;
    return ((6 * s2 - 6 * s) / h) * (y0 - y1) + (3 * s2 - 4 * s + 1) * d0 + (3 * s2 - 2 * s) * d1;
}

/// Maps t onto [0, tau).
inline double phase_of(double t, double tau) {
    double r = std::fmod(t, tau);
    if (r < 0) r += tau;
    if (r >= tau) r = 0.0;
    return r;
}

/// Ordinary least squares fit y = a + b x; returns (slope, intercept, r^2).
struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
};

inline LineFit fit_line(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    if (n < 2 || y.size() != n) throw InsufficientData("line fit needs at least two points");
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    LineFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.r_squared = syy > 0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    return fit;
}

} // namespace pmflq
