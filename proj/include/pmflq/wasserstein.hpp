#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "pmflq/errors.hpp"
#include "pmflq/numerics.hpp"

namespace pmflq {

/// N points in R^n (one per row) observed at one time.
struct EmpiricalMeasure {
    Matrix points;
    double time_tag = 0.0;

    Eigen::Index size() const { return points.rows(); }
};

inline constexpr Eigen::Index kMaxAssignmentSize = 4096;

/// Minimum-cost perfect assignment on an N x N cost given by cost(i, j);
/// O(N^3) shortest augmenting paths with potentials. Returns the total cost
/// and fills `match` with the column assigned to each row.
template <class Cost>
double solve_assignment(Eigen::Index N, Cost&& cost, std::vector<Eigen::Index>* match = nullptr) {
    const double inf = std::numeric_limits<double>::infinity();
    const auto n = static_cast<std::size_t>(N);
    // 1-based arrays; p[j] is the row matched to column j, 0 = free.
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    std::vector<char> used(n + 1);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    if (match) match->assign(n, 0);
    std::vector<double> pair_cost;
    pair_cost.reserve(n);
    for (std::size_t j = 1; j <= n; ++j) {
        pair_cost.push_back(cost(static_cast<Eigen::Index>(p[j] - 1), static_cast<Eigen::Index>(j - 1)));
        if (match) (*match)[p[j] - 1] = static_cast<Eigen::Index>(j - 1);
    }
    // Summing in sorted order makes the total independent of which side is
    // the row set, so W2 is exactly symmetric.
    std::sort(pair_cost.begin(), pair_cost.end());
    double total = 0.0;
    for (double c : pair_cost) total += c;
    return total;
}

/// Exact 2-Wasserstein distance between two equal-size empirical measures
/// with uniform weights.
inline double wasserstein2(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
    if (a.size() != b.size() || a.points.cols() != b.points.cols()) {
        throw SizeMismatch("empirical measures must have equal size and dimension");
    }
    const Eigen::Index N = a.size();
    if (N == 0) throw SizeMismatch("empirical measures are empty");
    if (N > kMaxAssignmentSize) throw TooLarge("assignment size " + std::to_string(N) + " exceeds 4096");
    const Eigen::Index d = a.points.cols();
    // Row-major copies keep each point contiguous for the inner loop.
    std::vector<double> pa(static_cast<std::size_t>(N * d)), pb(pa.size());
    for (Eigen::Index i = 0; i < N; ++i)
        for (Eigen::Index k = 0; k < d; ++k) {
            pa[static_cast<std::size_t>(i * d + k)] = a.points(i, k);
            pb[static_cast<std::size_t>(i * d + k)] = b.points(i, k);
        }
    auto cost = [&](Eigen::Index i, Eigen::Index j) {
        const double* x = &pa[static_cast<std::size_t>(i * d)];
        const double* y = &pb[static_cast<std::size_t>(j * d)];
        double s = 0.0;
        for (Eigen::Index k = 0; k < d; ++k) {
            const double diff = x[k] - y[k];
            s += diff * diff;
        }
        return s;
    };
    const double total = solve_assignment(N, cost);
    return std::sqrt(std::max(0.0, total / static_cast<double>(N)));
}

} // namespace pmflq
