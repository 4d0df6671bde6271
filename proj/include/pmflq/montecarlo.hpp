#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <optional>
#include <map>
#include <ostream>
#include <thread>
#include <vector>

#include "pmflq/model.hpp"
#include "pmflq/numerics.hpp"
#include "pmflq/random.hpp"
#include "pmflq/stability.hpp"
#include "pmflq/wasserstein.hpp"

namespace pmflq {

enum class SimulationMode { exact_mean, particle };

/// Time stepping for the state SDE. The default is the explicit weak
/// order 2 scheme for scalar noise; Euler-Maruyama is weak order 1.
enum class Scheme { platen_weak2, euler_maruyama };

struct SimulationConfig {
    int paths = 4096;
    double dt = 0.0;       // 0 selects tau / 2048
    double horizon = 0.0;  // elapsed simulated time
    std::uint64_t seed = 42;
    SimulationMode mode = SimulationMode::exact_mean;
    Scheme scheme = Scheme::platen_weak2;
    double t0 = 0.0;                  // start time of the state equation
    std::vector<double> record_times; // absolute times with state snapshots
    int workers = 0;                  // 0 uses the hardware concurrency
    bool require_admissible = true;
};

/// Ensemble statistics per grid node plus state snapshots at recorded nodes.
struct PathEnsemble {
    int n = 1;
    int paths = 0;
    double t0 = 0.0;
    double dt = 0.0;
    int steps = 0;
    int steps_per_period = 0;
    double tau = 1.0;
    SimulationMode mode = SimulationMode::exact_mean;
    Scheme scheme = Scheme::platen_weak2;
    std::uint64_t seed = 0;
    std::vector<double> coupling_mean;  // (steps+1) x n: E X entering the coefficients
    std::vector<double> sample_mean;    // (steps+1) x n
    std::vector<double> sample_second;  // (steps+1) x n x n: (1/N) sum X X'
    std::map<int, Matrix> snapshots;    // node -> paths x n

    double time(int k) const { return t0 + k * dt; }

    Vector mean_at(int k) const {
        return Eigen::Map<const Vector>(&coupling_mean[static_cast<std::size_t>(k * n)], n);
    }
    Vector sample_mean_at(int k) const {
        return Eigen::Map<const Vector>(&sample_mean[static_cast<std::size_t>(k * n)], n);
    }
    Matrix sample_cov_at(int k) const {
        const Vector m = sample_mean_at(k);
        const Matrix s = Eigen::Map<const Matrix>(&sample_second[static_cast<std::size_t>(k * n * n)], n, n);
        return symmetrize(s - m * m.transpose());
    }

    /// Grid node of time t, or NotAGridNode.
    int node_of(double t) const {
        const double x = (t - t0) / dt;
        const long long k = std::llround(x);
        if (std::abs(x - static_cast<double>(k)) > 1e-7 || k < 0 || k > steps) {
            throw NotAGridNode("time " + std::to_string(t) + " is not a node of the simulation grid");
        }
        return static_cast<int>(k);
    }
};

/// u = Theta x + Thetabar mean + v.
inline Vector control(const PolicySample& p, const Vector& x, const Vector& mean) {
    return p.Theta * x + p.Thetabar * mean + p.v;
}

/// Running cost F(t, x, E x, u, E u) with <M, N> = tr(M'N).
inline double eval_F(const CoefficientSample& s, const Vector& x, const Vector& mean_x, const Vector& u,
                     const Vector& mean_u) {
    return x.dot(s.Q * x) + 2.0 * u.dot(s.S * x) + u.dot(s.R * u) + 2.0 * s.q.dot(x) + 2.0 * s.rho.dot(u) +
           mean_x.dot(s.Qbar * mean_x) + 2.0 * mean_u.dot(s.Sbar * mean_x) + mean_u.dot(s.Rbar * mean_u);
}

namespace detail {

inline constexpr int kPathBlock = 256;

template <int Dim>
using VecD = Eigen::Matrix<double, Dim, 1>;
template <int Dim>
using MatD = Eigen::Matrix<double, Dim, Dim>;

/// Closed-loop coefficients on the half-step lattice of the simulation grid,
/// indexed by phase.
template <int Dim>
struct PhaseTable {
    std::vector<MatD<Dim>> Ms, Mm, Gs, Gm;
    std::vector<VecD<Dim>> a, s;

    PhaseTable(const PeriodicModel& model, const FeedbackPolicy& policy, int per_period) {
        const double h = model.tau / per_period;
        for (int k = 0; k < 2 * per_period; ++k) {
            const auto cl = closed_loop_matrices(eval_coefficients(model, 0.5 * h * k, policy));
            Ms.push_back(cl.drift_state);
            Mm.push_back(cl.drift_mean);
            Gs.push_back(cl.diff_state);
            Gm.push_back(cl.diff_mean);
            a.push_back(cl.drift_affine);
            s.push_back(cl.diff_affine);
        }
    }
};

struct GridInfo {
    int steps = 0;
    int per_period = 0;
    int phase0 = 0;  // phase index of t0 on the node lattice
    double dt = 0.0;

    /// Half-lattice index of node k plus `half` half-steps.
    std::size_t half(int k, int half_steps = 0) const {
        const long long count = 2LL * per_period;
        const long long idx = 2LL * (phase0 + k) + half_steps;
        return static_cast<std::size_t>(((idx % count) + count) % count);
    }
};

template <int Dim>
void accumulate(double* sums, int n, const VecD<Dim>& x) {
    for (int i = 0; i < n; ++i) sums[i] += x(i);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) sums[n + i * n + j] += x(i) * x(j);
}

/// One step of dX = (M X + c0) dt + (G X + d) dW with coefficients (M0, G0,
/// d0) at t and (M1, G1, d1, c1) at t+h; c0 is folded into a0 by the caller.
template <int Dim>
VecD<Dim> sde_step(const VecD<Dim>& x, const VecD<Dim>& a0, const VecD<Dim>& b0, const MatD<Dim>& M1,
                   const VecD<Dim>& c1, const MatD<Dim>& G1, const VecD<Dim>& d1, double h, double dw, Scheme scheme) {
    if (scheme == Scheme::euler_maruyama) return x + a0 * h + b0 * dw;
    const VecD<Dim> base = x + a0 * h;
    const VecD<Dim> ups = base + b0 * dw;
    const VecD<Dim> a1 = M1 * ups + c1;
    // b(t+h, base +- b0 sqrt h) summed and differenced in closed form.
    const VecD<Dim> bsum = 2.0 * (G1 * base + d1);
    const VecD<Dim> bdiff_scaled = G1 * b0;  // (b+ - b-) / (2 sqrt h)
    return x + 0.5 * (a0 + a1) * h + 0.25 * (bsum + 2.0 * b0) * dw + 0.5 * bdiff_scaled * (dw * dw - h);
}

template <class V>
bool z_finite(const std::vector<V>& zs) {
    for (const auto& z : zs)
        if (!z.allFinite()) return false;
    return true;
}

/// Step normals of consecutive paths; normal k of path p is element k of
/// stream p, generated in Box-Muller pairs.
class NormalCache {
public:
    NormalCache(const Philox4x32& gen, std::uint64_t first_path, int count)
        : gen_(&gen), first_(first_path), pending_(static_cast<std::size_t>(count)) {}

    double next(int p, int k) {
        if ((k & 1) == 0) {
            const auto [a, b] = normal_pair(*gen_, first_ + static_cast<std::uint64_t>(p), static_cast<std::uint64_t>(k) >> 1);
            pending_[static_cast<std::size_t>(p)] = b;
            return a;
        }
        return pending_[static_cast<std::size_t>(p)];
    }

private:
    const Philox4x32* gen_;
    std::uint64_t first_;
    std::vector<double> pending_;
};

template <int Dim>
struct ExactMeanContext {
    const PhaseTable<Dim>* table;
    GridInfo grid;
    int n;
    std::vector<VecD<Dim>> Y;   // ODE mean per node
    std::vector<VecD<Dim>> m;   // (Chat + Dhat Thetahat) Y + Dhat v + sigma per node
    Philox4x32 gen{0};
    Scheme scheme;
};

template <int Dim>
void exact_mean_block(const ExactMeanContext<Dim>& ctx, int p0, int p1, std::vector<double>& sums,
                      std::map<int, Matrix>& snaps, const std::vector<int>& record_nodes) {
    const int n = ctx.n;
    const int stride = n + n * n;
    const int count = p1 - p0;
    const double h = ctx.grid.dt;
    const double sqh = std::sqrt(h);
    std::vector<VecD<Dim>> Z(static_cast<std::size_t>(count), VecD<Dim>::Zero(n));
    NormalCache normals(ctx.gen, static_cast<std::uint64_t>(p0), count);
    std::fill(sums.begin(), sums.end(), 0.0);
    auto record = [&](int k) {
        for (int p = 0; p < count; ++p) {
            const VecD<Dim> x = ctx.Y[static_cast<std::size_t>(k)] + Z[static_cast<std::size_t>(p)];
            accumulate<Dim>(&sums[static_cast<std::size_t>(k) * stride], n, x);
        }
        if (std::binary_search(record_nodes.begin(), record_nodes.end(), k)) {
            Matrix& snap = snaps[k];
            for (int p = 0; p < count; ++p) {
                snap.row(p0 + p) = (ctx.Y[static_cast<std::size_t>(k)] + Z[static_cast<std::size_t>(p)]).transpose();
            }
        }
    };
    record(0);
    const VecD<Dim> zero = VecD<Dim>::Zero(n);
    for (int k = 0; k < ctx.grid.steps; ++k) {
        const auto i0 = ctx.grid.half(k);
        const auto i1 = ctx.grid.half(k, 2);
        const auto& M0 = ctx.table->Ms[i0];
        const auto& G0 = ctx.table->Gs[i0];
        const auto& M1 = ctx.table->Ms[i1];
        const auto& G1 = ctx.table->Gs[i1];
        const auto& m0 = ctx.m[static_cast<std::size_t>(k)];
        const auto& m1 = ctx.m[static_cast<std::size_t>(k) + 1];
        for (int p = 0; p < count; ++p) {
            auto& z = Z[static_cast<std::size_t>(p)];
            const double dw = sqh * normals.next(p, k);
            const VecD<Dim> a0 = M0 * z;
            const VecD<Dim> b0 = G0 * z + m0;
            z = sde_step<Dim>(z, a0, b0, M1, zero, G1, m1, h, dw, ctx.scheme);
        }
        if (!z_finite(Z)) throw NonFiniteState("path state became non-finite at step " + std::to_string(k + 1));
        record(k + 1);
    }
}

inline int worker_count(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

template <int Dim>
PathEnsemble simulate_exact_mean(const PeriodicModel& model, const FeedbackPolicy& policy, const Vector& x,
                                 const SimulationConfig& cfg, const GridInfo& grid, const std::vector<int>& record_nodes,
                                 PathEnsemble ens) {
    const int n = model.n;
    const PhaseTable<Dim> table(model, policy, grid.per_period);
    ExactMeanContext<Dim> ctx;
    ctx.table = &table;
    ctx.grid = grid;
    ctx.n = n;
    ctx.gen = Philox4x32(cfg.seed);
    ctx.scheme = cfg.scheme;

    // Mean ODE on the simulation grid (RK4 with the half-step lattice).
    ctx.Y.reserve(static_cast<std::size_t>(grid.steps) + 1);
    integrate_ode_observed(
        [&](double t, const Vector& y) -> Vector {
            const long long halves = std::llround((t - cfg.t0) / (0.5 * grid.dt));
            const long long count = 2LL * grid.per_period;
            const auto idx = static_cast<std::size_t>((((2LL * grid.phase0 + halves) % count) + count) % count);
            return (table.Ms[idx] + table.Mm[idx]) * y + table.a[idx];
        },
        x, TimeGrid(cfg.t0, cfg.t0 + grid.steps * grid.dt, grid.steps),
        [&](int, double, const Vector& y) { ctx.Y.push_back(y); });
    ctx.m.reserve(ctx.Y.size());
    for (int k = 0; k <= grid.steps; ++k) {
        const auto i = grid.half(k);
        ctx.m.push_back((table.Gs[i] + table.Gm[i]) * ctx.Y[static_cast<std::size_t>(k)] + table.s[i]);
    }

    const int stride = n + n * n;
    const std::size_t buffer = static_cast<std::size_t>(grid.steps + 1) * stride;
    std::vector<double> total(buffer, 0.0);
    for (int k : record_nodes) ens.snapshots[k] = Matrix::Zero(cfg.paths, n);

    const int blocks = (cfg.paths + kPathBlock - 1) / kPathBlock;
    const int workers = std::min(worker_count(cfg.workers), blocks);
    std::vector<std::vector<double>> partial(static_cast<std::size_t>(workers), std::vector<double>(buffer));
    std::vector<std::map<int, Matrix>> snaps(static_cast<std::size_t>(workers));
    for (int wave = 0; wave < blocks; wave += workers) {
        const int in_wave = std::min(workers, blocks - wave);
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(in_wave));
        auto job = [&](int w) {
            try {
                const int b = wave + w;
                const int p0 = b * kPathBlock;
                const int p1 = std::min(cfg.paths, p0 + kPathBlock);
                auto& local = snaps[static_cast<std::size_t>(w)];
                local.clear();
                for (int k : record_nodes) local[k] = Matrix::Zero(cfg.paths, n);
                exact_mean_block<Dim>(ctx, p0, p1, partial[static_cast<std::size_t>(w)], local, record_nodes);
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        };
        if (in_wave == 1) {
            job(0);
        } else {
            std::vector<std::thread> threads;
            for (int w = 0; w < in_wave; ++w) threads.emplace_back(job, w);
            for (auto& th : threads) th.join();
        }
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
        // Merge in block order so sums do not depend on the worker count.
        for (int w = 0; w < in_wave; ++w) {
            const auto& part = partial[static_cast<std::size_t>(w)];
            for (std::size_t i = 0; i < buffer; ++i) total[i] += part[i];
            const int p0 = (wave + w) * kPathBlock;
            const int p1 = std::min(cfg.paths, p0 + kPathBlock);
            for (auto& [k, snap] : snaps[static_cast<std::size_t>(w)]) {
                ens.snapshots[k].middleRows(p0, p1 - p0) = snap.middleRows(p0, p1 - p0);
            }
        }
    }

    const double inv = 1.0 / cfg.paths;
    ens.coupling_mean.resize(static_cast<std::size_t>(grid.steps + 1) * n);
    ens.sample_mean.resize(ens.coupling_mean.size());
    ens.sample_second.resize(static_cast<std::size_t>(grid.steps + 1) * n * n);
    for (int k = 0; k <= grid.steps; ++k) {
        const auto ks = static_cast<std::size_t>(k);
        for (int i = 0; i < n; ++i) {
            ens.coupling_mean[ks * n + i] = ctx.Y[ks](i);
            ens.sample_mean[ks * n + i] = total[ks * stride + i] * inv;
        }
        // Column-major n x n for Eigen::Map; the block is symmetric.
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) ens.sample_second[ks * n * n + j * n + i] = total[ks * stride + n + i * n + j] * inv;
    }
    return ens;
}

template <int Dim>
PathEnsemble simulate_particle(const PeriodicModel& model, const FeedbackPolicy& policy, const Vector& x,
                               const SimulationConfig& cfg, const GridInfo& grid, const std::vector<int>& record_nodes,
                               PathEnsemble ens) {
    const int n = model.n;
    const int N = cfg.paths;
    const PhaseTable<Dim> table(model, policy, grid.per_period);
    const Philox4x32 gen(cfg.seed);
    const double h = grid.dt;
    const double sqh = std::sqrt(h);
    std::vector<VecD<Dim>> X(static_cast<std::size_t>(N), VecD<Dim>(x));
    NormalCache normals(gen, 0, N);

    ens.coupling_mean.resize(static_cast<std::size_t>(grid.steps + 1) * n);
    ens.sample_mean.resize(ens.coupling_mean.size());
    ens.sample_second.resize(static_cast<std::size_t>(grid.steps + 1) * n * n);
    for (int k : record_nodes) ens.snapshots[k] = Matrix::Zero(N, n);

    auto empirical_mean = [&]() {
        VecD<Dim> s = VecD<Dim>::Zero(n);
        for (const auto& xi : X) s += xi;
        return VecD<Dim>(s / N);
    };
    auto record = [&](int k, const VecD<Dim>& mean) {
        const auto ks = static_cast<std::size_t>(k);
        MatD<Dim> second = MatD<Dim>::Zero(n, n);
        for (const auto& xi : X) second += xi * xi.transpose();
        second /= N;
        for (int i = 0; i < n; ++i) {
            ens.coupling_mean[ks * n + i] = mean(i);
            ens.sample_mean[ks * n + i] = mean(i);
        }
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) ens.sample_second[ks * n * n + j * n + i] = second(i, j);
        auto it = ens.snapshots.find(k);
        if (it != ens.snapshots.end()) {
            for (int p = 0; p < N; ++p) it->second.row(p) = X[static_cast<std::size_t>(p)].transpose();
        }
    };

    VecD<Dim> mean = empirical_mean();
    record(0, mean);
    for (int k = 0; k < grid.steps; ++k) {
        const auto i0 = grid.half(k);
        const auto i1 = grid.half(k, 2);
        // Empirical mean at t+h predicted by Heun on its drift.
        const MatD<Dim> F0 = table.Ms[i0] + table.Mm[i0];
        const MatD<Dim> F1 = table.Ms[i1] + table.Mm[i1];
        const VecD<Dim> f0 = F0 * mean + table.a[i0];
        const VecD<Dim> mean1 = mean + 0.5 * h * (f0 + F1 * (mean + h * f0) + table.a[i1]);
        const VecD<Dim> c0 = table.Mm[i0] * mean + table.a[i0];
        const VecD<Dim> d0 = table.Gm[i0] * mean + table.s[i0];
        const VecD<Dim> c1 = table.Mm[i1] * mean1 + table.a[i1];
        const VecD<Dim> d1 = table.Gm[i1] * mean1 + table.s[i1];
        for (int p = 0; p < N; ++p) {
            auto& xi = X[static_cast<std::size_t>(p)];
            const double dw = sqh * normals.next(p, k);
            const VecD<Dim> a0 = table.Ms[i0] * xi + c0;
            const VecD<Dim> b0 = table.Gs[i0] * xi + d0;
            xi = sde_step<Dim>(xi, a0, b0, table.Ms[i1], c1, table.Gs[i1], d1, h, dw, cfg.scheme);
        }
        if (!z_finite(X)) throw NonFiniteState("particle state became non-finite at step " + std::to_string(k + 1));
        mean = empirical_mean();
        record(k + 1, mean);
    }
    return ens;
}

} // namespace detail

/// Simulates N paths of the closed-loop mean-field SDE from x at cfg.t0.
/// exact-mean: E X from the RK4 mean ODE and independent fluctuations Z;
/// particle: all paths coupled through their empirical mean.
inline PathEnsemble simulate_ensemble(const PeriodicModel& model, const FeedbackPolicy& policy, const Vector& x,
                                      SimulationConfig cfg) {
    check_policy_shape(model, policy);
    if (x.size() != model.n) throw SizeMismatch("initial state has the wrong dimension");
    if (cfg.paths < 2) throw ValidationError("simulation needs at least two paths");
    if (cfg.dt <= 0.0) cfg.dt = model.tau / 2048.0;
    const double ratio = model.tau / cfg.dt;
    const long long per_period = std::llround(ratio);
    if (per_period < 1 || std::abs(ratio - static_cast<double>(per_period)) > 1e-12 * ratio) {
        throw ValidationError("dt must divide tau");
    }
    const long long steps = std::llround(cfg.horizon / cfg.dt);
    if (steps < 1 || std::abs(cfg.horizon / cfg.dt - static_cast<double>(steps)) > 1e-7) {
        throw ValidationError("horizon must be a positive multiple of dt");
    }
    const double x0 = phase_of(cfg.t0, model.tau) / cfg.dt;
    const long long phase0 = std::llround(x0);
    if (std::abs(x0 - static_cast<double>(phase0)) > 1e-7) throw NotAGridNode("start time is not on the dt lattice");
    if (cfg.require_admissible) require_admissible(certify(model, policy));

    detail::GridInfo grid;
    grid.steps = static_cast<int>(steps);
    grid.per_period = static_cast<int>(per_period);
    grid.phase0 = static_cast<int>(phase0 % per_period);
    grid.dt = cfg.dt;

    PathEnsemble ens;
    ens.n = model.n;
    ens.paths = cfg.paths;
    ens.t0 = cfg.t0;
    ens.dt = cfg.dt;
    ens.steps = grid.steps;
    ens.steps_per_period = grid.per_period;
    ens.tau = model.tau;
    ens.mode = cfg.mode;
    ens.scheme = cfg.scheme;
    ens.seed = cfg.seed;

    std::vector<int> record_nodes;
    for (double t : cfg.record_times) record_nodes.push_back(ens.node_of(t));
    std::sort(record_nodes.begin(), record_nodes.end());
    record_nodes.erase(std::unique(record_nodes.begin(), record_nodes.end()), record_nodes.end());

    auto run = [&]<int Dim>() {
        if (cfg.mode == SimulationMode::exact_mean) {
            return detail::simulate_exact_mean<Dim>(model, policy, x, cfg, grid, record_nodes, std::move(ens));
        }
        return detail::simulate_particle<Dim>(model, policy, x, cfg, grid, record_nodes, std::move(ens));
    };
    switch (model.n) {
        case 1: return run.template operator()<1>();
        case 2: return run.template operator()<2>();
        case 3: return run.template operator()<3>();
        default: return run.template operator()<Eigen::Dynamic>();
    }
}

/// States at a recorded grid node.
inline EmpiricalMeasure law_at(const PathEnsemble& ens, double t) {
    const int k = ens.node_of(t);
    const auto it = ens.snapshots.find(k);
    if (it == ens.snapshots.end()) {
        throw NotAGridNode("no snapshot was recorded at t=" + std::to_string(t));
    }
    return {it->second, ens.time(k)};
}

struct CostEstimate {
    double estimate = 0.0;
    double std_error = 0.0;
    int batches = 0;
};

/// Ensemble-average of F at node k. F is quadratic in X, so its average
/// over the paths is F at the sample mean plus <Ka, sample covariance>.
inline double ensemble_average_F(const PathEnsemble& ens, const CoefficientSample& s, int k) {
    const auto& p = *s.policy;
    const Vector xbar = ens.sample_mean_at(k);
    const Vector mean = ens.mean_at(k);
    const Vector ubar = control(p, xbar, mean);
    const Vector mean_u = p.Thetahat * mean + p.v;
    const Matrix Ka = s.Q + s.S.transpose() * p.Theta + p.Theta.transpose() * s.S + p.Theta.transpose() * s.R * p.Theta;
    return eval_F(s, xbar, mean, ubar, mean_u) + Ka.cwiseProduct(ens.sample_cov_at(k)).sum();
}

/// Time average of the ensemble-averaged running cost after burn_in, with a
/// batch-means standard error over whole periods.
inline CostEstimate time_average_cost(const PathEnsemble& ens, const PeriodicModel& model, const FeedbackPolicy& policy,
                                      double burn_in) {
    const int kb = std::max(0, static_cast<int>(std::llround(burn_in / ens.dt)));
    const int S = ens.steps_per_period;
    const int batches = (ens.steps - kb) / S;
    if (batches < 20) {
        throw InsufficientData("time average needs at least 20 whole periods after burn-in, got " +
                               std::to_string(std::max(batches, 0)));
    }
    // Coefficients repeat with the period; sample each phase once.
    const double phase0 = phase_of(ens.time(kb), model.tau);
    std::vector<CoefficientSample> phase;
    for (int j = 0; j < S; ++j) phase.push_back(eval_coefficients(model, phase0 + j * ens.dt, policy));
    std::vector<double> f(static_cast<std::size_t>(batches) * S + 1);
    for (int i = 0; i < static_cast<int>(f.size()); ++i) {
        f[static_cast<std::size_t>(i)] = ensemble_average_F(ens, phase[static_cast<std::size_t>(i % S)], kb + i);
    }
    std::vector<double> means(static_cast<std::size_t>(batches));
    for (int b = 0; b < batches; ++b) {
        const std::size_t o = static_cast<std::size_t>(b) * S;
        double sum = 0.5 * (f[o] + f[o + S]);
        for (int j = 1; j < S; ++j) sum += f[o + static_cast<std::size_t>(j)];
        means[static_cast<std::size_t>(b)] = sum / S;
    }
    CostEstimate out;
    out.batches = batches;
    for (double m : means) out.estimate += m;
    out.estimate /= batches;
    double var = 0.0;
    for (double m : means) var += (m - out.estimate) * (m - out.estimate);
    var /= (batches - 1);
    out.std_error = std::sqrt(var / batches);
    return out;
}

/// Uniformly chosen subset of `count` points, reproducible from sub_seed.
inline EmpiricalMeasure subsample(const EmpiricalMeasure& mu, Eigen::Index count, std::uint64_t sub_seed) {
    if (count >= mu.size()) return mu;
    const Philox4x32 gen(sub_seed);
    std::vector<std::pair<std::uint64_t, Eigen::Index>> keys;
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
        const auto b = gen(0, static_cast<std::uint64_t>(i));
        keys.emplace_back(static_cast<std::uint64_t>(b[0]) << 32 | b[1], i);
    }
    std::sort(keys.begin(), keys.end());
    EmpiricalMeasure out;
    out.time_tag = mu.time_tag;
    out.points.resize(count, mu.points.cols());
    for (Eigen::Index i = 0; i < count; ++i) out.points.row(i) = mu.points.row(keys[static_cast<std::size_t>(i)].second);
    return out;
}

struct DiagnosticsOptions {
    Eigen::Index w2_paths = 1024;   // subsample size for each W2 evaluation
    double floor_factor = 3.0;      // points above factor x floor form the fit range
    int two_start_k = 10;
    std::optional<Vector> second_start;
};

struct MeasureDiagnostics {
    double phase = 0.0;
    std::vector<int> k;
    std::vector<double> w2_consecutive;
    double floor = 0.0;
    int fit_points = 0;
    LineFit fit;
    bool decays = false;
    double two_start_w2 = 0.0;
    int two_start_k = 0;
    bool two_start_ok = false;
    std::uint64_t seed = 0, floor_seed = 0, second_start_seed = 0, sub_seed = 0;
    Eigen::Index w2_paths = 0;
};

/// Consecutive-period W2 distances of the laws at r + k tau, the sampling
/// floor from an independent ensemble, a log-linear fit over the pre-floor
/// range, and the two-start comparison at k = two_start_k.
inline MeasureDiagnostics periodic_measure_diagnostics(const PeriodicModel& model, const FeedbackPolicy& policy,
                                                       const Vector& x, double r, int k_max, SimulationConfig cfg,
                                                       const DiagnosticsOptions& opt = {}) {
    if (k_max < 2) throw ValidationError("diagnostics need k_max >= 2");
    if (r < 0.0 || r >= model.tau) throw ValidationError("phase must lie in [0, tau)");
    MeasureDiagnostics d;
    d.phase = r;
    d.two_start_k = std::min(opt.two_start_k, k_max);
    cfg.t0 = 0.0;
    if (cfg.dt <= 0.0) cfg.dt = model.tau / 2048.0;
    cfg.horizon = r + k_max * model.tau;
    cfg.record_times.clear();
    for (int k = 0; k <= k_max; ++k) cfg.record_times.push_back(r + k * model.tau);

    d.seed = cfg.seed;
    d.floor_seed = derive_seed(cfg.seed, 1);
    d.second_start_seed = derive_seed(cfg.seed, 2);
    d.sub_seed = derive_seed(cfg.seed, 3);
    d.w2_paths = std::min<Eigen::Index>(opt.w2_paths, cfg.paths);

    const auto main = simulate_ensemble(model, policy, x, cfg);
    auto law = [&](const PathEnsemble& e, int k, std::uint64_t salt) {
        return subsample(law_at(e, r + k * model.tau), d.w2_paths, derive_seed(d.sub_seed, salt));
    };
    for (int k = 0; k < k_max; ++k) {
        d.k.push_back(k);
        d.w2_consecutive.push_back(wasserstein2(law(main, k, 0), law(main, k + 1, 0)));
    }

    SimulationConfig floor_cfg = cfg;
    floor_cfg.seed = d.floor_seed;
    const auto twin = simulate_ensemble(model, policy, x, floor_cfg);
    d.floor = wasserstein2(law(main, k_max, 0), law(twin, k_max, 1));

    std::vector<double> fk, fy;
    for (std::size_t i = 0; i < d.w2_consecutive.size(); ++i) {
        if (!(d.w2_consecutive[i] > opt.floor_factor * d.floor)) break;
        fk.push_back(d.k[i]);
        fy.push_back(std::log(d.w2_consecutive[i]));
    }
    d.fit_points = static_cast<int>(fk.size());
    if (fk.size() >= 2) {
        d.fit = fit_line(fk, fy);
        d.decays = d.fit.slope < 0.0 && d.fit.r_squared >= 0.9;
    }

    Vector alt = opt.second_start ? *opt.second_start : Vector(-x);
    SimulationConfig alt_cfg = cfg;
    alt_cfg.seed = d.second_start_seed;
    const auto other = simulate_ensemble(model, policy, alt, alt_cfg);
    d.two_start_w2 = wasserstein2(law(main, d.two_start_k, 0), law(other, d.two_start_k, 2));
    d.two_start_ok = d.two_start_w2 <= 3.0 * d.floor;
    return d;
}

struct ShiftCheck {
    double w2_shifted = 0.0;
    double floor = 0.0;
    bool ok = false;
};

/// Law of X at s + t started from x at s, against the same elapsed time
/// started at s + k tau; the floor comes from a second ensemble started at s.
inline ShiftCheck periodic_shift_check(const PeriodicModel& model, const FeedbackPolicy& policy, const Vector& x,
                                       int k, double s, double t, SimulationConfig cfg, Eigen::Index w2_paths = 1024) {
    cfg.horizon = t;
    cfg.t0 = s;
    cfg.record_times = {s + t};
    const auto base = simulate_ensemble(model, policy, x, cfg);
    SimulationConfig twin_cfg = cfg;
    twin_cfg.seed = derive_seed(cfg.seed, 1);
    const auto twin = simulate_ensemble(model, policy, x, twin_cfg);
    SimulationConfig shifted_cfg = cfg;
    shifted_cfg.seed = derive_seed(cfg.seed, 2);
    shifted_cfg.t0 = s + k * model.tau;
    shifted_cfg.record_times = {s + k * model.tau + t};
    const auto shifted = simulate_ensemble(model, policy, x, shifted_cfg);
    const std::uint64_t sub = derive_seed(cfg.seed, 3);
    const auto a = subsample(law_at(base, s + t), w2_paths, sub);
    const auto b = subsample(law_at(twin, s + t), w2_paths, derive_seed(sub, 1));
    const auto c = subsample(law_at(shifted, s + k * model.tau + t), w2_paths, derive_seed(sub, 2));
    ShiftCheck out;
    out.floor = wasserstein2(a, b);
    out.w2_shifted = wasserstein2(a, c);
    out.ok = out.w2_shifted <= 3.0 * out.floor;
    return out;
}

/// One CSV row per path and snapshot: path_id, t, x1..xn.
inline void write_snapshots_csv(std::ostream& os, const PathEnsemble& ens) {
    os << "path_id,t";
    for (int i = 1; i <= ens.n; ++i) os << ",x" << i;
    os << '\n';
    char buf[64];
    for (const auto& [k, snap] : ens.snapshots) {
        for (Eigen::Index p = 0; p < snap.rows(); ++p) {
            os << p;
            std::snprintf(buf, sizeof buf, ",%.17g", ens.time(k));
            os << buf;
            for (Eigen::Index i = 0; i < snap.cols(); ++i) {
                std::snprintf(buf, sizeof buf, ",%.17g", snap(p, i));
                os << buf;
            }
            os << '\n';
        }
    }
}

} // namespace pmflq
