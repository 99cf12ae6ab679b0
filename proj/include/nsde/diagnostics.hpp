#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "numeric.hpp"
#include "sde_model.hpp"

namespace nsde {

// ---------------------------------------------------------------------------
// Lipschitz / linear-growth constants
// ---------------------------------------------------------------------------

/// Empirical lower bounds on the Lipschitz constant K and the growth constant
/// C over the probed region. Not global certificates.
struct RegularityEstimate {
    double lipschitz_K = 0.0;
    double growth_C = 0.0;
    std::size_t n_probe_pairs = 0;
    Vector region_min;
    Vector region_max;
};

/// K = max (||dmu|| + ||dsigma||) / ||dx|| over probe pairs (pairs closer than
/// 1e-9 skipped); C = max (||mu||^2 + ||sigma||^2) / (1 + ||x||^2) over probes.
template <SdeCoefficients M>
RegularityEstimate estimate_regularity(const M& model, std::span<const Vector> probes, double t) {
    if (probes.size() < 2) throw ValidationError("estimate_regularity: need at least 2 probes");
    const std::size_t d = model.dim();
    std::vector<Vector> mu;
    std::vector<Vector> sigma;
    mu.reserve(probes.size());
    sigma.reserve(probes.size());

    RegularityEstimate est;
    est.region_min.assign(d, std::numeric_limits<double>::infinity());
    est.region_max.assign(d, -std::numeric_limits<double>::infinity());
    for (const auto& x : probes) {
        if (x.size() != d) throw DimensionError("estimate_regularity: probe length != dim");
        for (std::size_t j = 0; j < d; ++j) {
            est.region_min[j] = std::min(est.region_min[j], x[j]);
            est.region_max[j] = std::max(est.region_max[j], x[j]);
        }
        mu.push_back(model.drift(x, t));
        sigma.push_back(model.diffusion(x, t));
        const double ratio =
            (squared_norm(mu.back()) + squared_norm(sigma.back())) / (1.0 + squared_norm(x));
        est.growth_C = std::max(est.growth_C, ratio);
    }

    for (std::size_t i = 0; i < probes.size(); ++i) {
        for (std::size_t k = i + 1; k < probes.size(); ++k) {
            const double dx = norm(probes[i] - probes[k]);
            if (dx < 1e-9) continue;
            const double num = norm(mu[i] - mu[k]) + norm(sigma[i] - sigma[k]);
            est.lipschitz_K = std::max(est.lipschitz_K, num / dx);
            ++est.n_probe_pairs;
        }
    }
    if (est.n_probe_pairs == 0)
        throw ValidationError("estimate_regularity: every probe pair is degenerate");
    return est;
}

// ---------------------------------------------------------------------------
// Lyapunov stability
// ---------------------------------------------------------------------------

struct LyapunovReport {
    Matrix P;
    std::vector<std::pair<Vector, double>> generator_values;
    double max_generator = -std::numeric_limits<double>::infinity();
    bool stable_flag = false;
};

/// Throws ValidationError unless P is symmetric (1e-12) with all eigenvalues > 0.
inline void require_positive_definite(const Matrix& P) {
    if (P.rows() != P.cols()) throw DimensionError("P must be square");
    if (!P.is_symmetric(1e-12)) throw ValidationError("P is not symmetric");
    const auto eig = jacobi_eigen(P);
    for (double v : eig.values)
        if (!(v > 0)) throw ValidationError("P is not positive definite");
}

/// Generator of V(x) = x^T P x for diagonal diffusion:
///   LV = 2 x^T P mu + sum_j P_jj sigma_j^2
inline double lyapunov_generator(const Matrix& P, std::span<const double> x,
                                 std::span<const double> mu, std::span<const double> sigma) {
    const Vector Pmu = P * mu;
    double lv = 2.0 * dot(x, Pmu);
    for (std::size_t j = 0; j < sigma.size(); ++j) lv += P(j, j) * sigma[j] * sigma[j];
    return lv;
}

template <SdeCoefficients M>
LyapunovReport lyapunov_check(const M& model, const Matrix& P, std::span<const Vector> probes,
                              double t) {
    if (P.rows() != model.dim()) throw DimensionError("lyapunov_check: P size != model dim");
    require_positive_definite(P);
    if (probes.empty()) throw ValidationError("lyapunov_check: no probes");
    LyapunovReport rep;
    rep.P = P;
    for (const auto& x : probes) {
        const double lv = lyapunov_generator(P, x, model.drift(x, t), model.diffusion(x, t));
        rep.generator_values.emplace_back(x, lv);
        rep.max_generator = std::max(rep.max_generator, lv);
    }
    rep.stable_flag = rep.max_generator <= 0.0;
    return rep;
}

// ---------------------------------------------------------------------------
// Moments
// ---------------------------------------------------------------------------

struct MomentCurves {
    std::vector<double> t_grid;
    std::vector<double> mean;
    std::vector<double> variance;
};

/// Closed-form mean/variance of dX = aX dt + b dW from X(0) with mean m0, variance v0.
inline MomentCurves moment_ode_solve(const LinearSdeSpec& spec, double m0, double v0,
                                     const std::vector<double>& t_grid) {
    MomentCurves out{t_grid, {}, {}};
    const double a = spec.a;
    const double b2 = spec.b * spec.b;
    for (double t : t_grid) {
        const double m = m0 * std::exp(a * t);
        double second;
        if (a == 0.0) {
            second = (m0 * m0 + v0) + b2 * t;
        } else {
            const double e2 = std::exp(2.0 * a * t);
            second = (m0 * m0 + v0) * e2 + b2 * std::expm1(2.0 * a * t) / (2.0 * a);
        }
        out.mean.push_back(m);
        out.variance.push_back(std::max(0.0, second - m * m));
    }
    return out;
}

/// E[Y^n] for Y ~ N(m, v).
inline double gaussian_raw_moment(int n, double m, double v) {
    // E[Y^n] = sum_k C(n,2k) m^(n-2k) v^k (2k-1)!!
    double acc = 0.0;
    double binom = 1.0;  // C(n, j)
    for (int j = 0; j <= n; ++j) {
        if (j > 0) binom = binom * (n - j + 1) / j;
        if (j % 2) continue;
        double dfact = 1.0;
        for (int q = j - 1; q > 1; q -= 2) dfact *= q;
        acc += binom * std::pow(m, n - j) * std::pow(v, j / 2) * dfact;
    }
    return acc;
}

/// Raw moments E[X^n], n = 0..max_order, of the linear SDE from the Ito
/// recursion dE[X^n]/dt = n a E[X^n] + n(n-1)/2 b^2 E[X^(n-2)], integrated with
/// classical RK4 on the given grid. Row n of the result is the n-th moment curve.
inline std::vector<std::vector<double>> moment_recursion_solve(
    const LinearSdeSpec& spec, const std::vector<double>& initial_raw_moments,
    const std::vector<double>& t_grid) {
    const std::size_t n_mom = initial_raw_moments.size();
    auto rhs = [&](const std::vector<double>& m) {
        std::vector<double> dm(n_mom, 0.0);
        for (std::size_t n = 1; n < n_mom; ++n) {
            const double nd = static_cast<double>(n);
            dm[n] = nd * spec.a * m[n];
            if (n >= 2) dm[n] += 0.5 * nd * (nd - 1.0) * spec.b * spec.b * m[n - 2];
        }
        return dm;
    };
    std::vector<std::vector<double>> out(n_mom);
    std::vector<double> m = initial_raw_moments;
    for (std::size_t j = 0; j < t_grid.size(); ++j) {
        if (j > 0) {
            const double h = t_grid[j] - t_grid[j - 1];
            // substeps keep RK4 accurate on coarse output grids
            const int sub = std::max(1, static_cast<int>(std::ceil(std::abs(h) / 1e-3)));
            const double hs = h / sub;
            for (int s = 0; s < sub; ++s) {
                const auto k1 = rhs(m);
                std::vector<double> tmp(n_mom);
                for (std::size_t i = 0; i < n_mom; ++i) tmp[i] = m[i] + 0.5 * hs * k1[i];
                const auto k2 = rhs(tmp);
                for (std::size_t i = 0; i < n_mom; ++i) tmp[i] = m[i] + 0.5 * hs * k2[i];
                const auto k3 = rhs(tmp);
                for (std::size_t i = 0; i < n_mom; ++i) tmp[i] = m[i] + hs * k3[i];
                const auto k4 = rhs(tmp);
                for (std::size_t i = 0; i < n_mom; ++i)
                    m[i] += hs / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        for (std::size_t i = 0; i < n_mom; ++i) out[i].push_back(m[i]);
    }
    return out;
}

struct MomentReport {
    std::vector<double> t_grid;
    std::vector<double> mean_ode;  // empty without a linear reference
    std::vector<double> var_ode;
    std::vector<double> mean_mc;
    std::vector<double> var_mc;
    std::vector<double> mean_standard_error;
    std::map<int, std::vector<double>> higher_moments_mc;   // raw E[X^n]
    std::map<int, std::vector<double>> central_moments_mc;  // E[(X - mean)^n]
    std::size_t n_paths = 0;
    std::size_t component = 0;

    /// Fourth central moment over squared variance at grid index j.
    double kurtosis(std::size_t j) const {
        const auto it = central_moments_mc.find(4);
        if (it == central_moments_mc.end())
            throw ValidationError("MomentReport: fourth moment not computed");
        return it->second[j] / (var_mc[j] * var_mc[j]);
    }
};

struct MonteCarloOptions {
    int max_order = 4;
    std::optional<LinearSdeSpec> reference;
    std::size_t component = 0;
    unsigned threads = 0;  // 0: hardware concurrency
};

namespace detail {

template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    const std::size_t chunk = (n + threads - 1) / threads;
    for (unsigned w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            try {
                const std::size_t lo = w * chunk;
                const std::size_t hi = std::min(n, lo + chunk);
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// Simulates n_paths Euler-Maruyama paths on the uniform grid t_grid (starting
/// at t_grid[0]) and reports per-time sample moments of one state component.
/// Path i draws X(0) ~ N(x0_mean, x0_var I) and its noise from seed ^ i;
/// reductions run in path order, so results do not depend on thread count.
template <SdeCoefficients M>
MomentReport moment_monte_carlo(const M& model, const Vector& x0_mean, double x0_var,
                                const std::vector<double>& t_grid, std::size_t n_paths,
                                std::uint64_t seed, const MonteCarloOptions& opts = {}) {
    if (n_paths < 100) throw ValidationError("moment_monte_carlo: need at least 100 paths");
    if (x0_mean.size() != model.dim()) throw DimensionError("moment_monte_carlo: x0 length != dim");
    if (opts.component >= model.dim()) throw DimensionError("moment_monte_carlo: bad component");
    if (x0_var < 0) throw ValidationError("moment_monte_carlo: x0_var must be >= 0");
    if (t_grid.size() < 2) throw ValidationError("moment_monte_carlo: need at least 2 grid points");
    const double dt = t_grid[1] - t_grid[0];
    for (std::size_t j = 1; j < t_grid.size(); ++j)
        if (std::abs((t_grid[j] - t_grid[j - 1]) - dt) > 1e-9 * std::max(1.0, dt) || !(dt > 0))
            throw ValidationError("moment_monte_carlo: t_grid must be uniform and increasing");

    const std::size_t n_t = t_grid.size();
    const std::size_t c = opts.component;
    std::vector<double> values(n_paths * n_t);
    detail::parallel_for(n_paths, opts.threads, [&](std::size_t i) {
        RngStream rng(path_seed(seed, i));
        Vector x0 = x0_mean;
        if (x0_var > 0) {
            const double sd = std::sqrt(x0_var);
            for (auto& v : x0) v += sd * rng.standard_normal();
        }
        const auto path = simulate(model, x0, n_t - 1, dt, rng.next_u64(), t_grid[0]);
        for (std::size_t j = 0; j < n_t; ++j) values[i * n_t + j] = path.states[j][c];
    });

    MomentReport rep;
    rep.t_grid = t_grid;
    rep.n_paths = n_paths;
    rep.component = c;
    const double n = static_cast<double>(n_paths);
    for (int k = 1; k <= opts.max_order; ++k) rep.higher_moments_mc[k].assign(n_t, 0.0);
    for (int k = 2; k <= opts.max_order; ++k) rep.central_moments_mc[k].assign(n_t, 0.0);
    rep.mean_mc.assign(n_t, 0.0);
    rep.var_mc.assign(n_t, 0.0);
    rep.mean_standard_error.assign(n_t, 0.0);
    for (std::size_t j = 0; j < n_t; ++j) {
        double sum = 0.0;
        for (std::size_t i = 0; i < n_paths; ++i) sum += values[i * n_t + j];
        const double mean = sum / n;
        std::vector<double> raw(static_cast<std::size_t>(opts.max_order) + 1, 0.0);
        std::vector<double> central(static_cast<std::size_t>(opts.max_order) + 1, 0.0);
        for (std::size_t i = 0; i < n_paths; ++i) {
            const double x = values[i * n_t + j];
            const double dx = x - mean;
            double px = 1.0;
            double pd = 1.0;
            for (int k = 1; k <= opts.max_order; ++k) {
                px *= x;
                pd *= dx;
                raw[k] += px;
                central[k] += pd;
            }
        }
        double ss = 0.0;
        for (std::size_t i = 0; i < n_paths; ++i) {
            const double dx = values[i * n_t + j] - mean;
            ss += dx * dx;
        }
        rep.mean_mc[j] = mean;
        rep.var_mc[j] = ss / (n - 1.0);
        rep.mean_standard_error[j] = std::sqrt(rep.var_mc[j] / n);
        for (int k = 1; k <= opts.max_order; ++k) rep.higher_moments_mc[k][j] = raw[k] / n;
        for (int k = 2; k <= opts.max_order; ++k) rep.central_moments_mc[k][j] = central[k] / n;
    }

    if (opts.reference) {
        const double m0 = x0_mean[c];
        const auto ode = moment_ode_solve(*opts.reference, m0, x0_var,
                                          [&] {
                                              std::vector<double> shifted(t_grid);
                                              for (auto& t : shifted) t -= t_grid[0];
                                              return shifted;
                                          }());
        rep.mean_ode = ode.mean;
        rep.var_ode = ode.variance;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Trajectory comparison, vector fields, heatmaps, importance
// ---------------------------------------------------------------------------

struct TrajectoryComparison {
    EmbeddingTrajectory predicted;
    std::vector<double> per_step_errors;
};

/// Teacher-forced one-step drift prediction x_hat_{i+1} = x_i + mu(x_i, t_i) dt_i.
/// The seed is accepted for interface symmetry; the prediction has no noise.
template <SdeCoefficients M>
TrajectoryComparison compare_trajectories(const EmbeddingTrajectory& actual, const M& model,
                                          std::uint64_t /*seed*/ = 0) {
    if (actual.size() < 2) throw ValidationError("compare_trajectories: need at least 2 states");
    if (actual.dim() != model.dim()) throw DimensionError("compare_trajectories: dim mismatch");
    TrajectoryComparison out;
    out.predicted.states.push_back(actual.states[0]);
    out.predicted.times = actual.times;
    out.predicted.tokens = actual.tokens;
    for (std::size_t i = 0; i + 1 < actual.size(); ++i) {
        const double dt = actual.times[i + 1] - actual.times[i];
        const Vector mu = model.drift(actual.states[i], actual.times[i]);
        Vector pred(actual.states[i]);
        for (std::size_t j = 0; j < pred.size(); ++j) pred[j] += mu[j] * dt;
        out.per_step_errors.push_back(norm(pred - actual.states[i + 1]));
        out.predicted.states.push_back(std::move(pred));
    }
    return out;
}

struct VectorFieldGrid {
    Matrix plane_basis;  // 2 x d
    Vector plane_mean;
    std::vector<std::array<double, 2>> grid_points;
    std::vector<std::array<double, 2>> drift_arrows;  // drift projected onto the plane
    std::vector<double> drift_norms;                  // full-dimensional ||mu||
    std::vector<double> diffusion_magnitudes;         // ||sigma||
};

struct GridBounds {
    double x_min, x_max, y_min, y_max;
};

/// Evaluates the field on a res x res grid of plane coordinates, row by row
/// (y outer, x inner). Grid points are lifted as mean + basis^T g.
template <SdeCoefficients M>
VectorFieldGrid drift_vector_field(const M& model, const PcaFit& plane, const GridBounds& bounds,
                                   std::size_t grid_resolution, double t) {
    if (plane.basis.rows() != 2) throw DimensionError("drift_vector_field: plane must be 2-D");
    if (plane.basis.cols() != model.dim())
        throw DimensionError("drift_vector_field: plane dim != model dim");
    if (grid_resolution < 2) throw ValidationError("drift_vector_field: resolution must be >= 2");
    VectorFieldGrid out;
    out.plane_basis = plane.basis;
    out.plane_mean = plane.mean;
    const double steps = static_cast<double>(grid_resolution - 1);
    for (std::size_t iy = 0; iy < grid_resolution; ++iy) {
        for (std::size_t ix = 0; ix < grid_resolution; ++ix) {
            const std::array<double, 2> g{
                bounds.x_min + (bounds.x_max - bounds.x_min) * static_cast<double>(ix) / steps,
                bounds.y_min + (bounds.y_max - bounds.y_min) * static_cast<double>(iy) / steps};
            const Vector x = pca_lift(plane, g);
            const Vector mu = model.drift(x, t);
            const Vector sigma = model.diffusion(x, t);
            const Vector arrow = plane.basis * mu;
            out.grid_points.push_back(g);
            out.drift_arrows.push_back({arrow[0], arrow[1]});
            out.drift_norms.push_back(norm(mu));
            out.diffusion_magnitudes.push_back(norm(sigma));
        }
    }
    return out;
}

/// Fits the plane by PCA on the pooled states and spans the grid over the
/// bounding box of their projections.
template <SdeCoefficients M>
VectorFieldGrid drift_vector_field(const M& model, std::span<const EmbeddingTrajectory> trajectories,
                                   std::size_t grid_resolution, double t) {
    std::vector<Vector> pooled;
    for (const auto& tr : trajectories)
        pooled.insert(pooled.end(), tr.states.begin(), tr.states.end());
    if (pooled.empty()) throw ValidationError("drift_vector_field: no states");
    if (model.dim() < 2) throw DimensionError("drift_vector_field: needs dim >= 2 for a plane");
    std::size_t distinct = 1;
    for (std::size_t i = 1; i < pooled.size() && distinct < 2; ++i)
        if (pooled[i] != pooled[0]) ++distinct;
    if (distinct < 2) throw ValidationError("drift_vector_field: fewer than 2 distinct states");
    const PcaFit plane = pca_fit(pooled, 2);
    GridBounds b{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
                 std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto& x : pooled) {
        const Vector p = pca_project(plane, x);
        b.x_min = std::min(b.x_min, p[0]);
        b.x_max = std::max(b.x_max, p[0]);
        b.y_min = std::min(b.y_min, p[1]);
        b.y_max = std::max(b.y_max, p[1]);
    }
    if (b.x_max - b.x_min < 1e-12) { b.x_min -= 1.0; b.x_max += 1.0; }
    if (b.y_max - b.y_min < 1e-12) { b.y_min -= 1.0; b.y_max += 1.0; }
    return drift_vector_field(model, plane, b, grid_resolution, t);
}

struct HeatmapEntry {
    std::size_t position = 0;
    std::string token;
    double magnitude = 0.0;
    double log_magnitude = 0.0;
};

namespace detail {
inline std::string label_at(const EmbeddingTrajectory& tr, std::size_t i) {
    return tr.tokens ? (*tr.tokens)[i] : std::to_string(i);
}
}  // namespace detail

/// ||sigma(x_i, t_i)|| and its natural log at every position.
template <SdeCoefficients M>
std::vector<HeatmapEntry> uncertainty_heatmap(const M& model, const EmbeddingTrajectory& trajectory) {
    if (trajectory.size() == 0) throw ValidationError("uncertainty_heatmap: empty trajectory");
    std::vector<HeatmapEntry> out;
    for (std::size_t i = 0; i < trajectory.size(); ++i) {
        const double mag = norm(model.diffusion(trajectory.states[i], trajectory.times[i]));
        out.push_back({i, detail::label_at(trajectory, i), mag, std::log(mag)});
    }
    return out;
}

struct ImportanceEntry {
    std::size_t position = 0;
    std::string token;
    double l2_norm = 0.0;
};

struct WordImportance {
    std::vector<ImportanceEntry> entries;
    bool positional_labels = false;  // set when the trajectory carried no tokens
};

inline WordImportance word_importance(const EmbeddingTrajectory& trajectory) {
    WordImportance out;
    out.positional_labels = !trajectory.tokens.has_value();
    for (std::size_t i = 0; i < trajectory.size(); ++i)
        out.entries.push_back({i, detail::label_at(trajectory, i), norm(trajectory.states[i])});
    return out;
}

}  // namespace nsde
