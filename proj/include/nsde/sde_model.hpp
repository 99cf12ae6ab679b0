#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "mlp.hpp"
#include "numeric.hpp"

namespace nsde {

/// Ordered sequence of d-dimensional states X(t_0), X(t_1), ... with optional token labels.
struct EmbeddingTrajectory {
    std::vector<Vector> states;
    std::vector<double> times;
    std::optional<std::vector<std::string>> tokens;

    std::size_t size() const noexcept { return states.size(); }
    std::size_t dim() const { return states.empty() ? 0 : states.front().size(); }

    bool uniform_spacing() const {
        if (times.size() < 3) return true;
        const double dt0 = times[1] - times[0];
        for (std::size_t i = 2; i < times.size(); ++i)
            if (std::abs((times[i] - times[i - 1]) - dt0) >= 1e-12) return false;
        return true;
    }

    /// Throws ValidationError/DimensionError when any invariant is broken.
    void validate() const {
        if (states.empty()) throw ValidationError("trajectory: no states");
        if (times.size() != states.size())
            throw ValidationError("trajectory: times and states differ in length");
        if (tokens && tokens->size() != states.size())
            throw ValidationError("trajectory: tokens and states differ in length");
        const std::size_t d = states.front().size();
        if (d == 0) throw DimensionError("trajectory: zero-dimensional state");
        for (std::size_t i = 0; i < states.size(); ++i) {
            if (states[i].size() != d)
                throw DimensionError("trajectory: state " + std::to_string(i) + " has length " +
                                     std::to_string(states[i].size()) + ", expected " +
                                     std::to_string(d));
            if (!all_finite(states[i]))
                throw ValidationError("trajectory: state " + std::to_string(i) + " not finite");
            if (i > 0 && !(times[i] > times[i - 1]))
                throw ValidationError("trajectory: times not strictly increasing at index " +
                                      std::to_string(i));
        }
    }

    friend bool operator==(const EmbeddingTrajectory&, const EmbeddingTrajectory&) = default;
};

/// Extra network inputs derived from time.
struct TimeEncoding {
    enum class Kind { none, scalar_normalized, sinusoidal };

    Kind kind = Kind::scalar_normalized;
    std::size_t pairs = 0;    // sinusoidal only
    double time_scale = 1.0;  // scalar_normalized: t / time_scale

    std::size_t width() const {
        switch (kind) {
            case Kind::none: return 0;
            case Kind::scalar_normalized: return 1;
            case Kind::sinusoidal: return 2 * pairs;
        }
        return 0;
    }

    void append(double t, Vector& out) const {
        switch (kind) {
            case Kind::none: break;
            case Kind::scalar_normalized: out.push_back(t / time_scale); break;
            case Kind::sinusoidal:
                for (std::size_t i = 0; i < pairs; ++i) {
                    const double freq =
                        std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(pairs));
                    out.push_back(std::sin(freq * t));
                    out.push_back(std::cos(freq * t));
                }
                break;
        }
    }

    friend bool operator==(const TimeEncoding&, const TimeEncoding&) = default;
};

inline std::string to_string(TimeEncoding::Kind k) {
    switch (k) {
        case TimeEncoding::Kind::none: return "none";
        case TimeEncoding::Kind::scalar_normalized: return "scalar_normalized";
        case TimeEncoding::Kind::sinusoidal: return "sinusoidal";
    }
    return "none";
}

/// Anything that supplies a state dimension, a drift vector and a diagonal
/// diffusion vector. Neural models, the linear oracle and frozen test
/// models all satisfy it.
template <typename M>
concept SdeCoefficients = requires(const M& m, std::span<const double> x, double t) {
    { m.dim() } -> std::convertible_to<std::size_t>;
    { m.drift(x, t) } -> std::same_as<Vector>;
    { m.diffusion(x, t) } -> std::same_as<Vector>;
};

/// dX = NN_mu(X, enc(t)) dt + NN_sigma(X, enc(t)) (.) dW with a softplus diffusion head.
class SdeModel {
public:
    SdeModel(std::size_t dim, MlpNetwork drift_net, MlpNetwork diffusion_net,
             TimeEncoding encoding)
        : dim_(dim),
          drift_net_(std::move(drift_net)),
          diffusion_net_(std::move(diffusion_net)),
          encoding_(encoding) {
        validate(drift_net_);
        validate(diffusion_net_);
        const std::size_t in = dim_ + encoding_.width();
        if (dim_ == 0) throw DimensionError("SdeModel: dim must be positive");
        if (drift_net_.input_dim() != in || diffusion_net_.input_dim() != in)
            throw DimensionError("SdeModel: network input width != dim + encoding width");
        if (drift_net_.output_dim() != dim_ || diffusion_net_.output_dim() != dim_)
            throw DimensionError("SdeModel: network output width != dim");
        if (diffusion_net_.output_activation != OutputActivation::softplus)
            throw ValidationError("SdeModel: diffusion network needs a softplus head");
    }

    std::size_t dim() const noexcept { return dim_; }
    const MlpNetwork& drift_net() const noexcept { return drift_net_; }
    const MlpNetwork& diffusion_net() const noexcept { return diffusion_net_; }
    const TimeEncoding& time_encoding() const noexcept { return encoding_; }

    Vector network_input(std::span<const double> x, double t) const {
        if (x.size() != dim_)
            throw DimensionError("SdeModel: state length " + std::to_string(x.size()) +
                                 " != dim " + std::to_string(dim_));
        Vector in(x.begin(), x.end());
        in.reserve(dim_ + encoding_.width());
        encoding_.append(t, in);
        return in;
    }

    Vector drift(std::span<const double> x, double t) const {
        return forward(drift_net_, network_input(x, t));
    }

    Vector diffusion(std::span<const double> x, double t) const {
        Vector s = forward(diffusion_net_, network_input(x, t));
        for (double v : s)
            if (!(v > 0.0) || !std::isfinite(v))
                throw ModelInvariantError("SdeModel: diffusion component not strictly positive");
        return s;
    }

    friend bool operator==(const SdeModel&, const SdeModel&) = default;

private:
    std::size_t dim_;
    MlpNetwork drift_net_;
    MlpNetwork diffusion_net_;
    TimeEncoding encoding_;
};

/// Freshly initialized model; both networks share the hidden layout.
inline SdeModel make_sde_model(std::size_t dim, const std::vector<std::size_t>& hidden,
                               TimeEncoding encoding, RngStream& rng,
                               HiddenActivation act = HiddenActivation::tanh) {
    std::vector<std::size_t> dims{dim + encoding.width()};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(dim);
    auto drift_net = make_mlp(dims, act, OutputActivation::identity, rng);
    auto diffusion_net = make_mlp(dims, act, OutputActivation::softplus, rng);
    return SdeModel(dim, std::move(drift_net), std::move(diffusion_net), encoding);
}

inline Vector drift(const SdeModel& m, std::span<const double> x, double t) {
    return m.drift(x, t);
}

inline Vector diffusion(const SdeModel& m, std::span<const double> x, double t) {
    return m.diffusion(x, t);
}

/// Constant-coefficient linear SDE dX = a X dt + b dW, used as an analytic oracle.
struct LinearSdeSpec {
    double a = 0.0;
    double b = 0.0;
    std::size_t dimension = 1;

    LinearSdeSpec() = default;
    LinearSdeSpec(double a_, double b_, std::size_t dim_ = 1) : a(a_), b(b_), dimension(dim_) {
        if (b < 0) throw ValidationError("LinearSdeSpec: b must be >= 0");
        if (dimension == 0) throw DimensionError("LinearSdeSpec: dim must be positive");
    }

    std::size_t dim() const noexcept { return dimension; }

    Vector drift(std::span<const double> x, double) const {
        if (x.size() != dimension) throw DimensionError("LinearSdeSpec: state length != dim");
        Vector out(x.begin(), x.end());
        for (auto& v : out) v *= a;
        return out;
    }

    Vector diffusion(std::span<const double> x, double) const {
        if (x.size() != dimension) throw DimensionError("LinearSdeSpec: state length != dim");
        return Vector(dimension, b);
    }
};

/// Coefficients given as plain callables.
struct FunctionalSde {
    using Field = std::function<Vector(std::span<const double>, double)>;

    std::size_t dimension = 1;
    Field drift_fn;
    Field diffusion_fn;

    std::size_t dim() const noexcept { return dimension; }
    Vector drift(std::span<const double> x, double t) const { return drift_fn(x, t); }
    Vector diffusion(std::span<const double> x, double t) const { return diffusion_fn(x, t); }
};

/// Frozen model with constant drift and diffusion vectors.
inline FunctionalSde constant_sde(Vector mu, Vector sigma) {
    const std::size_t d = mu.size();
    if (sigma.size() != d) throw DimensionError("constant_sde: mu and sigma lengths differ");
    return {d, [mu](std::span<const double>, double) { return mu; },
            [sigma](std::span<const double>, double) { return sigma; }};
}

static_assert(SdeCoefficients<SdeModel>);
static_assert(SdeCoefficients<LinearSdeSpec>);
static_assert(SdeCoefficients<FunctionalSde>);

/// Wiener increments: increments[i][j] = sqrt(dt) * N(0,1), replayable from seed.
struct NoisePath {
    std::vector<Vector> increments;
    double dt = 1.0;
    std::uint64_t seed = 0;
};

inline Vector draw_increment(RngStream& rng, std::size_t dim, double dt) {
    const double scale = std::sqrt(dt);
    Vector dw(dim);
    for (auto& v : dw) v = scale * rng.standard_normal();
    return dw;
}

inline NoisePath make_noise_path(std::size_t dim, std::size_t n_steps, double dt,
                                 std::uint64_t seed) {
    if (!(dt > 0)) throw ValidationError("make_noise_path: dt must be positive");
    NoisePath p{{}, dt, seed};
    RngStream rng(seed);
    p.increments.reserve(n_steps);
    for (std::size_t i = 0; i < n_steps; ++i) p.increments.push_back(draw_increment(rng, dim, dt));
    return p;
}

/// Any component beyond this magnitude aborts integration.
inline constexpr double kBlowUpThreshold = 1e6;

/// x + mu(x,t) dt + sigma(x,t) (.) dW
template <SdeCoefficients M>
Vector euler_maruyama_step(const M& model, std::span<const double> x, double t, double dt,
                           std::span<const double> dW, std::size_t step_index = 0) {
    if (x.size() != model.dim() || dW.size() != model.dim())
        throw DimensionError("euler_maruyama_step: x or dW length != model dim");
    if (!(dt > 0)) throw ValidationError("euler_maruyama_step: dt must be positive");
    const Vector mu = model.drift(x, t);
    const Vector sigma = model.diffusion(x, t);
    Vector next(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) next[i] = x[i] + mu[i] * dt + sigma[i] * dW[i];
    if (!all_finite(next))
        throw IntegrationError("euler_maruyama_step: non-finite state at step " +
                                   std::to_string(step_index),
                               step_index);
    return next;
}

namespace detail {

template <SdeCoefficients M, typename NextIncrement>
EmbeddingTrajectory integrate(const M& model, const Vector& x0, std::size_t n_steps, double dt,
                              double t0, NextIncrement&& next_increment) {
    if (x0.size() != model.dim()) throw DimensionError("simulate: x0 length != model dim");
    if (!(dt > 0)) throw ValidationError("simulate: dt must be positive");
    if (n_steps == 0) throw ValidationError("simulate: n_steps must be positive");
    EmbeddingTrajectory traj;
    traj.states.reserve(n_steps + 1);
    traj.times.reserve(n_steps + 1);
    traj.states.push_back(x0);
    traj.times.push_back(t0);
    for (std::size_t k = 0; k < n_steps; ++k) {
        const double t = t0 + static_cast<double>(k) * dt;
        const Vector dw = next_increment(k);
        Vector next;
        try {
            next = euler_maruyama_step(model, traj.states.back(), t, dt, dw, k);
        } catch (const IntegrationError& e) {
            throw IntegrationError(e.what(), k, traj.states);
        }
        for (double v : next) {
            if (std::abs(v) > kBlowUpThreshold)
                throw IntegrationError("simulate: state blew up (|x| > 1e6) at step " +
                                           std::to_string(k),
                                       k, traj.states);
        }
        traj.states.push_back(std::move(next));
        traj.times.push_back(t0 + static_cast<double>(k + 1) * dt);
    }
    return traj;
}

}  // namespace detail

/// Euler-Maruyama path of n_steps + 1 states at times t0, t0+dt, ...
template <SdeCoefficients M>
EmbeddingTrajectory simulate(const M& model, const Vector& x0, std::size_t n_steps, double dt,
                             std::uint64_t seed, double t0 = 0.0) {
    RngStream rng(seed);
    const std::size_t d = model.dim();
    return detail::integrate(model, x0, n_steps, dt, t0,
                             [&](std::size_t) { return draw_increment(rng, d, dt); });
}

/// Replays a stored noise path.
template <SdeCoefficients M>
EmbeddingTrajectory simulate(const M& model, const Vector& x0, const NoisePath& noise,
                             double t0 = 0.0) {
    for (const auto& inc : noise.increments)
        if (inc.size() != model.dim()) throw DimensionError("simulate: noise dim != model dim");
    return detail::integrate(model, x0, noise.increments.size(), noise.dt, t0,
                             [&](std::size_t k) { return noise.increments[k]; });
}

/// Starts at the mean of the question embeddings and integrates n_steps forward.
template <SdeCoefficients M>
EmbeddingTrajectory generate_answer(const M& model, std::span<const Vector> question_embeddings,
                                    std::size_t n_steps, double dt, std::uint64_t seed) {
    if (question_embeddings.empty()) throw ValidationError("generate_answer: no question embeddings");
    for (const auto& q : question_embeddings)
        if (q.size() != model.dim())
            throw DimensionError("generate_answer: question embedding length != model dim");
    return simulate(model, mean_of(question_embeddings), n_steps, dt, seed);
}

struct PicardResult {
    std::vector<double> t_grid;
    /// iterates[n][j] = X_n(t_j)
    std::vector<std::vector<Vector>> iterates;
    /// gaps[n] = sup_j ||X_{n+1}(t_j) - X_n(t_j)||_inf
    std::vector<double> gaps;
};

/// Successive approximations X_{n+1}(t) = x0 + int_0^t a X_n(s) ds on a uniform
/// grid, integrals by the cumulative trapezoid rule. Deterministic case only.
inline PicardResult picard_iterates(const LinearSdeSpec& spec, const Vector& x0,
                                    const std::vector<double>& t_grid, std::size_t n_iters) {
    if (spec.b != 0.0)
        throw ValidationError("picard_iterates: only the deterministic case (b = 0) is supported");
    if (x0.size() != spec.dim()) throw DimensionError("picard_iterates: x0 length != dim");
    if (t_grid.size() < 2) throw ValidationError("picard_iterates: need at least 2 grid points");
    const double h = t_grid[1] - t_grid[0];
    for (std::size_t j = 1; j < t_grid.size(); ++j) {
        if (std::abs((t_grid[j] - t_grid[j - 1]) - h) > 1e-9 * std::max(1.0, std::abs(h)) ||
            !(h > 0))
            throw ValidationError("picard_iterates: t_grid must be uniform and increasing");
    }

    PicardResult out;
    out.t_grid = t_grid;
    out.iterates.emplace_back(t_grid.size(), x0);
    for (std::size_t n = 0; n < n_iters; ++n) {
        const auto& prev = out.iterates.back();
        std::vector<Vector> next(t_grid.size(), x0);
        Vector integral(x0.size(), 0.0);
        Vector f_prev = spec.drift(prev[0], t_grid[0]);
        for (std::size_t j = 1; j < t_grid.size(); ++j) {
            const Vector f = spec.drift(prev[j], t_grid[j]);
            for (std::size_t i = 0; i < x0.size(); ++i) {
                integral[i] += 0.5 * h * (f_prev[i] + f[i]);
                next[j][i] = x0[i] + integral[i];
            }
            f_prev = f;
        }
        double gap = 0.0;
        for (std::size_t j = 0; j < t_grid.size(); ++j)
            for (std::size_t i = 0; i < x0.size(); ++i)
                gap = std::max(gap, std::abs(next[j][i] - prev[j][i]));
        out.gaps.push_back(gap);
        out.iterates.push_back(std::move(next));
    }
    return out;
}

/// Uniform grid t0, t0+h, ..., with n_intervals + 1 points.
inline std::vector<double> uniform_grid(double t0, double t1, std::size_t n_intervals) {
    std::vector<double> g(n_intervals + 1);
    const double h = (t1 - t0) / static_cast<double>(n_intervals);
    for (std::size_t j = 0; j <= n_intervals; ++j) g[j] = t0 + static_cast<double>(j) * h;
    return g;
}

}  // namespace nsde
