#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "mlp.hpp"
#include "numeric.hpp"
#include "sde_model.hpp"

namespace nsde {

/// One observed transition (X(t_i), X(t_i + dt)).
struct TransitionSample {
    Vector x;
    Vector x_next;
    double t = 0.0;
    double dt = 1.0;
    std::size_t trajectory_id = 0;
    std::size_t position = 0;
};

struct TrainingConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 64;
    double learning_rate = 1e-2;
    double drift_weight = 1.0;
    double diffusion_weight = 1.0;
    std::uint64_t seed = 0;
    double validation_fraction = 0.0;
    std::optional<double> grad_clip = 5.0;

    std::vector<std::size_t> hidden_layers{64, 64};
    HiddenActivation hidden_activation = HiddenActivation::tanh;
    TimeEncoding::Kind time_encoding = TimeEncoding::Kind::scalar_normalized;
    std::size_t sinusoidal_pairs = 4;

    void validate() const {
        if (epochs == 0) throw ValidationError("TrainingConfig: epochs must be positive");
        if (batch_size == 0) throw ValidationError("TrainingConfig: batch_size must be positive");
        if (!(learning_rate > 0) || !std::isfinite(learning_rate))
            throw ValidationError("TrainingConfig: learning_rate must be positive");
        if (drift_weight < 0 || diffusion_weight < 0 || !(drift_weight + diffusion_weight > 0))
            throw ValidationError("TrainingConfig: loss weights must be >= 0 with a positive sum");
        if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
            throw ValidationError("TrainingConfig: validation_fraction must lie in [0, 1)");
        if (grad_clip && !(*grad_clip > 0))
            throw ValidationError("TrainingConfig: grad_clip must be positive");
    }
};

enum class Split { train, validation };

inline std::string to_string(Split s) { return s == Split::train ? "train" : "validation"; }

/// Per-sample averages for one epoch; total = w_mu * drift + w_sigma * diffusion.
struct LossRecord {
    int epoch = 0;
    double total = 0.0;
    double drift = 0.0;
    double diffusion = 0.0;
    Split split = Split::train;

    friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

/// Consecutive-pair samples; fewer than two states yields an empty list.
inline std::vector<TransitionSample> extract_transitions(const EmbeddingTrajectory& traj,
                                                         std::size_t trajectory_id = 0) {
    std::vector<TransitionSample> out;
    if (traj.size() < 2) return out;
    out.reserve(traj.size() - 1);
    for (std::size_t i = 0; i + 1 < traj.size(); ++i) {
        out.push_back({traj.states[i], traj.states[i + 1], traj.times[i],
                       traj.times[i + 1] - traj.times[i], trajectory_id, i});
    }
    return out;
}

namespace detail {

inline Vector residual(const TransitionSample& s, const Vector& mu) {
    require_same_size(s.x, s.x_next, "transition");
    require_same_size(s.x, mu, "transition drift");
    Vector r(s.x.size());
    for (std::size_t j = 0; j < r.size(); ++j) r[j] = s.x_next[j] - (s.x[j] + mu[j] * s.dt);
    return r;
}

inline double drift_term(const Vector& r) { return squared_norm(r); }

inline double diffusion_term(const Vector& r, const Vector& sigma, double dt) {
    double acc = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) {
        if (!(sigma[j] > 0))
            throw ModelInvariantError("diffusion_loss: sigma component <= 0");
        acc += r[j] * r[j] / (2.0 * sigma[j] * sigma[j] * dt) + std::log(sigma[j] * std::sqrt(dt));
    }
    return acc;
}

inline void require_nonempty(std::span<const TransitionSample> batch, const char* where) {
    if (batch.empty()) throw ValidationError(std::string(where) + ": empty batch");
}

}  // namespace detail

/// (1/N) sum ||x_next - (x + mu(x,t) dt)||^2
template <SdeCoefficients M>
double drift_loss(const M& model, std::span<const TransitionSample> batch) {
    detail::require_nonempty(batch, "drift_loss");
    double acc = 0.0;
    for (const auto& s : batch) acc += detail::drift_term(detail::residual(s, model.drift(s.x, s.t)));
    return acc / static_cast<double>(batch.size());
}

/// Gaussian transition NLL of the drift residuals under N(0, diag(sigma^2) dt),
/// without the (d/2) log(2 pi) constant, averaged over samples.
template <SdeCoefficients M>
double diffusion_loss(const M& model, std::span<const TransitionSample> batch) {
    detail::require_nonempty(batch, "diffusion_loss");
    double acc = 0.0;
    for (const auto& s : batch) {
        const Vector r = detail::residual(s, model.drift(s.x, s.t));
        acc += detail::diffusion_term(r, model.diffusion(s.x, s.t), s.dt);
    }
    return acc / static_cast<double>(batch.size());
}

struct LossBreakdown {
    double drift = 0.0;
    double diffusion = 0.0;
    double total = 0.0;
};

struct ModelGradients {
    GradientSet drift;
    GradientSet diffusion;

    double norm() const { return std::sqrt(drift.squared_norm() + diffusion.squared_norm()); }
    bool finite() const { return drift.finite() && diffusion.finite(); }
    void scale(double s) {
        drift.scale(s);
        diffusion.scale(s);
    }
};

/// Batch-averaged weighted loss and its exact parameter gradients. The
/// residual inside the diffusion term is held constant w.r.t. the drift
/// parameters, so the drift network only sees the MSE term.
inline LossBreakdown loss_and_gradient(const SdeModel& model,
                                       std::span<const TransitionSample> batch,
                                       double drift_weight, double diffusion_weight,
                                       ModelGradients* grads) {
    detail::require_nonempty(batch, "loss_and_gradient");
    if (grads) {
        grads->drift = GradientSet::zeros_like(model.drift_net());
        grads->diffusion = GradientSet::zeros_like(model.diffusion_net());
    }
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    const std::size_t d = model.dim();
    LossBreakdown out;
    Vector up_mu(d);
    Vector up_sigma(d);
    for (const auto& s : batch) {
        const Vector in = model.network_input(s.x, s.t);
        const auto tr_mu = forward_trace(model.drift_net(), in);
        const auto tr_sigma = forward_trace(model.diffusion_net(), in);
        const Vector& mu = tr_mu.activations.back();
        const Vector& sigma = tr_sigma.activations.back();
        const Vector r = detail::residual(s, mu);
        out.drift += detail::drift_term(r);
        out.diffusion += detail::diffusion_term(r, sigma, s.dt);
        if (!grads) continue;
        for (std::size_t j = 0; j < d; ++j) {
            up_mu[j] = -2.0 * r[j] * s.dt;
            const double sj = sigma[j];
            up_sigma[j] = 1.0 / sj - r[j] * r[j] / (sj * sj * sj * s.dt);
        }
        if (drift_weight != 0.0)
            accumulate_backward(model.drift_net(), tr_mu, up_mu, grads->drift,
                                drift_weight * inv_n);
        if (diffusion_weight != 0.0)
            accumulate_backward(model.diffusion_net(), tr_sigma, up_sigma, grads->diffusion,
                                diffusion_weight * inv_n);
    }
    out.drift *= inv_n;
    out.diffusion *= inv_n;
    out.total = drift_weight * out.drift + diffusion_weight * out.diffusion;
    return out;
}

inline LossBreakdown evaluate_loss(const SdeModel& model, std::span<const TransitionSample> batch,
                                   double drift_weight, double diffusion_weight) {
    return loss_and_gradient(model, batch, drift_weight, diffusion_weight, nullptr);
}

struct FitResult {
    SdeModel model;
    std::vector<LossRecord> history;
    std::vector<std::size_t> train_trajectories;
    std::vector<std::size_t> validation_trajectories;
};

/// Splits trajectory indices into (train, validation) by trajectory.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_trajectories(
    std::size_t n, double validation_fraction, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    RngStream rng(seed ^ 0x9a1d5a7eULL);
    shuffle(idx, rng);
    std::size_t n_val = static_cast<std::size_t>(std::floor(validation_fraction * static_cast<double>(n)));
    if (n_val >= n) n_val = n - 1;
    std::vector<std::size_t> val(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
    std::sort(val.begin(), val.end());
    std::sort(train.begin(), train.end());
    return {train, val};
}

inline std::vector<TransitionSample> collect_transitions(
    std::span<const EmbeddingTrajectory> trajectories, std::span<const std::size_t> ids) {
    std::vector<TransitionSample> out;
    for (std::size_t id : ids) {
        auto t = extract_transitions(trajectories[id], id);
        out.insert(out.end(), std::make_move_iterator(t.begin()), std::make_move_iterator(t.end()));
    }
    return out;
}

/// Trains drift and diffusion networks jointly with minibatch SGD.
/// Training-split records average the minibatch losses seen during the epoch;
/// validation records evaluate the end-of-epoch model.
inline FitResult fit(std::span<const EmbeddingTrajectory> trajectories,
                     const TrainingConfig& config) {
    config.validate();
    if (trajectories.empty()) throw ValidationError("fit: no trajectories");
    const std::size_t d = trajectories.front().dim();
    double horizon = 0.0;
    for (const auto& tr : trajectories) {
        tr.validate();
        if (tr.dim() != d) throw DimensionError("fit: trajectories differ in dimension");
        horizon = std::max(horizon, tr.times.back());
    }

    auto [train_ids, val_ids] =
        split_trajectories(trajectories.size(), config.validation_fraction, config.seed);
    auto train = collect_transitions(trajectories, train_ids);
    const auto validation = collect_transitions(trajectories, val_ids);
    if (train.empty()) throw ValidationError("fit: no training transitions");

    TimeEncoding enc;
    enc.kind = config.time_encoding;
    enc.pairs = config.time_encoding == TimeEncoding::Kind::sinusoidal ? config.sinusoidal_pairs : 0;
    enc.time_scale = horizon > 0 ? horizon : 1.0;

    RngStream rng(config.seed);
    SdeModel model = make_sde_model(d, config.hidden_layers, enc, rng, config.hidden_activation);

    std::vector<LossRecord> history;
    const double wm = config.drift_weight;
    const double ws = config.diffusion_weight;
    ModelGradients grads;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const int ep = static_cast<int>(epoch);
        shuffle(train, rng);
        LossBreakdown acc;
        for (std::size_t start = 0; start < train.size(); start += config.batch_size) {
            const std::size_t len = std::min(config.batch_size, train.size() - start);
            std::span<const TransitionSample> batch(train.data() + start, len);
            const auto loss = loss_and_gradient(model, batch, wm, ws, &grads);
            if (!std::isfinite(loss.total) || !grads.finite())
                throw TrainingError("fit: non-finite loss in epoch " + std::to_string(ep), ep - 1);
            if (config.grad_clip) {
                const double gn = grads.norm();
                if (gn > *config.grad_clip) grads.scale(*config.grad_clip / gn);
            }
            model = SdeModel(d, sgd_step(model.drift_net(), grads.drift, config.learning_rate),
                             sgd_step(model.diffusion_net(), grads.diffusion, config.learning_rate),
                             enc);
            const double w = static_cast<double>(len);
            acc.drift += w * loss.drift;
            acc.diffusion += w * loss.diffusion;
        }
        LossRecord rec{ep, 0.0, acc.drift / static_cast<double>(train.size()),
                       acc.diffusion / static_cast<double>(train.size()), Split::train};
        rec.total = wm * rec.drift + ws * rec.diffusion;
        if (!std::isfinite(rec.total))
            throw TrainingError("fit: non-finite loss in epoch " + std::to_string(ep), ep - 1);
        history.push_back(rec);

        if (!validation.empty()) {
            const auto v = evaluate_loss(model, validation, wm, ws);
            LossRecord vrec{ep, wm * v.drift + ws * v.diffusion, v.drift, v.diffusion,
                            Split::validation};
            if (!std::isfinite(vrec.total))
                throw TrainingError("fit: non-finite validation loss in epoch " + std::to_string(ep),
                                    ep - 1);
            history.push_back(vrec);
        }
    }
    return {std::move(model), std::move(history), std::move(train_ids), std::move(val_ids)};
}

}  // namespace nsde
