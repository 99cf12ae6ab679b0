#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "numeric.hpp"

namespace nsde {

enum class HiddenActivation { tanh, relu };
enum class OutputActivation { identity, softplus };

/// Feed-forward network. weights[i] is layer_dims[i+1] x layer_dims[i].
struct MlpNetwork {
    std::vector<std::size_t> layer_dims;
    std::vector<Matrix> weights;
    std::vector<Vector> biases;
    HiddenActivation hidden_activation = HiddenActivation::tanh;
    OutputActivation output_activation = OutputActivation::identity;

    std::size_t input_dim() const { return layer_dims.front(); }
    std::size_t output_dim() const { return layer_dims.back(); }
    std::size_t num_layers() const { return weights.size(); }

    friend bool operator==(const MlpNetwork&, const MlpNetwork&) = default;
};

/// dLoss/dtheta, shape-congruent with the network it was computed for.
struct GradientSet {
    std::vector<Matrix> weights;
    std::vector<Vector> biases;

    static GradientSet zeros_like(const MlpNetwork& net) {
        GradientSet g;
        for (std::size_t l = 0; l < net.num_layers(); ++l) {
            g.weights.emplace_back(net.weights[l].rows(), net.weights[l].cols());
            g.biases.emplace_back(net.biases[l].size(), 0.0);
        }
        return g;
    }

    void add_scaled(const GradientSet& other, double s) {
        for (std::size_t l = 0; l < weights.size(); ++l) {
            auto dst = weights[l].data();
            auto src = other.weights[l].data();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
            for (std::size_t i = 0; i < biases[l].size(); ++i)
                biases[l][i] += s * other.biases[l][i];
        }
    }

    void scale(double s) {
        for (std::size_t l = 0; l < weights.size(); ++l) {
            for (auto& v : weights[l].data()) v *= s;
            for (auto& v : biases[l]) v *= s;
        }
    }

    double squared_norm() const {
        double s = 0.0;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            s += nsde::squared_norm(weights[l].data());
            s += nsde::squared_norm(biases[l]);
        }
        return s;
    }

    bool finite() const {
        for (std::size_t l = 0; l < weights.size(); ++l)
            if (!all_finite(weights[l].data()) || !all_finite(biases[l])) return false;
        return true;
    }
};

namespace detail {

inline double softplus(double z) {
    // floor keeps the head strictly positive where exp underflows
    const double v = z > 30.0 ? z : std::log1p(std::exp(z));
    return std::max(v, std::numeric_limits<double>::min());
}

inline double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline double hidden(HiddenActivation a, double z) {
    return a == HiddenActivation::tanh ? std::tanh(z) : (z > 0 ? z : 0.0);
}

// derivative expressed through pre-activation z and activation h
inline double hidden_grad(HiddenActivation a, double z, double h) {
    return a == HiddenActivation::tanh ? 1.0 - h * h : (z > 0 ? 1.0 : 0.0);
}

inline double output(OutputActivation a, double z) {
    return a == OutputActivation::identity ? z : softplus(z);
}

inline double output_grad(OutputActivation a, double z) {
    return a == OutputActivation::identity ? 1.0 : sigmoid(z);
}

}  // namespace detail

/// Throws DimensionError unless the network's parameter shapes agree with layer_dims.
inline void validate(const MlpNetwork& net) {
    if (net.layer_dims.size() < 2) throw DimensionError("MlpNetwork: need at least 2 layer dims");
    if (net.weights.size() != net.layer_dims.size() - 1 ||
        net.biases.size() != net.layer_dims.size() - 1) {
        throw DimensionError("MlpNetwork: layer count mismatch");
    }
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        if (net.weights[l].rows() != net.layer_dims[l + 1] ||
            net.weights[l].cols() != net.layer_dims[l] ||
            net.biases[l].size() != net.layer_dims[l + 1]) {
            throw DimensionError("MlpNetwork: layer " + std::to_string(l) + " shape mismatch");
        }
    }
}

/// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases.
inline MlpNetwork make_mlp(std::vector<std::size_t> layer_dims, HiddenActivation hidden,
                           OutputActivation out, RngStream& rng) {
    MlpNetwork net;
    net.layer_dims = std::move(layer_dims);
    net.hidden_activation = hidden;
    net.output_activation = out;
    for (std::size_t l = 0; l + 1 < net.layer_dims.size(); ++l) {
        const std::size_t fan_in = net.layer_dims[l];
        const std::size_t fan_out = net.layer_dims[l + 1];
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Matrix w(fan_out, fan_in);
        for (auto& v : w.data()) v = rng.uniform(-limit, limit);
        net.weights.push_back(std::move(w));
        net.biases.emplace_back(fan_out, 0.0);
    }
    validate(net);
    return net;
}

/// Pre-activations and activations of every layer for one input.
struct ForwardTrace {
    std::vector<Vector> activations;      // activations[0] = input
    std::vector<Vector> pre_activations;  // one per layer
};

inline ForwardTrace forward_trace(const MlpNetwork& net, std::span<const double> input) {
    if (input.size() != net.input_dim()) {
        throw DimensionError("forward: input length " + std::to_string(input.size()) +
                             " != " + std::to_string(net.input_dim()));
    }
    ForwardTrace tr;
    tr.activations.emplace_back(input.begin(), input.end());
    const std::size_t last = net.num_layers() - 1;
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        Vector z = net.weights[l] * std::span<const double>(tr.activations.back());
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += net.biases[l][i];
        Vector h(z.size());
        for (std::size_t i = 0; i < z.size(); ++i) {
            h[i] = l == last ? detail::output(net.output_activation, z[i])
                             : detail::hidden(net.hidden_activation, z[i]);
        }
        tr.pre_activations.push_back(std::move(z));
        tr.activations.push_back(std::move(h));
    }
    return tr;
}

inline Vector forward(const MlpNetwork& net, std::span<const double> input) {
    return std::move(forward_trace(net, input).activations.back());
}

/// Accumulates d(output . upstream)/dtheta into `grads` using a cached trace.
inline void accumulate_backward(const MlpNetwork& net, const ForwardTrace& tr,
                                std::span<const double> upstream, GradientSet& grads,
                                double scale = 1.0) {
    if (upstream.size() != net.output_dim()) {
        throw DimensionError("backward: upstream length != output dim");
    }
    const std::size_t last = net.num_layers() - 1;
    Vector delta(upstream.size());
    for (std::size_t i = 0; i < delta.size(); ++i) {
        delta[i] = scale * upstream[i] *
                   detail::output_grad(net.output_activation, tr.pre_activations[last][i]);
    }
    for (std::size_t l = net.num_layers(); l-- > 0;) {
        const Vector& in = tr.activations[l];
        Matrix& gw = grads.weights[l];
        for (std::size_t r = 0; r < delta.size(); ++r) {
            const double dr = delta[r];
            if (dr == 0.0) continue;
            for (std::size_t c = 0; c < in.size(); ++c) gw(r, c) += dr * in[c];
            grads.biases[l][r] += dr;
        }
        if (l == 0) break;
        Vector prev(in.size(), 0.0);
        const Matrix& w = net.weights[l];
        for (std::size_t r = 0; r < delta.size(); ++r) {
            const double dr = delta[r];
            if (dr == 0.0) continue;
            const auto row = w.row(r);
            for (std::size_t c = 0; c < in.size(); ++c) prev[c] += row[c] * dr;
        }
        for (std::size_t c = 0; c < prev.size(); ++c) {
            prev[c] *= detail::hidden_grad(net.hidden_activation, tr.pre_activations[l - 1][c],
                                           in[c]);
        }
        delta = std::move(prev);
    }
}

/// Exact gradient of forward(net, input) . upstream_gradient w.r.t. every parameter.
inline GradientSet backward(const MlpNetwork& net, std::span<const double> input,
                            std::span<const double> upstream_gradient) {
    const auto tr = forward_trace(net, input);
    auto grads = GradientSet::zeros_like(net);
    accumulate_backward(net, tr, upstream_gradient, grads);
    return grads;
}

inline void require_congruent(const MlpNetwork& net, const GradientSet& grads) {
    if (grads.weights.size() != net.weights.size() || grads.biases.size() != net.biases.size())
        throw DimensionError("GradientSet: layer count differs from network");
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        if (grads.weights[l].rows() != net.weights[l].rows() ||
            grads.weights[l].cols() != net.weights[l].cols() ||
            grads.biases[l].size() != net.biases[l].size())
            throw DimensionError("GradientSet: shape differs from network at layer " +
                                 std::to_string(l));
    }
}

/// theta <- theta - lr * grad, returned as a new network.
inline MlpNetwork sgd_step(const MlpNetwork& net, const GradientSet& grads, double learning_rate) {
    require_congruent(net, grads);
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw ValidationError("sgd_step: learning rate must be finite and >= 0");
    if (!grads.finite()) throw TrainingError("sgd_step: non-finite gradient (diverged)", -1);
    MlpNetwork next = net;
    for (std::size_t l = 0; l < next.num_layers(); ++l) {
        auto w = next.weights[l].data();
        auto g = grads.weights[l].data();
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= learning_rate * g[i];
        for (std::size_t i = 0; i < next.biases[l].size(); ++i)
            next.biases[l][i] -= learning_rate * grads.biases[l][i];
    }
    return next;
}

inline std::size_t parameter_count(const MlpNetwork& net) {
    std::size_t n = 0;
    for (std::size_t l = 0; l < net.num_layers(); ++l)
        n += net.weights[l].data().size() + net.biases[l].size();
    return n;
}

/// Parameters in layer order, each layer as weights (row-major) then biases.
inline std::vector<double> flatten_parameters(const MlpNetwork& net) {
    std::vector<double> out;
    out.reserve(parameter_count(net));
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        auto w = net.weights[l].data();
        out.insert(out.end(), w.begin(), w.end());
        out.insert(out.end(), net.biases[l].begin(), net.biases[l].end());
    }
    return out;
}

inline std::vector<double> flatten(const GradientSet& g) {
    std::vector<double> out;
    for (std::size_t l = 0; l < g.weights.size(); ++l) {
        auto w = g.weights[l].data();
        out.insert(out.end(), w.begin(), w.end());
        out.insert(out.end(), g.biases[l].begin(), g.biases[l].end());
    }
    return out;
}

inline void assign_parameters(MlpNetwork& net, std::span<const double> flat) {
    if (flat.size() != parameter_count(net))
        throw DimensionError("assign_parameters: wrong parameter count");
    std::size_t k = 0;
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        for (auto& v : net.weights[l].data()) v = flat[k++];
        for (auto& v : net.biases[l]) v = flat[k++];
    }
}

}  // namespace nsde
