#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "metaweight/errors.hpp"
#include "metaweight/matrix.hpp"
#include "metaweight/rng.hpp"

namespace metaweight {

enum class Activation { identity, relu, sigmoid, tanh };

inline const char* to_string(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::relu: return "relu";
        case Activation::sigmoid: return "sigmoid";
        case Activation::tanh: return "tanh";
    }
    return "?";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "identity") return Activation::identity;
    if (s == "relu") return Activation::relu;
    if (s == "sigmoid") return Activation::sigmoid;
    if (s == "tanh") return Activation::tanh;
    throw ConfigError("unknown activation: " + s);
}

inline double apply_activation(Activation a, double u) {
    switch (a) {
        case Activation::identity: return u;
        case Activation::relu: return u > 0.0 ? u : 0.0;
        case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-u));
        case Activation::tanh: return std::tanh(u);
    }
    return u;
}

/// Derivative at pre-activation u. relu uses the 0 subgradient at the kink.
inline double activation_derivative(Activation a, double u) {
    switch (a) {
        case Activation::identity: return 1.0;
        case Activation::relu: return u > 0.0 ? 1.0 : 0.0;
        case Activation::sigmoid: {
            const double s = 1.0 / (1.0 + std::exp(-u));
            return s * (1.0 - s);
        }
        case Activation::tanh: {
            const double t = std::tanh(u);
            return 1.0 - t * t;
        }
    }
    return 1.0;
}

/// One fully connected layer: activation(W x + b).
struct DenseLayer {
    Matrix weights;             // out x in
    std::vector<double> bias;   // out
    Activation activation = Activation::identity;

    DenseLayer() = default;
    DenseLayer(std::size_t out, std::size_t in, Activation act)
        : weights(out, in), bias(out, 0.0), activation(act) {}

    std::size_t in_dim() const { return weights.cols(); }
    std::size_t out_dim() const { return weights.rows(); }
    std::size_t param_count() const { return weights.size() + bias.size(); }

    void check_shapes() const {
        if (bias.size() != weights.rows())
            throw ShapeError("DenseLayer: bias length " + std::to_string(bias.size()) +
                             " != weight rows " + std::to_string(weights.rows()));
    }
};

/// Glorot-style uniform init: weights ~ U(±sqrt(6/(fan_in+fan_out))), zero bias.
inline DenseLayer make_dense_layer(std::size_t out, std::size_t in, Activation act,
                                   RngState& rng) {
    DenseLayer layer(out, in, act);
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    for (double& w : layer.weights.data()) w = (2.0 * rng.next_double() - 1.0) * bound;
    return layer;
}

/// Pre-activation u = W x + b.
inline std::vector<double> affine_preactivation(const DenseLayer& layer,
                                                std::span<const double> x) {
    layer.check_shapes();
    std::vector<double> u = matvec(layer.weights, x);
    for (std::size_t i = 0; i < u.size(); ++i) u[i] += layer.bias[i];
    return u;
}

inline std::vector<double> affine_forward(const DenseLayer& layer,
                                          std::span<const double> x) {
    std::vector<double> u = affine_preactivation(layer, x);
    for (double& v : u) v = apply_activation(layer.activation, v);
    return u;
}

struct AffineGradients {
    Matrix weights;
    std::vector<double> bias;
    std::vector<double> input;
};

/// Exact gradients of upstream . forward(x) with respect to W, b and x.
inline AffineGradients affine_backward(const DenseLayer& layer, std::span<const double> x,
                                       std::span<const double> upstream) {
    layer.check_shapes();
    if (upstream.size() != layer.out_dim())
        throw ShapeError("affine_backward: upstream length mismatch");
    const std::vector<double> u = affine_preactivation(layer, x);

    AffineGradients g;
    g.weights = Matrix(layer.out_dim(), layer.in_dim());
    g.bias.assign(layer.out_dim(), 0.0);
    g.input.assign(layer.in_dim(), 0.0);
    for (std::size_t r = 0; r < layer.out_dim(); ++r) {
        const double delta = upstream[r] * activation_derivative(layer.activation, u[r]);
        g.bias[r] = delta;
        for (std::size_t c = 0; c < layer.in_dim(); ++c) {
            g.weights(r, c) = delta * x[c];
            g.input[c] += layer.weights(r, c) * delta;
        }
    }
    return g;
}

/// Flattened-parameter helpers. Canonical order within a layer is weights
/// (row-major) then bias; an Mlp concatenates its layers front to back.
inline void flatten_layer(const DenseLayer& layer, std::vector<double>& out) {
    out.insert(out.end(), layer.weights.data().begin(), layer.weights.data().end());
    out.insert(out.end(), layer.bias.begin(), layer.bias.end());
}

inline std::size_t unflatten_layer(DenseLayer& layer, std::span<const double> flat,
                                   std::size_t offset) {
    for (double& w : layer.weights.data()) w = flat[offset++];
    for (double& b : layer.bias) b = flat[offset++];
    return offset;
}

/// Accumulate layer gradients into a flat slice at `offset`; returns new offset.
inline std::size_t accumulate_layer_grad(const DenseLayer& layer,
                                         std::span<const double> x, std::span<const double> u,
                                         std::span<const double> upstream,
                                         std::span<double> flat, std::size_t offset,
                                         std::vector<double>* input_grad) {
    const std::size_t out = layer.out_dim();
    const std::size_t in = layer.in_dim();
    if (input_grad) input_grad->assign(in, 0.0);
    for (std::size_t r = 0; r < out; ++r) {
        const double delta = upstream[r] * activation_derivative(layer.activation, u[r]);
        double* wrow = flat.data() + offset + r * in;
        for (std::size_t c = 0; c < in; ++c) {
            wrow[c] += delta * x[c];
            if (input_grad) (*input_grad)[c] += layer.weights(r, c) * delta;
        }
        flat[offset + out * in + r] += delta;
    }
    return offset + layer.param_count();
}

/// A plain feed-forward stack of dense layers.
struct Mlp {
    std::vector<DenseLayer> layers;

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.param_count();
        return n;
    }
    std::size_t in_dim() const { return layers.front().in_dim(); }
    std::size_t out_dim() const { return layers.back().out_dim(); }

    /// Per-layer inputs and pre-activations captured during forward.
    struct Trace {
        std::vector<std::vector<double>> inputs;
        std::vector<std::vector<double>> preacts;
    };

    std::vector<double> forward(std::span<const double> x) const {
        std::vector<double> cur(x.begin(), x.end());
        for (const auto& layer : layers) cur = affine_forward(layer, cur);
        return cur;
    }

    std::vector<double> forward(std::span<const double> x, Trace& trace) const {
        trace.inputs.clear();
        trace.preacts.clear();
        std::vector<double> cur(x.begin(), x.end());
        for (const auto& layer : layers) {
            trace.inputs.push_back(cur);
            std::vector<double> u = affine_preactivation(layer, cur);
            trace.preacts.push_back(u);
            for (double& v : u) v = apply_activation(layer.activation, v);
            cur = std::move(u);
        }
        return cur;
    }

    /// Backward pass from a cached trace. Adds parameter gradients into
    /// `flat_grad` (canonical order, starting at `offset`) and returns the
    /// gradient with respect to the network input.
    std::vector<double> backward(const Trace& trace, std::span<const double> upstream,
                                 std::span<double> flat_grad, std::size_t offset = 0) const {
        std::vector<std::size_t> offsets(layers.size());
        for (std::size_t i = 0; i < layers.size(); ++i) {
            offsets[i] = offset;
            offset += layers[i].param_count();
        }
        std::vector<double> up(upstream.begin(), upstream.end());
        std::vector<double> down;
        for (std::size_t i = layers.size(); i-- > 0;) {
            accumulate_layer_grad(layers[i], trace.inputs[i], trace.preacts[i], up,
                                  flat_grad, offsets[i], &down);
            up = std::move(down);
        }
        return up;
    }

    void flatten(std::vector<double>& out) const {
        for (const auto& l : layers) flatten_layer(l, out);
    }
    std::size_t unflatten(std::span<const double> flat, std::size_t offset) {
        for (auto& l : layers) offset = unflatten_layer(l, flat, offset);
        return offset;
    }
};

inline Mlp make_mlp(const std::vector<std::size_t>& dims, Activation hidden_act,
                    Activation output_act, RngState& rng) {
    if (dims.size() < 2) throw ShapeError("make_mlp: need at least input and output dims");
    Mlp mlp;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        const bool last = (i + 2 == dims.size());
        mlp.layers.push_back(
            make_dense_layer(dims[i + 1], dims[i], last ? output_act : hidden_act, rng));
    }
    return mlp;
}

// ---------------------------------------------------------------------------
// Losses

/// Numerically stable softmax (max subtraction).
inline std::vector<double> softmax(std::span<const double> z) {
    std::vector<double> p(z.begin(), z.end());
    const double m = *std::max_element(p.begin(), p.end());
    double sum = 0.0;
    for (double& v : p) {
        v = std::exp(v - m);
        sum += v;
    }
    for (double& v : p) v /= sum;
    return p;
}

inline double log_sum_exp(std::span<const double> z) {
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - m);
    return m + std::log(sum);
}

/// -log softmax(z)[y], computed as log-sum-exp(z) - z[y].
inline double cross_entropy_with_logits(std::span<const double> z, std::size_t y) {
    if (y >= z.size())
        throw IndexError("cross_entropy_with_logits: label " + std::to_string(y) +
                         " out of range for " + std::to_string(z.size()) + " logits");
    return log_sum_exp(z) - z[y];
}

/// Gradient of cross_entropy_with_logits w.r.t. z: softmax(z) - onehot(y).
inline std::vector<double> cross_entropy_gradient(std::span<const double> z, std::size_t y) {
    if (y >= z.size()) throw IndexError("cross_entropy_gradient: label out of range");
    std::vector<double> g = softmax(z);
    g[y] -= 1.0;
    return g;
}

/// i.i.d. standard normal draws, deterministic given the rng state.
inline std::vector<double> sample_standard_normal(RngState& rng, std::size_t dim) {
    if (dim < 1) throw ContractError("sample_standard_normal: dim must be >= 1");
    return rng.normal_vector(dim);
}

}  // namespace metaweight
