#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "metaweight/dataset.hpp"
#include "metaweight/errors.hpp"
#include "metaweight/nn.hpp"

namespace metaweight {

/// Step-decay learning rate: base rate divided by decay_factor at each
/// listed epoch.
struct LrSchedule {
    double base_rate = 0.1;
    std::vector<long> decay_epochs;  // strictly increasing
    double decay_factor = 10.0;

    double at(long epoch) const {
        double rate = base_rate;
        for (long e : decay_epochs)
            if (epoch >= e) rate /= decay_factor;
        return rate;
    }

    void validate() const {
        if (base_rate <= 0.0) throw ConfigError("LrSchedule: base_rate must be > 0");
        if (decay_factor <= 0.0) throw ConfigError("LrSchedule: decay_factor must be > 0");
        for (std::size_t i = 1; i < decay_epochs.size(); ++i)
            if (decay_epochs[i] <= decay_epochs[i - 1])
                throw ConfigError("LrSchedule: decay_epochs must be strictly increasing");
    }
};

/// The classifier f_Theta: an MLP whose last layer emits raw logits.
struct ClassifierParams {
    Mlp net;
    std::size_t input_dim = 0;
    std::size_t num_classes = 0;

    std::size_t param_count() const { return net.param_count(); }

    std::vector<double> flatten() const {
        std::vector<double> out;
        out.reserve(param_count());
        net.flatten(out);
        return out;
    }
    void unflatten(std::span<const double> flat) {
        if (flat.size() != param_count())
            throw ShapeError("ClassifierParams::unflatten: length mismatch");
        net.unflatten(flat, 0);
    }
};

/// input_dim -> hidden... -> num_classes, relu hidden, identity logits.
inline ClassifierParams make_classifier(std::size_t input_dim,
                                        const std::vector<std::size_t>& hidden_dims,
                                        std::size_t num_classes, RngState& rng) {
    std::vector<std::size_t> dims;
    dims.push_back(input_dim);
    dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
    dims.push_back(num_classes);
    ClassifierParams params;
    params.net = make_mlp(dims, Activation::relu, Activation::identity, rng);
    params.input_dim = input_dim;
    params.num_classes = num_classes;
    return params;
}

inline std::vector<double> forward_logits(const ClassifierParams& params,
                                          std::span<const double> x) {
    if (x.size() != params.input_dim)
        throw ShapeError("forward_logits: input dim mismatch");
    return params.net.forward(x);
}

/// Weighted batch loss (1/n) sum_i w_i * ce(f(x_i), y_i); weights taken as given.
inline double weighted_batch_loss(const ClassifierParams& params, const LabeledDataset& ds,
                                  const std::vector<std::size_t>& batch,
                                  std::span<const double> weights) {
    if (weights.size() != batch.size())
        throw ContractError("weighted_batch_loss: weights length != batch size");
    double loss = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (weights[i] < 0.0)
            throw ContractError("weighted_batch_loss: negative weight");
        const auto z = forward_logits(params, ds.x(batch[i]));
        loss += weights[i] *
                cross_entropy_with_logits(z, ds.observed_labels[batch[i]]);
    }
    return loss / static_cast<double>(batch.size());
}

/// Gradient of ce(f(x), y) with respect to all classifier parameters,
/// flattened in canonical order. Also hands back the logits.
inline std::vector<double> per_sample_gradient(const ClassifierParams& params,
                                               std::span<const double> x, int label,
                                               std::vector<double>* logits_out = nullptr) {
    Mlp::Trace trace;
    const std::vector<double> z = params.net.forward(x, trace);
    if (logits_out) *logits_out = z;
    std::vector<double> grad(params.param_count(), 0.0);
    const std::vector<double> upstream = cross_entropy_gradient(z, label);
    params.net.backward(trace, upstream, grad);
    return grad;
}

/// g_i = grad of ce(f(x_i), y_i) for each batch element.
inline std::vector<std::vector<double>> per_sample_gradients(
    const ClassifierParams& params, const LabeledDataset& ds,
    const std::vector<std::size_t>& batch) {
    if (batch.empty()) throw ContractError("per_sample_gradients: empty batch");
    std::vector<std::vector<double>> grads;
    grads.reserve(batch.size());
    for (std::size_t i : batch)
        grads.push_back(per_sample_gradient(params, ds.x(i), ds.observed_labels[i]));
    return grads;
}

inline void sgd_step(ClassifierParams& params, std::span<const double> gradient,
                     double rate) {
    if (gradient.size() != params.param_count())
        throw ShapeError("sgd_step: gradient length mismatch");
    std::vector<double> flat = params.flatten();
    for (std::size_t i = 0; i < flat.size(); ++i) flat[i] -= rate * gradient[i];
    params.unflatten(flat);
}

inline int argmax_class(std::span<const double> z) {
    // Strict > keeps the smallest class index on ties.
    int best = 0;
    for (std::size_t i = 1; i < z.size(); ++i)
        if (z[i] > z[best]) best = static_cast<int>(i);
    return best;
}

/// Fraction of samples whose argmax logit equals the observed label.
inline double evaluate_accuracy(const ClassifierParams& params, const LabeledDataset& ds) {
    if (ds.size() == 0) throw ContractError("evaluate_accuracy: empty dataset");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto z = forward_logits(params, ds.x(i));
        if (argmax_class(z) == ds.observed_labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

/// Per-class recall against clean labels (empty classes report -1).
inline std::vector<double> per_class_recall(const ClassifierParams& params,
                                            const LabeledDataset& ds) {
    std::vector<std::size_t> total(ds.num_classes, 0), hit(ds.num_classes, 0);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const int y = ds.clean_labels[i];
        total[y]++;
        const auto z = forward_logits(params, ds.x(i));
        if (argmax_class(z) == y) hit[y]++;
    }
    std::vector<double> recall(ds.num_classes);
    for (int c = 0; c < ds.num_classes; ++c)
        recall[c] = total[c] ? static_cast<double>(hit[c]) / static_cast<double>(total[c])
                             : -1.0;
    return recall;
}

}  // namespace metaweight
