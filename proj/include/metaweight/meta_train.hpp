#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "metaweight/classifier.hpp"
#include "metaweight/dataset.hpp"
#include "metaweight/errors.hpp"
#include "metaweight/metrics.hpp"
#include "metaweight/mwnet.hpp"
#include "metaweight/rng.hpp"

namespace metaweight {

/// Everything a training run needs beyond the datasets.
struct HyperParams {
    MwVariant variant = MwVariant::metainfonet;
    std::vector<std::size_t> classifier_hidden = {64, 64};
    std::size_t mwnet_hidden = 100;
    std::size_t psi_dim = 0;  // 0 -> num_classes

    double alpha = 10.0;  // classifier LR; note the 1/n inside the update
    std::vector<long> alpha_decay_epochs;
    double alpha_decay_factor = 10.0;
    double beta = 0.1;    // weighting-net LR
    double lambda = 0.1;  // bottleneck KL coefficient
    double weight_decay = 0.0;  // classifier L2-on-gradient, real step only
    double mwnet_weight_decay = 5e-4;

    std::size_t train_batch = 100;   // n
    std::size_t meta_batch = 40;     // m
    std::size_t total_iters = 1200;  // T
    std::size_t mwnet_interval = 1;
    bool deterministic_psi = false;

    std::uint64_t init_seed = 1;
    std::uint64_t epsilon_seed = 2;

    LrSchedule alpha_schedule() const {
        return LrSchedule{alpha, alpha_decay_epochs, alpha_decay_factor};
    }

    void validate(std::size_t train_size, std::size_t meta_size) const {
        if (!(alpha > 0.0)) throw ConfigError("alpha must be > 0");
        if (beta < 0.0) throw ConfigError("beta must be >= 0");
        if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
        if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
        if (mwnet_weight_decay < 0.0) throw ConfigError("mwnet_weight_decay must be >= 0");
        if (train_batch < 1 || train_batch > train_size)
            throw ConfigError("train_batch must be in [1, train set size]");
        if (meta_batch < 1 || meta_batch > meta_size)
            throw ConfigError("meta_batch must be in [1, meta set size]");
        if (mwnet_interval < 1) throw ConfigError("mwnet_interval must be >= 1");
        alpha_schedule().validate();
    }
};

/// Forward state of one virtual update, kept for the hypergradient.
struct VirtualCache {
    std::vector<std::size_t> batch;        // indices into the training set
    std::vector<double> losses;            // per-sample cross-entropy at Theta
    std::vector<double> raw_weights;       // w~ under Phi
    std::vector<double> weights;           // normalized
    std::vector<MwSampleCache> mw_caches;
    std::vector<std::vector<double>> epsilons;  // one per sample; empty vectors in deterministic mode
    Matrix sample_grads;                   // n x P, g_i at Theta
    std::vector<double> theta_hat;         // flat virtual parameters
    double alpha = 0.0;
};

/// Draw one epsilon per batch sample, or empty vectors when the variant or
/// mode makes the bottleneck deterministic.
inline std::vector<std::vector<double>> draw_epsilons(const MwNet& phi, std::size_t n,
                                                      bool deterministic_psi,
                                                      RngState& eps_rng) {
    std::vector<std::vector<double>> eps(n);
    if (phi.variant != MwVariant::metainfonet || deterministic_psi) return eps;
    for (auto& e : eps) e = eps_rng.normal_vector(phi.psi_dim);
    return eps;
}

/// Lines 5-9: forward the batch, weight it, and take the lookahead step
/// theta_hat = theta - (alpha/n) * sum_i w_i g_i.
inline VirtualCache virtual_update(const ClassifierParams& theta, const MwNet& phi,
                                   const LabeledDataset& train_ds,
                                   std::vector<std::size_t> batch, double alpha,
                                   std::vector<std::vector<double>> epsilons) {
    const std::size_t n = batch.size();
    if (n < 1) throw ContractError("virtual_update: empty batch");
    if (epsilons.size() != n) throw ContractError("virtual_update: epsilon count != batch size");

    VirtualCache cache;
    cache.batch = std::move(batch);
    cache.epsilons = std::move(epsilons);
    cache.alpha = alpha;
    cache.losses.resize(n);
    cache.raw_weights.resize(n);
    cache.mw_caches.resize(n);
    cache.sample_grads = Matrix(n, theta.param_count());

    std::vector<double> logits;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t row = cache.batch[i];
        const int y = train_ds.observed_labels[row];
        const std::vector<double> g =
            per_sample_gradient(theta, train_ds.x(row), y, &logits);
        std::copy(g.begin(), g.end(), cache.sample_grads.row(i).begin());
        cache.losses[i] = cross_entropy_with_logits(logits, static_cast<std::size_t>(y));
        cache.raw_weights[i] =
            mw_forward(phi, logits, y, cache.losses[i], cache.epsilons[i], cache.mw_caches[i]);
    }
    cache.weights = normalize_weights(cache.raw_weights);

    cache.theta_hat = theta.flatten();
    const double step = alpha / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        axpy(-step * cache.weights[i], cache.sample_grads.row(i), cache.theta_hat);
    return cache;
}

struct MetaGradientDetails {
    double meta_loss = 0.0;
    std::vector<double> grad_dots;  // <g_i, grad_meta> per sample
    std::vector<double> coeffs;     // d(meta objective)/d(raw weight i)
};

/// Exact gradient of (1/m) sum_j ce(f_theta_hat(x_j), y_j) + lambda * mean_KL
/// with respect to Phi, through the virtual step and the weight normalization.
/// Logits z_i come from Theta and are constants here.
inline std::vector<double> meta_gradient(const MwNet& phi, const VirtualCache& cache,
                                         const ClassifierParams& theta_hat,
                                         const LabeledDataset& meta_ds,
                                         const std::vector<std::size_t>& meta_batch,
                                         double lambda,
                                         MetaGradientDetails* details = nullptr) {
    if (meta_batch.empty()) throw ContractError("meta_gradient: empty meta batch");
    if (theta_hat.flatten() != cache.theta_hat)
        throw ContractError("meta_gradient: stale cache (theta_hat mismatch)");

    const std::size_t n = cache.batch.size();
    const std::size_t m = meta_batch.size();

    // grad_meta = (1/m) sum_j grad ce at theta_hat; meta loss alongside.
    std::vector<double> grad_meta(theta_hat.param_count(), 0.0);
    double meta_loss = 0.0;
    std::vector<double> logits;
    for (const std::size_t row : meta_batch) {
        const int y = meta_ds.observed_labels[row];
        const std::vector<double> g = per_sample_gradient(theta_hat, meta_ds.x(row), y, &logits);
        axpy(1.0 / static_cast<double>(m), g, grad_meta);
        meta_loss += cross_entropy_with_logits(logits, static_cast<std::size_t>(y)) /
                     static_cast<double>(m);
    }

    // d(meta loss)/d(normalized w_i) via theta_hat, then through the
    // normalization Jacobian to the raw weights.
    std::vector<double> dots(n), a(n);
    const double scale = -cache.alpha / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        dots[i] = dot(cache.sample_grads.row(i), grad_meta);
        a[i] = scale * dots[i];
    }
    double raw_sum = 0.0, a_dot_w = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        raw_sum += cache.raw_weights[i];
        a_dot_w += a[i] * cache.weights[i];
    }
    std::vector<double> coeffs(n, 0.0);
    if (raw_sum > 0.0)
        for (std::size_t i = 0; i < n; ++i) coeffs[i] = (a[i] - a_dot_w) / raw_sum;

    if (details) {
        details->meta_loss = meta_loss;
        details->grad_dots = dots;
        details->coeffs = coeffs;
    }
    // KL enters as its batch mean, so the per-sample coefficient is lambda/n.
    return mwnet_backward(phi, cache.mw_caches, coeffs, lambda / static_cast<double>(n), true);
}

/// Per-iteration debug/metrics surface.
struct MetaStepTrace {
    std::size_t iteration = 0;
    bool mwnet_updated = false;
    std::vector<double> weights_before;  // normalized, under Phi(t)
    std::vector<double> weights_after;   // normalized, under Phi(t+1) (== before when skipped)
    std::vector<double> grad_dots;       // <g_i, grad_meta>; empty when skipped
    double train_loss = 0.0;             // sum_i w_i * loss_i (weights_before)
    double meta_loss = 0.0;              // 0 when skipped
    double kl_mean = 0.0;                // mean KL over the train batch
    double grad_norm_sq = 0.0;           // ||(1/n) sum w_i g_i||^2 at the real step
    double phi_grad_norm_sq = 0.0;
};

struct TrainState {
    ClassifierParams theta;
    MwNet phi;
    HyperParams hp;
    RngState eps_rng{0};
    std::size_t iteration = 0;
};

/// One full pass over lines 5-14. `alpha` is the scheduled rate for this
/// iteration. The weighting net updates only when the iteration index is a
/// multiple of mwnet_interval; on other iterations the line-5 weights are
/// reused directly for the real step.
inline MetaStepTrace meta_iteration(TrainState& state, const LabeledDataset& train_ds,
                                    std::vector<std::size_t> train_batch,
                                    const LabeledDataset& meta_ds,
                                    const std::vector<std::size_t>& meta_batch,
                                    double alpha) {
    const std::size_t n = train_batch.size();
    MetaStepTrace trace;
    trace.iteration = state.iteration;

    auto eps = draw_epsilons(state.phi, n, state.hp.deterministic_psi, state.eps_rng);
    VirtualCache cache = virtual_update(state.theta, state.phi, train_ds,
                                        std::move(train_batch), alpha, std::move(eps));
    trace.weights_before = cache.weights;
    for (std::size_t i = 0; i < n; ++i)
        trace.train_loss += cache.weights[i] * cache.losses[i];
    if (state.phi.variant == MwVariant::metainfonet) {
        for (const auto& c : cache.mw_caches) trace.kl_mean += kl_to_standard_normal(c.ib);
        trace.kl_mean /= static_cast<double>(n);
    }

    const bool update_phi = state.hp.beta > 0.0 &&
                            state.phi.param_count() > 0 &&
                            state.iteration % state.hp.mwnet_interval == 0;
    std::vector<double> weights_after = cache.weights;
    if (update_phi) {
        ClassifierParams virtual_theta = state.theta;
        virtual_theta.unflatten(cache.theta_hat);
        MetaGradientDetails details;
        const std::vector<double> grad_phi = meta_gradient(
            state.phi, cache, virtual_theta, meta_ds, meta_batch, state.hp.lambda, &details);
        trace.mwnet_updated = true;
        trace.meta_loss = details.meta_loss;
        trace.grad_dots = std::move(details.grad_dots);
        trace.phi_grad_norm_sq = squared_norm(grad_phi);

        std::vector<double> flat_phi = state.phi.flatten();
        for (std::size_t i = 0; i < flat_phi.size(); ++i)
            flat_phi[i] -= state.hp.beta *
                           (grad_phi[i] + state.hp.mwnet_weight_decay * flat_phi[i]);
        state.phi.unflatten(flat_phi);

        // Line 12: recompute raw weights under Phi(t+1), reusing the cached
        // epsilons, then renormalize.
        std::vector<double> raw_after(n);
        MwSampleCache scratch;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t row = cache.batch[i];
            raw_after[i] = mw_forward(state.phi, cache.mw_caches[i].logits,
                                      train_ds.observed_labels[row], cache.losses[i],
                                      cache.epsilons[i], scratch);
        }
        weights_after = normalize_weights(raw_after);
    }
    trace.weights_after = weights_after;

    // Lines 13-14: real step from Theta(t) with the line-12 weights, reusing
    // the per-sample gradients already evaluated at Theta(t).
    std::vector<double> step_dir(state.theta.param_count(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
        axpy(weights_after[i] / static_cast<double>(n), cache.sample_grads.row(i), step_dir);
    trace.grad_norm_sq = squared_norm(step_dir);
    std::vector<double> flat_theta = state.theta.flatten();
    if (state.hp.weight_decay > 0.0) axpy(state.hp.weight_decay, flat_theta, step_dir);
    axpy(-alpha, step_dir, flat_theta);
    state.theta.unflatten(flat_theta);

    ++state.iteration;
    return trace;
}

/// Raw and normalized weights for every sample of a dataset under the current
/// parameters, bottleneck in deterministic mode (pure evaluation).
struct DatasetWeights {
    std::vector<double> raw;
    std::vector<double> normalized;
    double kl_mean = 0.0;
};

inline DatasetWeights compute_dataset_weights(const ClassifierParams& theta, const MwNet& phi,
                                              const LabeledDataset& ds) {
    DatasetWeights out;
    out.raw.resize(ds.size());
    MwSampleCache scratch;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const int y = ds.observed_labels[i];
        const std::vector<double> z = forward_logits(theta, ds.x(i));
        const double loss = cross_entropy_with_logits(z, static_cast<std::size_t>(y));
        out.raw[i] = mw_forward(phi, z, y, loss, {}, scratch);
        if (phi.variant == MwVariant::metainfonet)
            out.kl_mean += kl_to_standard_normal(scratch.ib) / static_cast<double>(ds.size());
    }
    out.normalized = normalize_weights(out.raw);
    return out;
}

using TraceSink = std::function<void(const MetaStepTrace&)>;
using EpochSink = std::function<void(const EpochRecord&, const ClassifierParams&, const MwNet&)>;

struct TrainResult {
    ClassifierParams theta;
    MwNet phi;
    RunMetrics metrics;
};

/// The outer loop: T iterations with seeded epoch shuffling (drop-last
/// batching), the alpha schedule, and one metrics record per epoch. Throws
/// NumericError the moment a loss or weight stops being finite.
inline TrainResult train(const LabeledDataset& train_ds, const LabeledDataset& meta_ds,
                         const LabeledDataset& test_ds, const HyperParams& hp,
                         const TraceSink& trace_sink = {}, const EpochSink& epoch_sink = {}) {
    train_ds.check_invariants();
    meta_ds.check_invariants();
    test_ds.check_invariants();
    hp.validate(train_ds.size(), meta_ds.size());
    for (bool c : meta_ds.corrupted)
        if (c) throw ContractError("train: meta set must be clean");
    if (train_ds.num_classes != meta_ds.num_classes || train_ds.num_classes != test_ds.num_classes)
        throw DataError("train: class-count mismatch across datasets");

    RngState init_rng(hp.init_seed);
    RngState theta_rng = init_rng.split("classifier-init");
    RngState phi_rng = init_rng.split("mwnet-init");
    RngState shuffle_rng = init_rng.split("epoch-shuffle");
    RngState meta_rng = init_rng.split("meta-batch");

    TrainState state;
    state.theta = make_classifier(train_ds.dim(), hp.classifier_hidden,
                                  static_cast<std::size_t>(train_ds.num_classes), theta_rng);
    state.phi = make_mwnet(hp.variant, train_ds.num_classes, hp.mwnet_hidden,
                           hp.psi_dim, phi_rng);
    state.hp = hp;
    state.eps_rng = RngState(hp.epsilon_seed);

    const std::size_t n = hp.train_batch;
    const std::size_t iters_per_epoch = std::max<std::size_t>(1, train_ds.size() / n);
    const LrSchedule schedule = hp.alpha_schedule();

    TrainResult result;
    std::vector<std::size_t> order(train_ds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    double epoch_loss = 0.0, epoch_grad_sq = 0.0;
    std::size_t epoch_iters = 0;
    for (std::size_t t = 0; t < hp.total_iters; ++t) {
        const std::size_t pos = t % iters_per_epoch;
        const long epoch = static_cast<long>(t / iters_per_epoch);
        if (pos == 0) shuffle_rng.shuffle(order);

        std::vector<std::size_t> batch(
            order.begin() + static_cast<std::ptrdiff_t>(pos * n),
            order.begin() + static_cast<std::ptrdiff_t>(std::min(pos * n + n, order.size())));
        std::vector<std::size_t> meta_batch(hp.meta_batch);
        for (auto& j : meta_batch) j = static_cast<std::size_t>(meta_rng.next_below(meta_ds.size()));

        const MetaStepTrace trace = meta_iteration(state, train_ds, std::move(batch),
                                                   meta_ds, meta_batch, schedule.at(epoch));
        if (!std::isfinite(trace.train_loss) || !std::isfinite(trace.meta_loss) ||
            !std::isfinite(trace.grad_norm_sq) || !all_finite(trace.weights_after))
            throw NumericError("train: non-finite loss or weight at iteration " +
                               std::to_string(t));
        if (trace_sink) trace_sink(trace);
        result.metrics.iteration_grad_norm_sq.push_back(trace.grad_norm_sq);
        epoch_loss += trace.train_loss;
        epoch_grad_sq += trace.grad_norm_sq;
        ++epoch_iters;

        if (pos + 1 == iters_per_epoch || t + 1 == hp.total_iters) {
            EpochRecord rec;
            rec.epoch = epoch;
            rec.train_loss = epoch_loss / static_cast<double>(epoch_iters);
            rec.test_acc = evaluate_accuracy(state.theta, test_ds);
            rec.meta_val_acc = evaluate_accuracy(state.theta, meta_ds);
            const DatasetWeights w = compute_dataset_weights(state.theta, state.phi, train_ds);
            const WeightSeparation sep = weight_separation(w.raw, train_ds.corrupted);
            rec.mean_weight_clean = sep.mean_clean;
            rec.mean_weight_corrupted = sep.mean_corrupted;
            rec.kl_mean = w.kl_mean;
            rec.grad_norm_sq = epoch_grad_sq / static_cast<double>(epoch_iters);
            result.metrics.epochs.push_back(rec);
            if (epoch_sink) epoch_sink(rec, state.theta, state.phi);
            epoch_loss = epoch_grad_sq = 0.0;
            epoch_iters = 0;
        }
    }

    result.theta = std::move(state.theta);
    result.phi = std::move(state.phi);
    return result;
}

}  // namespace metaweight
