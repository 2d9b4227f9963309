#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "metaweight/errors.hpp"
#include "metaweight/matrix.hpp"
#include "metaweight/nn.hpp"

namespace metaweight {

/// Which weighting network drives meta-weighted training. "standard" is the
/// uniform-weight bypass with no learned weighting at all.
enum class MwVariant { standard, lossnet, logitnet, metainfonet };

inline const char* to_string(MwVariant v) {
    switch (v) {
        case MwVariant::standard: return "standard";
        case MwVariant::lossnet: return "lossnet";
        case MwVariant::logitnet: return "logitnet";
        case MwVariant::metainfonet: return "metainfonet";
    }
    return "?";
}

inline MwVariant mw_variant_from_string(const std::string& s) {
    if (s == "standard") return MwVariant::standard;
    if (s == "lossnet") return MwVariant::lossnet;
    if (s == "logitnet") return MwVariant::logitnet;
    if (s == "metainfonet") return MwVariant::metainfonet;
    throw ConfigError("unknown variant: " + s);
}

/// One draw from the bottleneck layer's diagonal Gaussian.
struct IbSample {
    std::vector<double> mean;     // mu
    std::vector<double> std_dev;  // sigma = exp(logvar / 2), > 0
    std::vector<double> epsilon;  // empty in deterministic mode
    std::vector<double> psi;      // mu + sigma .* eps (or mu)
};

/// Closed-form KL(N(mu, diag sigma^2) || N(0, I)).
inline double kl_to_standard_normal(const IbSample& sample) {
    double acc = 0.0;
    for (std::size_t j = 0; j < sample.mean.size(); ++j) {
        const double s = sample.std_dev[j];
        if (!(s > 0.0)) throw ContractError("kl_to_standard_normal: sigma must be > 0");
        acc += 0.5 * (sample.mean[j] * sample.mean[j] + s * s - 2.0 * std::log(s) - 1.0);
    }
    return acc;
}

/// w_i = w~_i / (sum_j w~_j + delta(sum)), where delta is the zero indicator:
/// the weights sum to 1 unless every raw weight is zero.
inline std::vector<double> normalize_weights(std::span<const double> raw) {
    double sum = 0.0;
    for (double w : raw) {
        if (w < 0.0) throw ContractError("normalize_weights: negative raw weight");
        sum += w;
    }
    std::vector<double> out(raw.begin(), raw.end());
    if (sum == 0.0) return out;
    for (double& w : out) w /= sum;
    return out;
}

/// Row y of the embedding table (equivalently E . onehot(y)).
inline std::vector<double> label_embedding(const Matrix& embedding, int y) {
    if (y < 0 || static_cast<std::size_t>(y) >= embedding.rows())
        throw IndexError("label_embedding: label " + std::to_string(y) + " out of range");
    auto row = embedding.row(y);
    return {row.begin(), row.end()};
}

namespace detail {
inline std::uint64_t next_mwnet_stamp() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
}
}  // namespace detail

/// Per-sample forward state kept for the exact backward pass.
struct MwSampleCache {
    std::uint64_t stamp = 0;  // parameter version this cache was built against
    int label = -1;
    double raw_weight = 0.0;
    double loss_input = 0.0;         // lossnet
    std::vector<double> logits;      // z, constant w.r.t. the weighting net
    std::vector<double> embed;       // e(y)
    std::vector<double> gated_input; // the vector multiplied with e(y)
    Mlp::Trace mlp_trace;
    // metainfonet only:
    IbSample ib;
    std::vector<double> concat_in;   // concat(psi, z), input to the align layer
    std::vector<double> aligned;     // r = align(concat)
};

/// The weighting network V_Phi. Components are live per variant:
///   lossnet      - mlp (1 -> H -> 1)
///   logitnet     - embedding (K x K) + mlp (K -> H -> 1)
///   metainfonet  - embedding + ib_mean/ib_logvar (K -> d_psi) + align
///                  (d_psi + K -> K) + mlp (K -> H -> 1)
/// The final MLP layer is sigmoid, so raw weights live in (0, 1).
struct MwNet {
    MwVariant variant = MwVariant::standard;
    int num_classes = 0;
    std::size_t psi_dim = 0;
    Matrix embedding;
    DenseLayer ib_mean, ib_logvar, align;
    Mlp mlp;
    std::uint64_t stamp = 0;

    std::size_t param_count() const {
        switch (variant) {
            case MwVariant::standard: return 0;
            case MwVariant::lossnet: return mlp.param_count();
            case MwVariant::logitnet: return embedding.size() + mlp.param_count();
            case MwVariant::metainfonet:
                return embedding.size() + ib_mean.param_count() +
                       ib_logvar.param_count() + align.param_count() + mlp.param_count();
        }
        return 0;
    }

    std::vector<double> flatten() const {
        std::vector<double> out;
        out.reserve(param_count());
        if (variant == MwVariant::logitnet || variant == MwVariant::metainfonet)
            out.insert(out.end(), embedding.data().begin(), embedding.data().end());
        if (variant == MwVariant::metainfonet) {
            flatten_layer(ib_mean, out);
            flatten_layer(ib_logvar, out);
            flatten_layer(align, out);
        }
        if (variant != MwVariant::standard) mlp.flatten(out);
        return out;
    }

    void unflatten(std::span<const double> flat) {
        if (flat.size() != param_count())
            throw ShapeError("MwNet::unflatten: length mismatch");
        std::size_t off = 0;
        if (variant == MwVariant::logitnet || variant == MwVariant::metainfonet)
            for (double& v : embedding.data()) v = flat[off++];
        if (variant == MwVariant::metainfonet) {
            off = unflatten_layer(ib_mean, flat, off);
            off = unflatten_layer(ib_logvar, flat, off);
            off = unflatten_layer(align, flat, off);
        }
        if (variant != MwVariant::standard) mlp.unflatten(flat, off);
        stamp = detail::next_mwnet_stamp();
    }

    /// Named parameter blocks as [begin, end) offsets into the flat vector.
    std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>>
    param_blocks() const {
        std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> blocks;
        std::size_t off = 0;
        auto add = [&](const std::string& name, std::size_t n) {
            blocks.emplace_back(name, std::make_pair(off, off + n));
            off += n;
        };
        if (variant == MwVariant::logitnet || variant == MwVariant::metainfonet)
            add("embedding", embedding.size());
        if (variant == MwVariant::metainfonet) {
            add("ib_mean", ib_mean.param_count());
            add("ib_logvar", ib_logvar.param_count());
            add("align", align.param_count());
        }
        if (variant != MwVariant::standard) add("mlp", mlp.param_count());
        return blocks;
    }
};

inline MwNet make_mwnet(MwVariant variant, int num_classes, std::size_t hidden,
                        std::size_t psi_dim, RngState& rng) {
    MwNet net;
    net.variant = variant;
    net.num_classes = num_classes;
    net.stamp = detail::next_mwnet_stamp();
    if (variant == MwVariant::standard) return net;

    const std::size_t K = static_cast<std::size_t>(num_classes);
    if (variant == MwVariant::lossnet) {
        net.mlp = make_mlp({1, hidden, 1}, Activation::relu, Activation::sigmoid, rng);
        return net;
    }

    net.embedding = Matrix(K, K);
    for (double& v : net.embedding.data()) v = 2.0 * rng.next_double() - 1.0;
    net.mlp = make_mlp({K, hidden, 1}, Activation::relu, Activation::sigmoid, rng);
    if (variant == MwVariant::metainfonet) {
        net.psi_dim = psi_dim == 0 ? K : psi_dim;
        net.ib_mean = make_dense_layer(net.psi_dim, K, Activation::identity, rng);
        net.ib_logvar = make_dense_layer(net.psi_dim, K, Activation::identity, rng);
        net.align = make_dense_layer(K, net.psi_dim + K, Activation::identity, rng);
    }
    return net;
}

/// w~ = sigmoid-MLP(loss). The only sample information LossNet ever sees is
/// the scalar training loss.
inline double lossnet_forward(const MwNet& net, double loss_value, MwSampleCache& cache) {
    if (net.variant != MwVariant::lossnet)
        throw ContractError("lossnet_forward: wrong variant");
    if (loss_value < 0.0) throw ContractError("lossnet_forward: loss must be >= 0");
    cache = MwSampleCache{};
    cache.stamp = net.stamp;
    cache.label = 0;
    cache.loss_input = loss_value;
    const double in[1] = {loss_value};
    cache.raw_weight = net.mlp.forward(std::span<const double>(in, 1), cache.mlp_trace)[0];
    return cache.raw_weight;
}

/// w~ = sigmoid-MLP(z .* e(y)).
inline double logitnet_forward(const MwNet& net, std::span<const double> z, int y,
                               MwSampleCache& cache) {
    if (net.variant != MwVariant::logitnet)
        throw ContractError("logitnet_forward: wrong variant");
    if (z.size() != static_cast<std::size_t>(net.num_classes))
        throw ShapeError("logitnet_forward: logit length mismatch");
    cache = MwSampleCache{};
    cache.stamp = net.stamp;
    cache.label = y;
    cache.logits.assign(z.begin(), z.end());
    cache.embed = label_embedding(net.embedding, y);
    cache.gated_input = cache.logits;
    std::vector<double> v(z.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = z[i] * cache.embed[i];
    cache.raw_weight = net.mlp.forward(v, cache.mlp_trace)[0];
    return cache.raw_weight;
}

/// The bottleneck path: mu/logvar from z, psi by reparameterization
/// (psi = mu when eps is empty), skip connection via concat(psi, z), a linear
/// align layer back to K dims, then w~ = sigmoid-MLP(r .* e(y)).
inline double metainfonet_forward(const MwNet& net, std::span<const double> z, int y,
                                  std::span<const double> eps, MwSampleCache& cache) {
    if (net.variant != MwVariant::metainfonet)
        throw ContractError("metainfonet_forward: wrong variant");
    if (z.size() != static_cast<std::size_t>(net.num_classes))
        throw ShapeError("metainfonet_forward: logit length mismatch");
    const bool stochastic = !eps.empty();
    if (stochastic && eps.size() != net.psi_dim)
        throw ShapeError("metainfonet_forward: epsilon length != psi dim");

    cache = MwSampleCache{};
    cache.stamp = net.stamp;
    cache.label = y;
    cache.logits.assign(z.begin(), z.end());
    cache.embed = label_embedding(net.embedding, y);

    cache.ib.mean = affine_forward(net.ib_mean, z);
    const std::vector<double> logvar = affine_forward(net.ib_logvar, z);
    cache.ib.std_dev.resize(net.psi_dim);
    for (std::size_t j = 0; j < net.psi_dim; ++j) {
        cache.ib.std_dev[j] = std::exp(0.5 * logvar[j]);
        // exp() under/overflow means training has already diverged; report it
        // as a numeric failure rather than tripping downstream contracts.
        if (!(cache.ib.std_dev[j] > 0.0) || !std::isfinite(cache.ib.std_dev[j]))
            throw NumericError("metainfonet_forward: ib std-dev left (0, inf)");
    }
    cache.ib.epsilon.assign(eps.begin(), eps.end());
    cache.ib.psi = cache.ib.mean;
    if (stochastic)
        for (std::size_t j = 0; j < net.psi_dim; ++j)
            cache.ib.psi[j] += cache.ib.std_dev[j] * eps[j];

    cache.concat_in = cache.ib.psi;
    cache.concat_in.insert(cache.concat_in.end(), z.begin(), z.end());
    cache.aligned = affine_forward(net.align, cache.concat_in);
    cache.gated_input = cache.aligned;

    std::vector<double> v(cache.aligned.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = cache.aligned[i] * cache.embed[i];
    cache.raw_weight = net.mlp.forward(v, cache.mlp_trace)[0];
    return cache.raw_weight;
}

/// Raw weight for any learned variant; the loss value feeds lossnet, logits
/// and label feed the others.
inline double mw_forward(const MwNet& net, std::span<const double> z, int y,
                         double loss_value, std::span<const double> eps,
                         MwSampleCache& cache) {
    switch (net.variant) {
        case MwVariant::standard:
            cache = MwSampleCache{};
            cache.stamp = net.stamp;
            cache.label = y;
            cache.raw_weight = 1.0;
            return 1.0;
        case MwVariant::lossnet: return lossnet_forward(net, loss_value, cache);
        case MwVariant::logitnet: return logitnet_forward(net, z, y, cache);
        case MwVariant::metainfonet: return metainfonet_forward(net, z, y, eps, cache);
    }
    throw ContractError("mw_forward: bad variant");
}

/// Exact flat gradient of sum_i upstream_dw[i] * w~_i(Phi)
///                        + lambda * sum_i KL_i(Phi)
/// over the cached batch; the KL term applies to metainfonet with kl_enabled.
/// Logits are treated as constants throughout.
inline std::vector<double> mwnet_backward(const MwNet& net,
                                          std::span<const MwSampleCache> caches,
                                          std::span<const double> upstream_dw,
                                          double lambda, bool kl_enabled) {
    if (caches.size() != upstream_dw.size())
        throw ContractError("mwnet_backward: upstream length != cache count");
    std::vector<double> grad(net.param_count(), 0.0);
    if (net.variant == MwVariant::standard) return grad;

    const auto blocks = net.param_blocks();
    auto block_offset = [&](const std::string& name) {
        for (const auto& [bname, range] : blocks)
            if (bname == name) return range.first;
        throw ContractError("mwnet_backward: no block " + name);
    };
    const std::size_t mlp_off = block_offset("mlp");
    const bool kl_active =
        kl_enabled && lambda != 0.0 && net.variant == MwVariant::metainfonet;

    for (std::size_t i = 0; i < caches.size(); ++i) {
        const MwSampleCache& cache = caches[i];
        if (cache.stamp != net.stamp)
            throw ContractError("mwnet_backward: stale forward cache");
        const double c = upstream_dw[i];
        if (c == 0.0 && !kl_active) continue;

        const double up[1] = {c};
        if (net.variant == MwVariant::lossnet) {
            net.mlp.backward(cache.mlp_trace, std::span<const double>(up, 1),
                             grad, mlp_off);
            continue;
        }

        // d/d(v) of c * MLP(v) where v = gated_input .* e(y).
        const std::vector<double> dv = net.mlp.backward(
            cache.mlp_trace, std::span<const double>(up, 1), grad, mlp_off);

        const std::size_t emb_off = block_offset("embedding");
        const std::size_t K = static_cast<std::size_t>(net.num_classes);
        double* emb_row = grad.data() + emb_off + static_cast<std::size_t>(cache.label) * K;
        for (std::size_t j = 0; j < K; ++j)
            emb_row[j] += dv[j] * cache.gated_input[j];

        if (net.variant == MwVariant::logitnet) continue;

        // metainfonet: push dr back through align, the reparameterized psi,
        // and the two bottleneck layers; add the KL term directly on mu/logvar.
        std::vector<double> dr(K);
        for (std::size_t j = 0; j < K; ++j) dr[j] = dv[j] * cache.embed[j];

        std::vector<double> dconcat;
        accumulate_layer_grad(net.align, cache.concat_in, cache.aligned, dr, grad,
                              block_offset("align"), &dconcat);

        std::vector<double> dmu(dconcat.begin(), dconcat.begin() + net.psi_dim);
        std::vector<double> dlogvar(net.psi_dim, 0.0);
        const bool stochastic = !cache.ib.epsilon.empty();
        if (stochastic)
            for (std::size_t j = 0; j < net.psi_dim; ++j)
                dlogvar[j] = dmu[j] * cache.ib.epsilon[j] * 0.5 * cache.ib.std_dev[j];
        if (kl_active)
            for (std::size_t j = 0; j < net.psi_dim; ++j) {
                dmu[j] += lambda * cache.ib.mean[j];
                const double var = cache.ib.std_dev[j] * cache.ib.std_dev[j];
                dlogvar[j] += lambda * 0.5 * (var - 1.0);
            }

        std::vector<double> logvar(net.psi_dim);
        for (std::size_t j = 0; j < net.psi_dim; ++j)
            logvar[j] = 2.0 * std::log(cache.ib.std_dev[j]);
        accumulate_layer_grad(net.ib_mean, cache.logits, cache.ib.mean, dmu, grad,
                              block_offset("ib_mean"), nullptr);
        accumulate_layer_grad(net.ib_logvar, cache.logits, logvar, dlogvar, grad,
                              block_offset("ib_logvar"), nullptr);
    }
    return grad;
}

}  // namespace metaweight
