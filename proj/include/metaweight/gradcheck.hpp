#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "metaweight/meta_train.hpp"

namespace metaweight {

struct GradCheckBlock {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t worst_coord = 0;  // offset within the flat parameter vector
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckBlock> blocks;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

constexpr std::size_t kGradCheckMaxParams = 500;

namespace detail {
/// The scalar the hypergradient differentiates: meta cross-entropy at the
/// virtual parameters plus the lambda-weighted batch-mean KL.
inline double meta_objective(const ClassifierParams& theta, const MwNet& phi,
                             const LabeledDataset& train_ds,
                             const std::vector<std::size_t>& batch,
                             const LabeledDataset& meta_ds,
                             const std::vector<std::size_t>& meta_batch, double alpha,
                             double lambda,
                             const std::vector<std::vector<double>>& epsilons) {
    const VirtualCache cache =
        virtual_update(theta, phi, train_ds, batch, alpha, epsilons);
    ClassifierParams virtual_theta = theta;
    virtual_theta.unflatten(cache.theta_hat);

    double obj = 0.0;
    for (const std::size_t row : meta_batch) {
        const std::vector<double> z = forward_logits(virtual_theta, meta_ds.x(row));
        obj += cross_entropy_with_logits(
                   z, static_cast<std::size_t>(meta_ds.observed_labels[row])) /
               static_cast<double>(meta_batch.size());
    }
    if (lambda != 0.0 && phi.variant == MwVariant::metainfonet) {
        double kl = 0.0;
        for (const auto& c : cache.mw_caches) kl += kl_to_standard_normal(c.ib);
        obj += lambda * kl / static_cast<double>(batch.size());
    }
    return obj;
}
}  // namespace detail

/// Central finite differences of the composed meta objective against the
/// analytic hypergradient, reported per parameter block. `corrupt_block`
/// (when non-empty) shifts that block's analytic entries — the negative
/// control that proves the harness can fail.
inline GradCheckReport gradcheck_hypergradient(
    const ClassifierParams& theta, const MwNet& phi_in, const LabeledDataset& train_ds,
    const std::vector<std::size_t>& batch, const LabeledDataset& meta_ds,
    const std::vector<std::size_t>& meta_batch, double alpha, double lambda,
    const std::vector<std::vector<double>>& epsilons, double step = 1e-5,
    double tolerance = 1e-4, const std::string& corrupt_block = "") {
    MwNet phi = phi_in;
    if (phi.param_count() > kGradCheckMaxParams)
        throw ConfigError("gradcheck: " + std::to_string(phi.param_count()) +
                          " weighting-net parameters exceeds the finite-difference budget (" +
                          std::to_string(kGradCheckMaxParams) + ")");
    if (phi.variant == MwVariant::standard)
        throw ConfigError("gradcheck: the standard variant has no weighting-net parameters");

    const VirtualCache cache = virtual_update(theta, phi, train_ds, batch, alpha, epsilons);
    ClassifierParams virtual_theta = theta;
    virtual_theta.unflatten(cache.theta_hat);
    std::vector<double> analytic =
        meta_gradient(phi, cache, virtual_theta, meta_ds, meta_batch, lambda);

    const auto blocks = phi.param_blocks();
    bool corrupted_any = false;
    for (const auto& [name, range] : blocks)
        if (name == corrupt_block) {
            for (std::size_t k = range.first; k < range.second; ++k)
                analytic[k] += 0.5 * std::max(1.0, std::abs(analytic[k]));
            corrupted_any = true;
        }
    if (!corrupt_block.empty() && !corrupted_any)
        throw ConfigError("gradcheck: no parameter block named '" + corrupt_block + "'");

    const std::vector<double> flat = phi.flatten();
    std::vector<double> numeric(flat.size());
    std::vector<double> probe = flat;
    for (std::size_t k = 0; k < flat.size(); ++k) {
        probe[k] = flat[k] + step;
        phi.unflatten(probe);
        const double plus = detail::meta_objective(theta, phi, train_ds, batch, meta_ds,
                                                   meta_batch, alpha, lambda, epsilons);
        probe[k] = flat[k] - step;
        phi.unflatten(probe);
        const double minus = detail::meta_objective(theta, phi, train_ds, batch, meta_ds,
                                                    meta_batch, alpha, lambda, epsilons);
        probe[k] = flat[k];
        numeric[k] = (plus - minus) / (2.0 * step);
    }

    GradCheckReport report;
    report.tolerance = tolerance;
    for (const auto& [name, range] : blocks) {
        GradCheckBlock b;
        b.name = name;
        for (std::size_t k = range.first; k < range.second; ++k) {
            const double denom =
                std::max({std::abs(analytic[k]), std::abs(numeric[k]), 1e-6});
            const double rel = std::abs(analytic[k] - numeric[k]) / denom;
            if (rel >= b.max_rel_err) {
                b.max_rel_err = rel;
                b.worst_coord = k;
                b.analytic_at_worst = analytic[k];
                b.numeric_at_worst = numeric[k];
            }
        }
        report.max_rel_err = std::max(report.max_rel_err, b.max_rel_err);
        report.blocks.push_back(std::move(b));
    }
    report.pass = report.max_rel_err <= tolerance;
    return report;
}

}  // namespace metaweight
