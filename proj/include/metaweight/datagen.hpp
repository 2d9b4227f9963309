#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "metaweight/dataset.hpp"
#include "metaweight/errors.hpp"
#include "metaweight/rng.hpp"

namespace metaweight {

/// Synthetic Gaussian-mixture classification problem: one isotropic blob
/// per class.
struct MixtureSpec {
    int num_classes = 0;
    int dim = 0;
    std::vector<std::vector<double>> class_means;  // K points in R^d
    double class_scale = 1.0;
    std::vector<std::size_t> samples_per_class;

    void validate() const {
        if (num_classes < 2) throw DataError("MixtureSpec: need at least 2 classes");
        if (dim < 1) throw DataError("MixtureSpec: dim must be >= 1");
        if (class_scale <= 0.0) throw DataError("MixtureSpec: class_scale must be > 0");
        if (class_means.size() != static_cast<std::size_t>(num_classes) ||
            samples_per_class.size() != static_cast<std::size_t>(num_classes))
            throw DataError("MixtureSpec: per-class fields must have K entries");
        for (const auto& m : class_means)
            if (m.size() != static_cast<std::size_t>(dim))
                throw DataError("MixtureSpec: mean dimension mismatch");
    }
};

enum class BiasKind { none, uniform, flip1, flip2, longtail };

inline const char* to_string(BiasKind k) {
    switch (k) {
        case BiasKind::none: return "none";
        case BiasKind::uniform: return "uniform";
        case BiasKind::flip1: return "flip1";
        case BiasKind::flip2: return "flip2";
        case BiasKind::longtail: return "longtail";
    }
    return "?";
}

inline BiasKind bias_kind_from_string(const std::string& s) {
    if (s == "none") return BiasKind::none;
    if (s == "uniform") return BiasKind::uniform;
    if (s == "flip1") return BiasKind::flip1;
    if (s == "flip2") return BiasKind::flip2;
    if (s == "longtail") return BiasKind::longtail;
    throw ConfigError("unknown bias kind: " + s);
}

/// Class means on a circle of given radius in the first two coordinates
/// (first axis only when d = 1).
inline std::vector<std::vector<double>> circle_means(int num_classes, int dim,
                                                     double radius) {
    std::vector<std::vector<double>> means(num_classes, std::vector<double>(dim, 0.0));
    for (int c = 0; c < num_classes; ++c) {
        const double angle = 2.0 * std::numbers::pi * c / num_classes;
        means[c][0] = radius * std::cos(angle);
        if (dim > 1) means[c][1] = radius * std::sin(angle);
    }
    return means;
}

/// Draw features ~ N(mean_c, scale^2 I) per class. Observed = clean.
inline LabeledDataset generate_mixture(const MixtureSpec& spec, RngState& rng) {
    spec.validate();
    const std::size_t total =
        std::accumulate(spec.samples_per_class.begin(), spec.samples_per_class.end(),
                        std::size_t{0});
    LabeledDataset ds;
    ds.num_classes = spec.num_classes;
    ds.features = Matrix(total, spec.dim);
    ds.observed_labels.reserve(total);
    std::size_t row = 0;
    for (int c = 0; c < spec.num_classes; ++c) {
        for (std::size_t s = 0; s < spec.samples_per_class[c]; ++s) {
            for (int j = 0; j < spec.dim; ++j)
                ds.features(row, j) =
                    spec.class_means[c][j] + spec.class_scale * rng.next_normal();
            ds.observed_labels.push_back(c);
            ++row;
        }
    }
    ds.clean_labels = ds.observed_labels;
    ds.corrupted.assign(total, false);
    return ds;
}

/// Exponential long-tail subsampling: class i keeps round(n_max * mu^i)
/// samples with mu = IF^(-1/(K-1)), floor 1, drawn without replacement.
inline LabeledDataset make_long_tailed(const LabeledDataset& ds, double imbalance_factor,
                                       std::size_t n_max, RngState& rng) {
    if (imbalance_factor < 1.0) throw DataError("make_long_tailed: IF must be >= 1");
    if (ds.num_classes < 2) throw DataError("make_long_tailed: need >= 2 classes");
    const int K = ds.num_classes;
    const double mu = std::pow(imbalance_factor, -1.0 / static_cast<double>(K - 1));

    std::vector<std::vector<std::size_t>> by_class(K);
    for (std::size_t i = 0; i < ds.size(); ++i)
        by_class[ds.observed_labels[i]].push_back(i);

    std::vector<std::size_t> keep;
    for (int c = 0; c < K; ++c) {
        const double target = static_cast<double>(n_max) * std::pow(mu, c);
        const std::size_t count =
            std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(target)));
        if (by_class[c].size() < count)
            throw DataError("make_long_tailed: class " + std::to_string(c) + " has " +
                            std::to_string(by_class[c].size()) + " samples, needs " +
                            std::to_string(count));
        rng.shuffle(by_class[c]);
        keep.insert(keep.end(), by_class[c].begin(), by_class[c].begin() + count);
    }
    std::sort(keep.begin(), keep.end());
    return ds.subset(keep);
}

/// Per-class long-tail count profile, exposed for provenance reporting.
inline std::vector<std::size_t> long_tail_counts(int num_classes, double imbalance_factor,
                                                 std::size_t n_max) {
    const double mu = std::pow(imbalance_factor, -1.0 / static_cast<double>(num_classes - 1));
    std::vector<std::size_t> counts(num_classes);
    for (int c = 0; c < num_classes; ++c)
        counts[c] = std::max<std::size_t>(
            1, static_cast<std::size_t>(
                   std::llround(static_cast<double>(n_max) * std::pow(mu, c))));
    return counts;
}

/// Relabel each sample with probability p to a class drawn uniformly from
/// the K-1 classes other than its clean label, so p is exactly the
/// corruption rate.
inline LabeledDataset inject_uniform_noise(const LabeledDataset& ds, double p,
                                           RngState& rng) {
    if (p < 0.0 || p > 1.0) throw DataError("inject_uniform_noise: p must be in [0,1]");
    if (ds.num_classes < 2) throw DataError("inject_uniform_noise: need >= 2 classes");
    LabeledDataset out = ds;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (rng.next_double() < p) {
            int pick = static_cast<int>(rng.next_below(out.num_classes - 1));
            if (pick >= out.clean_labels[i]) ++pick;
            out.observed_labels[i] = pick;
        } else {
            out.observed_labels[i] = out.clean_labels[i];
        }
        out.corrupted[i] = out.observed_labels[i] != out.clean_labels[i];
    }
    return out;
}

/// Draw one flip target per class (seeded, != the class itself), then flip
/// each sample to its class target with probability p.
inline LabeledDataset inject_flip1_noise(const LabeledDataset& ds, double p,
                                         RngState& rng) {
    if (p < 0.0 || p > 1.0) throw DataError("inject_flip1_noise: p must be in [0,1]");
    if (ds.num_classes < 2) throw DataError("inject_flip1_noise: need >= 2 classes");
    std::vector<int> target(ds.num_classes);
    for (int c = 0; c < ds.num_classes; ++c) {
        int pick = static_cast<int>(rng.next_below(ds.num_classes - 1));
        if (pick >= c) ++pick;
        target[c] = pick;
    }
    LabeledDataset out = ds;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.observed_labels[i] = rng.next_double() < p ? target[out.clean_labels[i]]
                                                       : out.clean_labels[i];
        out.corrupted[i] = out.observed_labels[i] != out.clean_labels[i];
    }
    return out;
}

/// The fixed per-class target table drawn by inject_flip1_noise, exposed so
/// provenance files can record it.
inline std::vector<int> flip1_targets(int num_classes, RngState& rng) {
    std::vector<int> target(num_classes);
    for (int c = 0; c < num_classes; ++c) {
        int pick = static_cast<int>(rng.next_below(num_classes - 1));
        if (pick >= c) ++pick;
        target[c] = pick;
    }
    return target;
}

/// Default flip-2 targets: class c -> (c+1 mod K, c+2 mod K).
inline std::vector<std::array<int, 2>> default_flip2_targets(int num_classes) {
    std::vector<std::array<int, 2>> targets(num_classes);
    for (int c = 0; c < num_classes; ++c)
        targets[c] = {(c + 1) % num_classes, (c + 2) % num_classes};
    return targets;
}

/// Flip each sample to target-1 with probability p/2, target-2 with p/2,
/// keep the clean label with probability 1-p.
inline LabeledDataset inject_flip2_noise(const LabeledDataset& ds, double p,
                                         const std::vector<std::array<int, 2>>& flip_targets,
                                         RngState& rng) {
    if (p < 0.0 || p > 1.0) throw DataError("inject_flip2_noise: p must be in [0,1]");
    if (flip_targets.size() != static_cast<std::size_t>(ds.num_classes))
        throw DataError("inject_flip2_noise: need one target pair per class");
    for (int c = 0; c < ds.num_classes; ++c) {
        const auto& [t1, t2] = flip_targets[c];
        if (t1 == c || t2 == c || t1 == t2 || t1 < 0 || t2 < 0 ||
            t1 >= ds.num_classes || t2 >= ds.num_classes)
            throw DataError("inject_flip2_noise: invalid targets for class " +
                            std::to_string(c));
    }
    LabeledDataset out = ds;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double u = rng.next_double();
        const int c = out.clean_labels[i];
        if (u < p / 2.0) out.observed_labels[i] = flip_targets[c][0];
        else if (u < p) out.observed_labels[i] = flip_targets[c][1];
        else out.observed_labels[i] = c;
        out.corrupted[i] = out.observed_labels[i] != out.clean_labels[i];
    }
    return out;
}

/// Carve out a class-balanced clean meta set (per_class samples per class,
/// clean labels, disjoint from the returned train remainder).
inline std::pair<LabeledDataset, LabeledDataset> split_meta_set(const LabeledDataset& ds,
                                                                std::size_t per_class,
                                                                RngState& rng) {
    std::vector<std::vector<std::size_t>> clean_by_class(ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (!ds.corrupted[i]) clean_by_class[ds.clean_labels[i]].push_back(i);

    std::vector<std::size_t> meta_idx;
    for (int c = 0; c < ds.num_classes; ++c) {
        if (clean_by_class[c].size() < per_class)
            throw DataError("split_meta_set: class " + std::to_string(c) + " has only " +
                            std::to_string(clean_by_class[c].size()) +
                            " clean samples, needs " + std::to_string(per_class));
        rng.shuffle(clean_by_class[c]);
        meta_idx.insert(meta_idx.end(), clean_by_class[c].begin(),
                        clean_by_class[c].begin() + per_class);
    }
    std::sort(meta_idx.begin(), meta_idx.end());

    std::vector<bool> in_meta(ds.size(), false);
    for (std::size_t i : meta_idx) in_meta[i] = true;
    std::vector<std::size_t> train_idx;
    train_idx.reserve(ds.size() - meta_idx.size());
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (!in_meta[i]) train_idx.push_back(i);

    return {ds.subset(train_idx), ds.subset(meta_idx)};
}

}  // namespace metaweight
