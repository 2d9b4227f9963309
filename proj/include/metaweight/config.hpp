#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "metaweight/datagen.hpp"
#include "metaweight/errors.hpp"
#include "metaweight/meta_train.hpp"

namespace metaweight {

/// Data section: either a generated Gaussian-mixture benchmark (the default)
/// or three CSV paths. Nonempty train_csv switches to file mode.
struct DataConfig {
    std::string train_csv, meta_csv, test_csv;
    int num_classes = 4;
    std::size_t dim = 2;
    double radius = 3.0;
    double class_scale = 1.0;
    std::size_t train_per_class = 500;
    std::size_t test_per_class = 500;
    std::size_t meta_per_class = 10;
    std::string bias_kind = "none";     // none | uniform | flip1 | flip2
    double noise_rate = 0.0;
    double imbalance_factor = 1.0;      // > 1 switches on the long tail
};

struct ModelConfig {
    std::string variant = "metainfonet";
    std::vector<std::size_t> classifier_hidden = {64, 64};
    std::size_t mwnet_hidden = 100;
    std::size_t psi_dim = 0;  // 0 -> num_classes
};

struct OptimConfig {
    double alpha = 10.0;
    // When the key is absent the schedule decays at 60% and 80% of `epochs`;
    // pass an explicit [] for a constant rate.
    std::vector<long> alpha_decay_epochs = {36, 48};
    double alpha_decay_factor = 10.0;
    double beta = 0.1;
    double lambda = 0.1;
    double weight_decay = 0.0;  // classifier L2-on-gradient
    double mwnet_weight_decay = 5e-4;
    std::size_t train_batch = 100;
    std::size_t meta_batch = 40;
    std::size_t epochs = 60;
    std::size_t total_iters = 0;  // 0 -> epochs * floor(train size / train_batch)
    std::size_t mwnet_interval = 1;
    bool deterministic_psi = false;
};

struct OutputConfig {
    std::string run_dir = "run";
    bool trace = false;
    std::vector<long> weight_dump_epochs;
};

struct SeedConfig {
    std::uint64_t data = 11;
    std::uint64_t init = 22;
    std::uint64_t noise = 33;
    std::uint64_t epsilon = 44;
};

struct ExperimentConfig {
    DataConfig data;
    ModelConfig model;
    OptimConfig optim;
    OutputConfig output;
    SeedConfig seeds;

    HyperParams hyper_params() const {
        HyperParams hp;
        hp.variant = mw_variant_from_string(model.variant);
        hp.classifier_hidden = model.classifier_hidden;
        hp.mwnet_hidden = model.mwnet_hidden;
        hp.psi_dim = model.psi_dim;
        hp.alpha = optim.alpha;
        hp.alpha_decay_epochs = optim.alpha_decay_epochs;
        hp.alpha_decay_factor = optim.alpha_decay_factor;
        hp.beta = optim.beta;
        hp.lambda = optim.lambda;
        hp.weight_decay = optim.weight_decay;
        hp.mwnet_weight_decay = optim.mwnet_weight_decay;
        hp.train_batch = optim.train_batch;
        hp.meta_batch = optim.meta_batch;
        hp.total_iters = optim.total_iters;  // caller resolves 0 against the dataset
        hp.mwnet_interval = optim.mwnet_interval;
        hp.deterministic_psi = optim.deterministic_psi;
        hp.init_seed = seeds.init;
        hp.epsilon_seed = seeds.epsilon;
        return hp;
    }
};

namespace detail {

inline void require_known_keys(const nlohmann::json& j, const char* section,
                               std::initializer_list<const char*> known) {
    if (!j.is_object()) throw ConfigError(std::string(section) + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* k : known)
            if (key == k) { ok = true; break; }
        if (!ok)
            throw ConfigError("unknown key '" + key + "' in " + section);
    }
}

template <typename T>
void fetch(const nlohmann::json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

/// Step decay at 60% and 80% of the run, deduplicated for very short runs.
inline std::vector<long> default_decay_epochs(std::size_t epochs) {
    std::vector<long> out;
    for (double frac : {0.6, 0.8}) {
        const long e = std::lround(frac * static_cast<double>(epochs));
        if (e >= 1 && (out.empty() || e > out.back())) out.push_back(e);
    }
    return out;
}

}  // namespace detail

inline const std::vector<double> kLambdaGrid = {0.0, 0.01, 0.03, 0.1, 0.3, 1.0};

/// Non-fatal configuration advisories (currently: lambda off its search grid).
inline std::vector<std::string> config_warnings(const ExperimentConfig& cfg) {
    std::vector<std::string> warnings;
    bool on_grid = false;
    for (double g : kLambdaGrid)
        if (std::abs(cfg.optim.lambda - g) <= 1e-12) on_grid = true;
    if (!on_grid)
        warnings.push_back("lambda " + std::to_string(cfg.optim.lambda) +
                           " is outside the search grid {0, 0.01, 0.03, 0.1, 0.3, 1}");
    return warnings;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    detail::require_known_keys(j, "config", {"data", "model", "optim", "output", "seeds"});
    ExperimentConfig cfg;
    if (j.contains("data")) {
        const auto& d = j.at("data");
        detail::require_known_keys(
            d, "data",
            {"train_csv", "meta_csv", "test_csv", "num_classes", "dim", "radius",
             "class_scale", "train_per_class", "test_per_class", "meta_per_class",
             "bias_kind", "noise_rate", "imbalance_factor"});
        detail::fetch(d, "train_csv", cfg.data.train_csv);
        detail::fetch(d, "meta_csv", cfg.data.meta_csv);
        detail::fetch(d, "test_csv", cfg.data.test_csv);
        detail::fetch(d, "num_classes", cfg.data.num_classes);
        detail::fetch(d, "dim", cfg.data.dim);
        detail::fetch(d, "radius", cfg.data.radius);
        detail::fetch(d, "class_scale", cfg.data.class_scale);
        detail::fetch(d, "train_per_class", cfg.data.train_per_class);
        detail::fetch(d, "test_per_class", cfg.data.test_per_class);
        detail::fetch(d, "meta_per_class", cfg.data.meta_per_class);
        detail::fetch(d, "bias_kind", cfg.data.bias_kind);
        detail::fetch(d, "noise_rate", cfg.data.noise_rate);
        detail::fetch(d, "imbalance_factor", cfg.data.imbalance_factor);
        bias_kind_from_string(cfg.data.bias_kind);  // validate early
        if (cfg.data.bias_kind == "longtail")
            throw ConfigError(
                "bias_kind selects label noise; use imbalance_factor for the long tail");
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        detail::require_known_keys(
            m, "model", {"variant", "classifier_hidden", "mwnet_hidden", "psi_dim"});
        detail::fetch(m, "variant", cfg.model.variant);
        detail::fetch(m, "classifier_hidden", cfg.model.classifier_hidden);
        detail::fetch(m, "mwnet_hidden", cfg.model.mwnet_hidden);
        detail::fetch(m, "psi_dim", cfg.model.psi_dim);
        mw_variant_from_string(cfg.model.variant);  // validate early
    }
    if (j.contains("optim")) {
        const auto& o = j.at("optim");
        detail::require_known_keys(
            o, "optim",
            {"alpha", "alpha_decay_epochs", "alpha_decay_factor", "beta", "lambda",
             "weight_decay", "mwnet_weight_decay", "train_batch", "meta_batch", "epochs",
             "total_iters", "mwnet_interval", "deterministic_psi"});
        detail::fetch(o, "alpha", cfg.optim.alpha);
        detail::fetch(o, "alpha_decay_epochs", cfg.optim.alpha_decay_epochs);
        detail::fetch(o, "alpha_decay_factor", cfg.optim.alpha_decay_factor);
        detail::fetch(o, "beta", cfg.optim.beta);
        detail::fetch(o, "lambda", cfg.optim.lambda);
        detail::fetch(o, "weight_decay", cfg.optim.weight_decay);
        detail::fetch(o, "mwnet_weight_decay", cfg.optim.mwnet_weight_decay);
        detail::fetch(o, "train_batch", cfg.optim.train_batch);
        detail::fetch(o, "meta_batch", cfg.optim.meta_batch);
        detail::fetch(o, "epochs", cfg.optim.epochs);
        detail::fetch(o, "total_iters", cfg.optim.total_iters);
        detail::fetch(o, "mwnet_interval", cfg.optim.mwnet_interval);
        detail::fetch(o, "deterministic_psi", cfg.optim.deterministic_psi);
        if (!o.contains("alpha_decay_epochs"))
            cfg.optim.alpha_decay_epochs = detail::default_decay_epochs(cfg.optim.epochs);
    }
    if (j.contains("output")) {
        const auto& o = j.at("output");
        detail::require_known_keys(o, "output", {"run_dir", "trace", "weight_dump_epochs"});
        detail::fetch(o, "run_dir", cfg.output.run_dir);
        detail::fetch(o, "trace", cfg.output.trace);
        detail::fetch(o, "weight_dump_epochs", cfg.output.weight_dump_epochs);
    }
    if (j.contains("seeds")) {
        const auto& s = j.at("seeds");
        detail::require_known_keys(s, "seeds", {"data", "init", "noise", "epsilon"});
        detail::fetch(s, "data", cfg.seeds.data);
        detail::fetch(s, "init", cfg.seeds.init);
        detail::fetch(s, "noise", cfg.seeds.noise);
        detail::fetch(s, "epsilon", cfg.seeds.epsilon);
    }
    return cfg;
}

/// Serialization always materializes every field, so parse -> serialize ->
/// parse is a fixed point and run directories record the resolved config.
inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["data"] = {{"train_csv", cfg.data.train_csv},
                 {"meta_csv", cfg.data.meta_csv},
                 {"test_csv", cfg.data.test_csv},
                 {"num_classes", cfg.data.num_classes},
                 {"dim", cfg.data.dim},
                 {"radius", cfg.data.radius},
                 {"class_scale", cfg.data.class_scale},
                 {"train_per_class", cfg.data.train_per_class},
                 {"test_per_class", cfg.data.test_per_class},
                 {"meta_per_class", cfg.data.meta_per_class},
                 {"bias_kind", cfg.data.bias_kind},
                 {"noise_rate", cfg.data.noise_rate},
                 {"imbalance_factor", cfg.data.imbalance_factor}};
    j["model"] = {{"variant", cfg.model.variant},
                  {"classifier_hidden", cfg.model.classifier_hidden},
                  {"mwnet_hidden", cfg.model.mwnet_hidden},
                  {"psi_dim", cfg.model.psi_dim}};
    j["optim"] = {{"alpha", cfg.optim.alpha},
                  {"alpha_decay_epochs", cfg.optim.alpha_decay_epochs},
                  {"alpha_decay_factor", cfg.optim.alpha_decay_factor},
                  {"beta", cfg.optim.beta},
                  {"lambda", cfg.optim.lambda},
                  {"weight_decay", cfg.optim.weight_decay},
                  {"mwnet_weight_decay", cfg.optim.mwnet_weight_decay},
                  {"train_batch", cfg.optim.train_batch},
                  {"meta_batch", cfg.optim.meta_batch},
                  {"epochs", cfg.optim.epochs},
                  {"total_iters", cfg.optim.total_iters},
                  {"mwnet_interval", cfg.optim.mwnet_interval},
                  {"deterministic_psi", cfg.optim.deterministic_psi}};
    j["output"] = {{"run_dir", cfg.output.run_dir},
                   {"trace", cfg.output.trace},
                   {"weight_dump_epochs", cfg.output.weight_dump_epochs}};
    j["seeds"] = {{"data", cfg.seeds.data},
                  {"init", cfg.seeds.init},
                  {"noise", cfg.seeds.noise},
                  {"epsilon", cfg.seeds.epsilon}};
    return j;
}

inline ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    return config_from_json(j);
}

}  // namespace metaweight
