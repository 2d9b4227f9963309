#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "metaweight/config.hpp"
#include "metaweight/datagen.hpp"
#include "metaweight/gradcheck.hpp"
#include "metaweight/meta_train.hpp"
#include "metaweight/metrics.hpp"

namespace metaweight {

struct DatasetBundle {
    LabeledDataset train, meta, test;
    double realized_noise_rate = 0.0;
    std::vector<int> flip_targets;  // flip1 per-class targets, when applicable
};

/// Generated pipeline: mixture draw -> clean balanced meta split -> long-tail
/// subsample -> label noise, each from its own seeded stream. CSV mode loads
/// the three files as-is.
inline DatasetBundle build_datasets(const ExperimentConfig& cfg) {
    DatasetBundle b;
    if (!cfg.data.train_csv.empty()) {
        if (cfg.data.meta_csv.empty() || cfg.data.test_csv.empty())
            throw ConfigError("csv mode needs train_csv, meta_csv and test_csv");
        b.train = load_csv_dataset(cfg.data.train_csv, true);
        b.meta = load_csv_dataset(cfg.data.meta_csv, true);
        b.test = load_csv_dataset(cfg.data.test_csv, true);
        b.realized_noise_rate = b.train.realized_noise_rate();
        return b;
    }

    RngState data_rng(cfg.seeds.data);
    MixtureSpec spec;
    spec.num_classes = cfg.data.num_classes;
    spec.dim = static_cast<int>(cfg.data.dim);
    spec.class_means = circle_means(spec.num_classes, spec.dim, cfg.data.radius);
    spec.class_scale = cfg.data.class_scale;
    spec.samples_per_class.assign(static_cast<std::size_t>(spec.num_classes),
                                  cfg.data.train_per_class + cfg.data.meta_per_class);

    RngState pool_rng = data_rng.split("train-pool");
    const LabeledDataset pool = generate_mixture(spec, pool_rng);
    RngState meta_rng = data_rng.split("meta-split");
    auto [train, meta] = split_meta_set(pool, cfg.data.meta_per_class, meta_rng);
    b.meta = std::move(meta);

    if (cfg.data.imbalance_factor > 1.0) {
        RngState tail_rng = data_rng.split("long-tail");
        train = make_long_tailed(train, cfg.data.imbalance_factor,
                                 cfg.data.train_per_class, tail_rng);
    }

    const BiasKind kind = bias_kind_from_string(cfg.data.bias_kind);
    RngState noise_rng(cfg.seeds.noise);
    switch (kind) {
        case BiasKind::none:
        case BiasKind::longtail:
            break;
        case BiasKind::uniform:
            train = inject_uniform_noise(train, cfg.data.noise_rate, noise_rng);
            break;
        case BiasKind::flip1: {
            RngState probe = noise_rng;  // same stream: reproduces the table below
            b.flip_targets = flip1_targets(train.num_classes, probe);
            train = inject_flip1_noise(train, cfg.data.noise_rate, noise_rng);
            break;
        }
        case BiasKind::flip2:
            train = inject_flip2_noise(train, cfg.data.noise_rate,
                                       default_flip2_targets(train.num_classes), noise_rng);
            break;
    }
    b.train = std::move(train);
    b.realized_noise_rate = b.train.realized_noise_rate();

    spec.samples_per_class.assign(static_cast<std::size_t>(spec.num_classes),
                                  cfg.data.test_per_class);
    RngState test_rng = data_rng.split("test");
    b.test = generate_mixture(spec, test_rng);
    return b;
}

/// --out flag beats the config's run_dir; otherwise the run_dir lands under
/// $METAWEIGHT_OUT_ROOT when that is set.
inline std::filesystem::path resolve_run_dir(const ExperimentConfig& cfg,
                                             const std::string& out_flag) {
    if (!out_flag.empty()) return out_flag;
    std::filesystem::path dir = cfg.output.run_dir;
    if (dir.is_relative())
        if (const char* root = std::getenv("METAWEIGHT_OUT_ROOT"))
            return std::filesystem::path(root) / dir;
    return dir;
}

namespace detail {
inline void write_text_file(const std::filesystem::path& path, const std::string& body) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << body;
    if (!out.good()) throw DataError("write failed for " + path.string());
}
}  // namespace detail

inline void cmd_gen_data(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
    const DatasetBundle b = build_datasets(cfg);
    std::filesystem::create_directories(out_dir);
    save_csv_dataset(b.train, (out_dir / "train.csv").string());
    save_csv_dataset(b.meta, (out_dir / "meta.csv").string());
    save_csv_dataset(b.test, (out_dir / "test.csv").string());
    nlohmann::json prov;
    prov["config"] = config_to_json(cfg);
    prov["realized_noise_rate"] = b.realized_noise_rate;
    prov["train_size"] = b.train.size();
    prov["meta_size"] = b.meta.size();
    prov["test_size"] = b.test.size();
    prov["train_class_counts"] = b.train.class_counts();
    if (!b.flip_targets.empty()) prov["flip1_targets"] = b.flip_targets;
    detail::write_text_file(out_dir / "provenance.json", prov.dump(2) + "\n");
}

inline nlohmann::json checkpoint_json(const ClassifierParams& theta, const MwNet& phi,
                                      const HyperParams& hp) {
    nlohmann::json j;
    j["classifier"] = {{"input_dim", theta.input_dim},
                       {"num_classes", theta.num_classes},
                       {"hidden", hp.classifier_hidden},
                       {"params", theta.flatten()}};
    j["mwnet"] = {{"variant", std::string(to_string(phi.variant))},
                  {"num_classes", phi.num_classes},
                  {"hidden", hp.mwnet_hidden},
                  {"psi_dim", phi.psi_dim},
                  {"params", phi.flatten()}};
    return j;
}

inline std::pair<ClassifierParams, MwNet> load_checkpoint(const nlohmann::json& j) {
    RngState dummy(0);
    const auto& c = j.at("classifier");
    ClassifierParams theta =
        make_classifier(c.at("input_dim").get<std::size_t>(),
                        c.at("hidden").get<std::vector<std::size_t>>(),
                        c.at("num_classes").get<std::size_t>(), dummy);
    theta.unflatten(c.at("params").get<std::vector<double>>());

    const auto& m = j.at("mwnet");
    MwNet phi = make_mwnet(mw_variant_from_string(m.at("variant").get<std::string>()),
                           m.at("num_classes").get<int>(),
                           m.at("hidden").get<std::size_t>(),
                           m.at("psi_dim").get<std::size_t>(), dummy);
    phi.unflatten(m.at("params").get<std::vector<double>>());
    return {std::move(theta), std::move(phi)};
}

inline std::vector<WeightDumpRow> weight_dump_rows(const ClassifierParams& theta,
                                                   const MwNet& phi,
                                                   const LabeledDataset& ds) {
    const DatasetWeights w = compute_dataset_weights(theta, phi, ds);
    std::vector<WeightDumpRow> rows(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i)
        rows[i] = {i, w.raw[i], w.normalized[i], static_cast<bool>(ds.corrupted[i])};
    return rows;
}

struct TrainRunResult {
    RunSummary summary;
    RunMetrics metrics;
};

/// Full config-driven run: datasets, training, and the run-directory
/// artifacts (resolved config, metrics.csv, summary.json, checkpoint.json,
/// weight dumps, optional trace.jsonl).
inline TrainRunResult cmd_train(const ExperimentConfig& cfg,
                                const std::filesystem::path& run_dir,
                                std::ostream* diagnostics = nullptr) {
    const DatasetBundle b = build_datasets(cfg);
    HyperParams hp = cfg.hyper_params();
    if (hp.total_iters == 0) {
        const std::size_t per_epoch =
            std::max<std::size_t>(1, b.train.size() / hp.train_batch);
        hp.total_iters = cfg.optim.epochs * per_epoch;
    }

    std::filesystem::create_directories(run_dir);
    detail::write_text_file(run_dir / "config.json", config_to_json(cfg).dump(2) + "\n");
    if (diagnostics)
        for (const std::string& w : config_warnings(cfg)) *diagnostics << "warning: " << w << "\n";

    std::ofstream trace_file;
    TraceSink trace_sink;
    if (cfg.output.trace) {
        trace_file.open(run_dir / "trace.jsonl");
        if (!trace_file) throw DataError("cannot write trace.jsonl");
        trace_sink = [&trace_file](const MetaStepTrace& t) {
            nlohmann::json j;
            j["iteration"] = t.iteration;
            j["mwnet_updated"] = t.mwnet_updated;
            j["train_loss"] = t.train_loss;
            j["meta_loss"] = t.meta_loss;
            j["kl_mean"] = t.kl_mean;
            j["grad_norm_sq"] = t.grad_norm_sq;
            j["phi_grad_norm_sq"] = t.phi_grad_norm_sq;
            j["weights_before"] = t.weights_before;
            j["weights_after"] = t.weights_after;
            j["grad_dots"] = t.grad_dots;
            trace_file << j.dump() << "\n";
        };
    }

    std::vector<long> dump_epochs = cfg.output.weight_dump_epochs;
    EpochSink epoch_sink = [&](const EpochRecord& rec, const ClassifierParams& theta,
                               const MwNet& phi) {
        for (long e : dump_epochs)
            if (e == rec.epoch) {
                std::ofstream f(run_dir / ("weights_epoch_" + std::to_string(e) + ".csv"));
                write_weight_dump_csv(f, weight_dump_rows(theta, phi, b.train));
            }
    };

    const TrainResult result = train(b.train, b.meta, b.test, hp, trace_sink, epoch_sink);

    {
        std::ofstream f(run_dir / "metrics.csv");
        write_metrics_csv(f, result.metrics.epochs);
        if (!f.good()) throw DataError("write failed for metrics.csv");
    }
    {
        std::ofstream f(run_dir / "weights_final.csv");
        write_weight_dump_csv(f, weight_dump_rows(result.theta, result.phi, b.train));
    }
    detail::write_text_file(run_dir / "checkpoint.json",
                            checkpoint_json(result.theta, result.phi, hp).dump() + "\n");

    TrainRunResult out;
    out.metrics = result.metrics;
    if (!result.metrics.epochs.empty()) out.summary = summarize_run(result.metrics.epochs);
    {
        std::ofstream f(run_dir / "summary.json");
        write_summary_json(f, out.summary, result.metrics.epochs.size());
        if (!f.good()) throw DataError("write failed for summary.json");
    }
    return out;
}

/// Deterministic tiny-instance harness behind the gradcheck subcommand: the
/// configured variant on generated data, fixed prefix batches, fixed epsilon.
inline GradCheckReport cmd_gradcheck(const ExperimentConfig& cfg,
                                     const std::string& corrupt_block = "") {
    const DatasetBundle b = build_datasets(cfg);
    RngState init_rng(cfg.seeds.init);
    RngState theta_rng = init_rng.split("classifier-init");
    RngState phi_rng = init_rng.split("mwnet-init");
    const HyperParams hp = cfg.hyper_params();

    ClassifierParams theta =
        make_classifier(b.train.dim(), hp.classifier_hidden,
                        static_cast<std::size_t>(b.train.num_classes), theta_rng);
    MwNet phi = make_mwnet(hp.variant, b.train.num_classes, hp.mwnet_hidden,
                           hp.psi_dim, phi_rng);

    const std::size_t n = std::min<std::size_t>(hp.train_batch, b.train.size());
    const std::size_t m = std::min<std::size_t>(hp.meta_batch, b.meta.size());
    std::vector<std::size_t> batch(n), meta_batch(m);
    for (std::size_t i = 0; i < n; ++i) batch[i] = i;
    for (std::size_t i = 0; i < m; ++i) meta_batch[i] = i;

    RngState eps_rng(cfg.seeds.epsilon);
    const auto eps = draw_epsilons(phi, n, hp.deterministic_psi, eps_rng);
    return gradcheck_hypergradient(theta, phi, b.train, batch, b.meta, meta_batch,
                                   hp.alpha, hp.lambda, eps, 1e-5, 1e-4, corrupt_block);
}

struct SweepPoint {
    std::string name;
    nlohmann::json overrides;  // dotted-path -> value
};

struct SweepSpec {
    ExperimentConfig base;
    std::vector<SweepPoint> points;
    std::vector<std::uint64_t> seeds;
};

inline SweepSpec load_sweep_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open sweep file: " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("sweep parse error in " + path + ": " + e.what());
    }
    detail::require_known_keys(j, "sweep file", {"base", "points", "seeds"});
    if (!j.contains("base") || !j.contains("points") || !j.contains("seeds"))
        throw ConfigError("sweep file needs base, points and seeds");

    SweepSpec spec;
    spec.base = config_from_json(j.at("base"));
    for (const auto& p : j.at("points")) {
        detail::require_known_keys(p, "sweep point", {"name", "overrides"});
        SweepPoint point;
        point.name = p.at("name").get<std::string>();
        if (point.name.empty() || point.name.find('/') != std::string::npos ||
            point.name.find(',') != std::string::npos)
            throw ConfigError("sweep point names must be nonempty, without '/' or ','");
        point.overrides = p.value("overrides", nlohmann::json::object());
        spec.points.push_back(std::move(point));
    }
    spec.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (spec.points.empty() || spec.seeds.empty())
        throw ConfigError("sweep file needs at least one point and one seed");
    return spec;
}

/// Apply "section.key" overrides on top of the materialized base config.
/// Only keys that already exist may be touched.
inline ExperimentConfig apply_overrides(const ExperimentConfig& base,
                                        const nlohmann::json& overrides) {
    nlohmann::json tree = config_to_json(base);
    for (const auto& [path, value] : overrides.items()) {
        nlohmann::json* node = &tree;
        std::size_t start = 0;
        while (true) {
            const std::size_t dot = path.find('.', start);
            const std::string key = path.substr(start, dot - start);
            if (!node->is_object() || !node->contains(key))
                throw ConfigError("override path '" + path + "' does not name an existing key");
            if (dot == std::string::npos) {
                (*node)[key] = value;
                break;
            }
            node = &(*node)[key];
            start = dot + 1;
        }
    }
    return config_from_json(tree);
}

struct SweepRowResult {
    std::string point;
    std::uint64_t seed = 0;
    bool ok = false;
    RunSummary summary;
    std::string error;
};

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRowResult>& rows) {
    os << "kind,point,seed,status,best_test_acc,last10_mean_acc,best_epoch,"
          "best_acc_mean,best_acc_std,last_acc_mean,last_acc_std,error\n";
    auto sanitize = [](std::string s) {
        for (char& ch : s)
            if (ch == ',' || ch == '\n' || ch == '\r') ch = ';';
        return s;
    };
    for (const auto& r : rows) {
        os << "run," << r.point << ',' << r.seed << ',' << (r.ok ? "ok" : "failed") << ',';
        if (r.ok)
            os << detail::metric_value(r.summary.best_test_acc) << ','
               << detail::metric_value(r.summary.last10_mean_acc) << ',' << r.summary.best_epoch;
        else
            os << ",,";
        os << ",,,,," << sanitize(r.error) << "\n";
    }

    std::vector<std::string> seen;
    for (const auto& r : rows) {
        bool dup = false;
        for (const auto& s : seen) dup |= (s == r.point);
        if (dup) continue;
        seen.push_back(r.point);

        std::vector<double> best, last;
        for (const auto& q : rows)
            if (q.point == r.point && q.ok) {
                best.push_back(q.summary.best_test_acc);
                last.push_back(q.summary.last10_mean_acc);
            }
        std::size_t failed = 0;
        for (const auto& q : rows)
            if (q.point == r.point && !q.ok) ++failed;

        auto mean_std = [](const std::vector<double>& v) -> std::pair<double, double> {
            if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(),
                                   std::numeric_limits<double>::quiet_NaN()};
            double mu = 0.0;
            for (double x : v) mu += x;
            mu /= static_cast<double>(v.size());
            double var = 0.0;
            for (double x : v) var += (x - mu) * (x - mu);
            const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1))
                                           : 0.0;
            return {mu, sd};
        };
        const auto [bm, bs] = mean_std(best);
        const auto [lm, ls] = mean_std(last);
        os << "aggregate," << r.point << ",," << (failed == 0 ? "ok" : "partial") << ",,,,"
           << detail::metric_value(bm) << ',' << detail::metric_value(bs) << ','
           << detail::metric_value(lm) << ',' << detail::metric_value(ls) << ','
           << (failed == 0 ? "" : std::to_string(failed) + " failed run(s)") << "\n";
    }
}

/// Cross product of points x seeds, sequentially, each child isolated in its
/// own subdirectory; failures are recorded and do not stop the sweep.
inline std::vector<SweepRowResult> cmd_sweep(const SweepSpec& spec,
                                             const std::filesystem::path& out_dir,
                                             std::ostream* diagnostics = nullptr) {
    std::filesystem::create_directories(out_dir);
    std::vector<SweepRowResult> rows;
    for (const auto& point : spec.points) {
        const ExperimentConfig point_cfg = apply_overrides(spec.base, point.overrides);
        for (const std::uint64_t seed : spec.seeds) {
            ExperimentConfig cfg = point_cfg;
            cfg.seeds = SeedConfig{seed, seed, seed, seed};
            SweepRowResult row;
            row.point = point.name;
            row.seed = seed;
            const std::filesystem::path child =
                out_dir / point.name / ("seed_" + std::to_string(seed));
            try {
                row.summary = cmd_train(cfg, child, diagnostics).summary;
                row.ok = true;
            } catch (const std::exception& e) {
                row.error = e.what();
                if (diagnostics)
                    *diagnostics << "sweep child " << point.name << "/seed_" << seed
                                 << " failed: " << e.what() << "\n";
            }
            rows.push_back(std::move(row));
        }
    }
    std::ofstream f(out_dir / "sweep.csv");
    write_sweep_csv(f, rows);
    if (!f.good()) throw DataError("write failed for sweep.csv");
    return rows;
}

}  // namespace metaweight
