// Command-line front end: gen-data / train / gradcheck / sweep over JSON
// experiment configs. Exit codes: 0 ok, 2 config error, 3 data error,
// 4 numeric failure, 5 gradcheck failure, 1 anything else.
#include <cstdint>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "metaweight/runner.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitGeneric = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitGradcheck = 5;

struct CommonFlags {
    std::string config_path;
    std::string out_flag;
    std::optional<std::uint64_t> seed;
    bool trace = false;
};

void add_common(CLI::App* sub, CommonFlags& flags) {
    sub->add_option("--config", flags.config_path, "JSON experiment config")
        ->required();
    sub->add_option("--seed", flags.seed, "override every seed field");
    sub->add_option("--out", flags.out_flag,
                    "output directory (overrides config run_dir and METAWEIGHT_OUT_ROOT)");
    sub->add_flag("--trace", flags.trace, "write per-iteration trace.jsonl");
}

metaweight::ExperimentConfig resolve_config(const CommonFlags& flags) {
    metaweight::ExperimentConfig cfg = metaweight::load_config_file(flags.config_path);
    if (flags.seed) cfg.seeds = metaweight::SeedConfig{*flags.seed, *flags.seed, *flags.seed, *flags.seed};
    if (flags.trace) cfg.output.trace = true;
    for (const std::string& w : metaweight::config_warnings(cfg))
        std::cerr << "warning: " << w << "\n";
    return cfg;
}

int run(int argc, char** argv) {
    CLI::App app{"meta-learned sample reweighting: data, training, sweeps, gradient checks"};
    app.require_subcommand(1);

    CommonFlags gen_flags, train_flags, check_flags, sweep_flags;
    std::string corrupt_block;

    CLI::App* gen = app.add_subcommand("gen-data", "generate train/meta/test CSVs");
    add_common(gen, gen_flags);
    CLI::App* tr = app.add_subcommand("train", "run one training experiment");
    add_common(tr, train_flags);
    CLI::App* gc = app.add_subcommand("gradcheck",
                                      "finite-difference check of the weighting-net gradient");
    add_common(gc, check_flags);
    gc->add_option("--corrupt-block", corrupt_block,
                   "debug: corrupt this parameter block's analytic gradient");
    CLI::App* sw = app.add_subcommand("sweep", "run a sweep file (base config + points + seeds)");
    add_common(sw, sweep_flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitConfig;
    }

    if (gen->parsed()) {
        const metaweight::ExperimentConfig cfg = resolve_config(gen_flags);
        const auto out_dir = metaweight::resolve_run_dir(cfg, gen_flags.out_flag);
        metaweight::cmd_gen_data(cfg, out_dir);
        const auto prov = out_dir / "provenance.json";
        std::cout << "wrote train/meta/test CSVs and " << prov.string() << "\n";
        return kExitOk;
    }

    if (tr->parsed()) {
        const metaweight::ExperimentConfig cfg = resolve_config(train_flags);
        const auto run_dir = metaweight::resolve_run_dir(cfg, train_flags.out_flag);
        const metaweight::TrainRunResult r = metaweight::cmd_train(cfg, run_dir, &std::cerr);
        std::cout << "run dir: " << run_dir.string() << "\n"
                  << "epochs: " << r.metrics.epochs.size() << "\n";
        if (!r.metrics.epochs.empty())
            std::printf("best_test_acc: %.4f (epoch %ld)\nlast10_mean_acc: %.4f\n",
                        r.summary.best_test_acc, r.summary.best_epoch,
                        r.summary.last10_mean_acc);
        return kExitOk;
    }

    if (gc->parsed()) {
        const metaweight::ExperimentConfig cfg = resolve_config(check_flags);
        const metaweight::GradCheckReport report = metaweight::cmd_gradcheck(cfg, corrupt_block);
        for (const auto& b : report.blocks)
            std::printf("block %-10s max rel err %.3e  (analytic %.6e vs numeric %.6e at coord %zu)\n",
                        b.name.c_str(), b.max_rel_err, b.analytic_at_worst,
                        b.numeric_at_worst, b.worst_coord);
        std::printf("gradcheck %s: max rel err %.3e, tolerance %.1e\n",
                    report.pass ? "PASS" : "FAIL", report.max_rel_err, report.tolerance);
        return report.pass ? kExitOk : kExitGradcheck;
    }

    if (sw->parsed()) {
        const metaweight::SweepSpec spec = [&] {
            metaweight::SweepSpec s = metaweight::load_sweep_file(sweep_flags.config_path);
            if (sweep_flags.seed) s.seeds = {*sweep_flags.seed};
            if (sweep_flags.trace) s.base.output.trace = true;
            return s;
        }();
        for (const std::string& w : metaweight::config_warnings(spec.base))
            std::cerr << "warning: " << w << "\n";
        const auto out_dir = metaweight::resolve_run_dir(spec.base, sweep_flags.out_flag);
        const auto rows = metaweight::cmd_sweep(spec, out_dir, &std::cerr);
        std::size_t failed = 0;
        for (const auto& r : rows)
            if (!r.ok) ++failed;
        std::cout << "sweep: " << rows.size() << " runs, " << failed << " failed; table at "
                  << (out_dir / "sweep.csv").string() << "\n";
        return failed == 0 ? kExitOk : kExitGeneric;
    }

    return kExitConfig;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const metaweight::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const metaweight::ParseError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const metaweight::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const metaweight::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitGeneric;
    }
}
