#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "metaweight/config.hpp"
#include "metaweight/runner.hpp"

using namespace metaweight;
using nlohmann::json;

namespace {

std::string write_temp(const std::string& name, const std::string& text) {
    const std::string path = (std::filesystem::temp_directory_path() / name).string();
    std::ofstream out(path);
    out << text;
    return path;
}

}  // namespace

TEST(Config, EmptyJsonYieldsDefaults) {
    const ExperimentConfig cfg = config_from_json(json::object());
    EXPECT_EQ(cfg.data.num_classes, 4);
    EXPECT_EQ(cfg.data.bias_kind, "none");
    EXPECT_EQ(cfg.model.variant, "metainfonet");
    EXPECT_EQ(cfg.model.classifier_hidden, (std::vector<std::size_t>{64, 64}));
    EXPECT_DOUBLE_EQ(cfg.optim.alpha, 10.0);
    EXPECT_DOUBLE_EQ(cfg.optim.lambda, 0.1);
    EXPECT_DOUBLE_EQ(cfg.optim.weight_decay, 0.0);
    EXPECT_EQ(cfg.optim.epochs, 60u);
    EXPECT_EQ(cfg.optim.alpha_decay_epochs, (std::vector<long>{36, 48}));
    EXPECT_EQ(cfg.output.run_dir, "run");
    EXPECT_EQ(cfg.seeds.data, 11u);
    EXPECT_EQ(cfg.seeds.epsilon, 44u);
}

TEST(Config, ParseSerializeParseIsAFixedPoint) {
    json j;
    j["data"] = {{"num_classes", 10}, {"bias_kind", "flip1"}, {"noise_rate", 0.4}};
    j["model"] = {{"variant", "lossnet"}, {"classifier_hidden", json::array({32})}};
    j["optim"] = {{"alpha", 2.5}, {"lambda", 0.3}, {"epochs", 80},
                  {"weight_decay", 5e-4}};
    j["seeds"] = {{"data", 7}};
    const ExperimentConfig cfg = config_from_json(j);
    const json full = config_to_json(cfg);
    const ExperimentConfig cfg2 = config_from_json(full);
    EXPECT_EQ(config_to_json(cfg2), full);
    EXPECT_EQ(cfg2.data.num_classes, 10);
    EXPECT_EQ(cfg2.model.variant, "lossnet");
    EXPECT_DOUBLE_EQ(cfg2.optim.weight_decay, 5e-4);
    EXPECT_EQ(cfg2.seeds.data, 7u);
    EXPECT_EQ(cfg2.seeds.init, 22u);  // untouched default
}

TEST(Config, UnknownKeysRejectedPerSection) {
    EXPECT_THROW(config_from_json(json{{"entirely", 1}}), ConfigError);
    EXPECT_THROW(config_from_json(json{{"data", {{"radius_typo", 2.0}}}}), ConfigError);
    EXPECT_THROW(config_from_json(json{{"model", {{"hidden", 5}}}}), ConfigError);
    EXPECT_THROW(config_from_json(json{{"optim", {{"learning_rate", 0.1}}}}), ConfigError);
    EXPECT_THROW(config_from_json(json{{"output", {{"dir", "x"}}}}), ConfigError);
    EXPECT_THROW(config_from_json(json{{"seeds", {{"rng", 1}}}}), ConfigError);
    EXPECT_THROW(config_from_json(json{{"data", json::array({1})}}), ConfigError);
}

TEST(Config, TypeErrorsNameTheKey) {
    try {
        config_from_json(json{{"optim", {{"alpha", "fast"}}}});
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("bad value for 'alpha'"), std::string::npos);
    }
    EXPECT_THROW(config_from_json(json{{"model", {{"classifier_hidden", "64"}}}}),
                 ConfigError);
    EXPECT_THROW(config_from_json(json{{"seeds", {{"init", "not-a-seed"}}}}), ConfigError);
    EXPECT_THROW(config_from_json(json{{"optim", {{"deterministic_psi", 3.5}}}}),
                 ConfigError);
}

TEST(Config, VariantAndBiasKindValidatedEarly) {
    EXPECT_THROW(config_from_json(json{{"model", {{"variant", "resnet"}}}}), ConfigError);
    EXPECT_THROW(config_from_json(json{{"data", {{"bias_kind", "speckle"}}}}), ConfigError);
    // the long tail is driven by imbalance_factor, not bias_kind
    EXPECT_THROW(config_from_json(json{{"data", {{"bias_kind", "longtail"}}}}), ConfigError);
    for (const char* ok : {"none", "uniform", "flip1", "flip2"}) {
        const ExperimentConfig cfg =
            config_from_json(json{{"data", {{"bias_kind", ok}}}});
        EXPECT_EQ(cfg.data.bias_kind, ok);
    }
}

TEST(Config, AlphaDecayDefaultsScaleWithEpochs) {
    auto with_epochs = [](std::size_t epochs) {
        return config_from_json(json{{"optim", {{"epochs", epochs}}}});
    };
    EXPECT_EQ(with_epochs(60).optim.alpha_decay_epochs, (std::vector<long>{36, 48}));
    EXPECT_EQ(with_epochs(100).optim.alpha_decay_epochs, (std::vector<long>{60, 80}));
    EXPECT_EQ(with_epochs(1).optim.alpha_decay_epochs, (std::vector<long>{1}));
    EXPECT_EQ(with_epochs(2).optim.alpha_decay_epochs, (std::vector<long>{1, 2}));

    // an explicit empty list pins a constant rate
    const ExperimentConfig constant = config_from_json(
        json{{"optim", {{"epochs", 60}, {"alpha_decay_epochs", json::array()}}}});
    EXPECT_TRUE(constant.optim.alpha_decay_epochs.empty());
    // an explicit list wins over the epochs-based default
    const ExperimentConfig pinned = config_from_json(
        json{{"optim", {{"epochs", 60}, {"alpha_decay_epochs", json::array({10, 20})}}}});
    EXPECT_EQ(pinned.optim.alpha_decay_epochs, (std::vector<long>{10, 20}));
}

TEST(Config, HyperParamsMappingCarriesEveryField) {
    json j;
    j["model"] = {{"variant", "logitnet"}, {"classifier_hidden", json::array({16, 8})},
                  {"mwnet_hidden", 24}, {"psi_dim", 3}};
    j["optim"] = {{"alpha", 1.5}, {"alpha_decay_epochs", json::array({4})},
                  {"alpha_decay_factor", 5.0}, {"beta", 0.02}, {"lambda", 0.3},
                  {"weight_decay", 1e-4}, {"mwnet_weight_decay", 1e-3},
                  {"train_batch", 30}, {"meta_batch", 10}, {"total_iters", 99},
                  {"mwnet_interval", 2}, {"deterministic_psi", true}};
    j["seeds"] = {{"init", 5}, {"epsilon", 6}};
    const HyperParams hp = config_from_json(j).hyper_params();
    EXPECT_EQ(hp.variant, MwVariant::logitnet);
    EXPECT_EQ(hp.classifier_hidden, (std::vector<std::size_t>{16, 8}));
    EXPECT_EQ(hp.mwnet_hidden, 24u);
    EXPECT_EQ(hp.psi_dim, 3u);
    EXPECT_DOUBLE_EQ(hp.alpha, 1.5);
    EXPECT_EQ(hp.alpha_decay_epochs, (std::vector<long>{4}));
    EXPECT_DOUBLE_EQ(hp.alpha_decay_factor, 5.0);
    EXPECT_DOUBLE_EQ(hp.beta, 0.02);
    EXPECT_DOUBLE_EQ(hp.lambda, 0.3);
    EXPECT_DOUBLE_EQ(hp.weight_decay, 1e-4);
    EXPECT_DOUBLE_EQ(hp.mwnet_weight_decay, 1e-3);
    EXPECT_EQ(hp.train_batch, 30u);
    EXPECT_EQ(hp.meta_batch, 10u);
    EXPECT_EQ(hp.total_iters, 99u);
    EXPECT_EQ(hp.mwnet_interval, 2u);
    EXPECT_TRUE(hp.deterministic_psi);
    EXPECT_EQ(hp.init_seed, 5u);
    EXPECT_EQ(hp.epsilon_seed, 6u);
}

TEST(Config, LambdaGridAdvisory) {
    ExperimentConfig cfg;
    for (double lambda : kLambdaGrid) {
        cfg.optim.lambda = lambda;
        EXPECT_TRUE(config_warnings(cfg).empty()) << lambda;
    }
    cfg.optim.lambda = 0.05;
    const auto warnings = config_warnings(cfg);
    ASSERT_EQ(warnings.size(), 1u);
    EXPECT_NE(warnings[0].find("lambda"), std::string::npos);
}

TEST(Config, LoadConfigFileErrors) {
    EXPECT_THROW(load_config_file("/nonexistent/config.json"), ConfigError);
    const std::string bad = write_temp("metaweight_bad_cfg.json", "{not json");
    EXPECT_THROW(load_config_file(bad), ConfigError);
    const std::string good =
        write_temp("metaweight_good_cfg.json", R"({"optim": {"alpha": 3.0}})");
    EXPECT_DOUBLE_EQ(load_config_file(good).optim.alpha, 3.0);
    std::remove(bad.c_str());
    std::remove(good.c_str());
}

TEST(Overrides, DottedPathsTouchOnlyExistingKeys) {
    ExperimentConfig base;
    base.optim.lambda = 0.1;
    const ExperimentConfig out = apply_overrides(
        base, json{{"optim.lambda", 0.3}, {"model.variant", "lossnet"},
                   {"seeds.init", 9}});
    EXPECT_DOUBLE_EQ(out.optim.lambda, 0.3);
    EXPECT_EQ(out.model.variant, "lossnet");
    EXPECT_EQ(out.seeds.init, 9u);
    EXPECT_DOUBLE_EQ(out.optim.alpha, base.optim.alpha);  // untouched

    EXPECT_THROW(apply_overrides(base, json{{"optim.momentum", 0.9}}), ConfigError);
    EXPECT_THROW(apply_overrides(base, json{{"nonsection.alpha", 1.0}}), ConfigError);
    EXPECT_THROW(apply_overrides(base, json{{"optim.lambda.deep", 1.0}}), ConfigError);
    // the resulting tree still passes full validation
    EXPECT_THROW(apply_overrides(base, json{{"model.variant", "bogus"}}), ConfigError);
}

TEST(Sweep, FileSchemaEnforced) {
    const std::string good = write_temp("metaweight_sweep_good.json", R"({
        "base": {"optim": {"epochs": 2}},
        "points": [
            {"name": "a", "overrides": {"optim.lambda": 0.0}},
            {"name": "b"}
        ],
        "seeds": [1, 2, 3]
    })");
    const SweepSpec spec = load_sweep_file(good);
    EXPECT_EQ(spec.points.size(), 2u);
    EXPECT_EQ(spec.points[0].name, "a");
    EXPECT_TRUE(spec.points[1].overrides.empty());
    EXPECT_EQ(spec.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
    EXPECT_EQ(spec.base.optim.epochs, 2u);
    std::remove(good.c_str());

    const std::string missing =
        write_temp("metaweight_sweep_missing.json", R"({"base": {}, "points": []})");
    EXPECT_THROW(load_sweep_file(missing), ConfigError);
    std::remove(missing.c_str());

    const std::string slash = write_temp("metaweight_sweep_slash.json", R"({
        "base": {}, "points": [{"name": "a/b"}], "seeds": [1]})");
    EXPECT_THROW(load_sweep_file(slash), ConfigError);
    std::remove(slash.c_str());

    const std::string comma = write_temp("metaweight_sweep_comma.json", R"({
        "base": {}, "points": [{"name": "a,b"}], "seeds": [1]})");
    EXPECT_THROW(load_sweep_file(comma), ConfigError);
    std::remove(comma.c_str());

    const std::string unknown = write_temp("metaweight_sweep_unknown.json", R"({
        "base": {}, "points": [{"name": "a", "extra": 1}], "seeds": [1]})");
    EXPECT_THROW(load_sweep_file(unknown), ConfigError);
    std::remove(unknown.c_str());

    const std::string empty_lists = write_temp("metaweight_sweep_empty.json", R"({
        "base": {}, "points": [], "seeds": []})");
    EXPECT_THROW(load_sweep_file(empty_lists), ConfigError);
    std::remove(empty_lists.c_str());

    EXPECT_THROW(load_sweep_file("/nonexistent/sweep.json"), ConfigError);
}
