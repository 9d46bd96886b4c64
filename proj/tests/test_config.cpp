#include <gtest/gtest.h>

#include <fstream>

#include "ctr/config.hpp"
#include "ctr/errors.hpp"
#include "test_util.hpp"

using namespace ctr;
using nlohmann::json;

namespace {

std::string failing_key(const json& user, const std::vector<std::string>& overrides = {}) {
    try {
        config_from_json(user, overrides);
    } catch (const ConfigError& e) {
        return e.key();
    }
    return "<accepted>";
}

json minimal() { return json{{"schema_version", 1}}; }

} // namespace

TEST(Config, MinimalDocumentGetsDefaults) {
    auto c = config_from_json(minimal());
    EXPECT_EQ(c.train.k, 4u);
    EXPECT_EQ(c.train.rho, 1.0);
    EXPECT_EQ(c.model.dropout, 0.5);
    EXPECT_EQ(c.train.eta, 100.0);
    EXPECT_EQ(c.train.gamma, 0.0);
    EXPECT_EQ(c.train.momentum, 0.9);
    EXPECT_EQ(c.train.weight_decay, 5e-4);
    EXPECT_EQ(c.train.replays, 8u);
    EXPECT_EQ(c.model.input_dim, 784u);
    EXPECT_EQ(c.model.classes, 10u);
    EXPECT_EQ(c.train.schedule.milestones, kNaturalMilestones);
    EXPECT_EQ(c.resolved.at("train").at("k"), 4);
}

TEST(Config, AdversarialMethodsUseLaterMilestones) {
    auto c = config_from_json({{"schema_version", 1}, {"train", {{"method", "madry_at"}}}});
    EXPECT_EQ(c.train.schedule.milestones, kAdversarialMilestones);
}

TEST(Config, InvalidValuesNameTheirKey) {
    EXPECT_EQ(failing_key({{"schema_version", 1}, {"train", {{"gamma", -0.5}}}}), "train.gamma");
    EXPECT_EQ(failing_key({{"schema_version", 1}, {"train", {{"eta", 0}}}}), "train.eta");
    EXPECT_EQ(failing_key({{"schema_version", 1}, {"train", {{"eta", 101}}}}), "train.eta");
    EXPECT_EQ(failing_key({{"schema_version", 1}, {"model", {{"dropout", 1.0}}}}), "model.dropout");
    EXPECT_EQ(failing_key({{"schema_version", 1}, {"train", {{"method", "natural_mdl"}, {"k", 1}}}}), "train.k");
    EXPECT_EQ(failing_key({{"schema_version", 1}, {"train", {{"method", "free_at"}, {"replays", 0}}}}), "train.replays");
    EXPECT_EQ(failing_key({{"schema_version", 1}, {"attack", {{"kind", "cw"}}}}), "attack.kind");
}

TEST(Config, UnknownKeysRejected) {
    EXPECT_EQ(failing_key({{"schema_version", 1}, {"trian", {{"gamma", 1}}}}), "trian");
    EXPECT_EQ(failing_key({{"schema_version", 1}, {"train", {{"gama", 1}}}}), "train.gama");
}

TEST(Config, TypesChecked) {
    EXPECT_EQ(failing_key({{"schema_version", 1}, {"train", {{"epochs", "ten"}}}}), "train.epochs");
    EXPECT_EQ(failing_key({{"schema_version", 1}, {"model", {{"hidden", 5}}}}), "model.hidden");
}

TEST(Config, SchemaVersionMandatory) {
    EXPECT_EQ(failing_key(json::object()), "schema_version");
    EXPECT_EQ(failing_key({{"schema_version", 2}}), "schema_version");
}

TEST(Config, OverridesUseTheSameSchema) {
    auto c = config_from_json(minimal(), {"train.gamma=2.5", "train.method=madry_at", "seed=7"});
    EXPECT_EQ(c.train.gamma, 2.5);
    EXPECT_EQ(c.train.method, TrainMethod::MadryAT);
    EXPECT_EQ(c.seed, 7u);
    EXPECT_EQ(c.train.seed, 7u);
    EXPECT_EQ(failing_key(minimal(), {"train.gamma=-1"}), "train.gamma");
    EXPECT_EQ(failing_key(minimal(), {"train.nope=1"}), "train.nope");
    EXPECT_THROW(config_from_json(minimal(), {"no_equals_sign"}), ConfigError);
}

TEST(Config, ResolvedDocumentReproducesTheConfig) {
    auto c = config_from_json({{"schema_version", 1}, {"data", {{"source", "blobs"}}}, {"train", {{"gamma", 1.5}}}});
    auto again = config_from_json(c.resolved);
    EXPECT_EQ(again.resolved, c.resolved);
    EXPECT_EQ(again.model.input_dim, 16u);
    EXPECT_EQ(again.model.classes, 5u);
}

TEST(Config, ParseConfigFromFile) {
    const auto dir = ctr::testing::scratch_dir("config_file");
    std::ofstream(dir / "ok.json") << R"({"schema_version": 1, "train": {"epochs": 3}})";
    EXPECT_EQ(parse_config(dir / "ok.json").train.epochs, 3u);
    std::ofstream(dir / "bad.json") << "{ not json";
    EXPECT_THROW(parse_config(dir / "bad.json"), ConfigError);
    EXPECT_THROW(parse_config(dir / "missing.json"), ConfigError);
}

TEST(Config, BlobsDatasetsDifferBetweenSplits) {
    auto c = config_from_json({{"schema_version", 1}, {"data", {{"source", "blobs"}}}});
    auto [train, test] = load_datasets(c);
    EXPECT_EQ(train.size(), 500u);
    EXPECT_EQ(test.size(), 250u);
    EXPECT_NE(std::vector<double>(train.inputs.begin(), train.inputs.begin() + 16),
              std::vector<double>(test.inputs.begin(), test.inputs.begin() + 16));
}

TEST(Config, MnistDatasetsHonourLimits) {
    auto c = config_from_json({{"schema_version", 1}, {"data", {{"train_limit", 100}, {"test_limit", 50}}}});
    auto [train, test] = load_datasets(c);
    EXPECT_EQ(train.size(), 100u);
    EXPECT_EQ(test.size(), 50u);
}
