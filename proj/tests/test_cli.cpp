#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ctr/analysis.hpp"
#include "ctr/training.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
    int code = -1;
    std::string out;
    json summary() const { return json::parse(out); }
};

Run run_cli(const std::string& args) {
    const std::string cmd = std::string(CTR_CLI_PATH) + " " + args + " 2>/dev/null";
    Run r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return r;
    std::array<char, 4096> buf{};
    std::size_t n = 0;
    while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path blobs_config(const fs::path& dir, const json& train = {{"method", "natural_mdl"}, {"epochs", 3}}) {
    const json doc = {{"schema_version", 1},
                      {"seed", 3},
                      {"data", {{"source", "blobs"}}},
                      {"model", {{"hidden", {16, 12}}}},
                      {"train", train},
                      {"attack", {{"steps", 5}, {"batch_size", 100}}}};
    const auto p = dir / "config.json";
    std::ofstream(p) << doc.dump(2);
    return p;
}

// One trained blobs model shared by the attack and analysis tests.
const fs::path& trained() {
    static const fs::path dir = [] {
        auto d = ctr::testing::scratch_dir("cli_model");
        blobs_config(d);
        run_cli("train --config " + (d / "config.json").string() + " --out " + (d / "run").string());
        return d;
    }();
    return dir;
}

std::string with_model(const std::string& verb, const fs::path& out) {
    const auto& d = trained();
    return verb + " --config " + (d / "config.json").string() + " --checkpoint " + (d / "run" / "checkpoint.json").string() +
           " --out " + out.string();
}

} // namespace

TEST(Cli, TrainWritesArtifactsAndSingleSummaryLine) {
    const auto d = ctr::testing::scratch_dir("cli_train");
    const auto cfg = blobs_config(d);
    auto r = run_cli("train --config " + cfg.string() + " --out " + (d / "a").string());
    ASSERT_EQ(r.code, 0);
    EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 1);
    auto s = r.summary();
    EXPECT_EQ(s["status"], "ok");
    EXPECT_EQ(s["epochs"], 3);
    for (const char* f : {"history.jsonl", "checkpoint.json", "trainer_state.json", "config.json"})
        EXPECT_TRUE(fs::exists(d / "a" / f)) << f;
    EXPECT_EQ(ctr::read_history(d / "a" / "history.jsonl").size(), 3u);

    auto again = run_cli("train --config " + cfg.string() + " --out " + (d / "b").string());
    ASSERT_EQ(again.code, 0);
    EXPECT_EQ(slurp(d / "a" / "history.jsonl"), slurp(d / "b" / "history.jsonl"));
    EXPECT_EQ(slurp(d / "a" / "checkpoint.json"), slurp(d / "b" / "checkpoint.json"));
}

TEST(Cli, SeedFlagOverridesConfig) {
    const auto d = ctr::testing::scratch_dir("cli_seed");
    const auto cfg = blobs_config(d);
    ASSERT_EQ(run_cli("train --config " + cfg.string() + " --out " + (d / "a").string() + " --seed 9").code, 0);
    ASSERT_EQ(run_cli("train --config " + cfg.string() + " --out " + (d / "b").string()).code, 0);
    EXPECT_NE(slurp(d / "a" / "checkpoint.json"), slurp(d / "b" / "checkpoint.json"));
    EXPECT_EQ(json::parse(slurp(d / "a" / "config.json"))["seed"], 9);
}

TEST(Cli, InvalidConfigExitsTwoWithoutOutput) {
    const auto d = ctr::testing::scratch_dir("cli_bad");
    const auto cfg = blobs_config(d, {{"gamma", -1.0}});
    auto r = run_cli("train --config " + cfg.string() + " --out " + (d / "out").string());
    EXPECT_EQ(r.code, 2);
    EXPECT_EQ(r.summary()["key"], "train.gamma");
    EXPECT_FALSE(fs::exists(d / "out"));

    auto unknown = run_cli("train --config " + cfg.string() + " --out " + (d / "out").string() + " --set train.bogus=1");
    EXPECT_EQ(unknown.code, 2);
    EXPECT_EQ(run_cli("train --config " + (d / "missing.json").string() + " --out " + (d / "out").string()).code, 2);
    EXPECT_EQ(run_cli("fly").code, 2);
}

TEST(Cli, AttackAtZeroEpsilonFlipsNothing) {
    const auto out = ctr::testing::scratch_dir("cli_attack0");
    auto r = run_cli(with_model("attack", out) + " --set attack.epsilon=0");
    ASSERT_EQ(r.code, 0);
    EXPECT_EQ(r.summary()["asr"], 0.0);
    const auto table = ctr::read_csv(out / "attack_examples.csv");
    EXPECT_EQ(table.columns,
              (std::vector<std::string>{"index", "true_label", "pred_before", "pred_after", "linf_norm", "loss_final"}));
    EXPECT_EQ(table.rows.size(), 250u);
    const auto results = json::parse(slurp(out / "attack_results.json"));
    EXPECT_EQ(results["flipped"], 0);
}

TEST(Cli, AttackGridCoversEveryKindAndLoss) {
    const auto out = ctr::testing::scratch_dir("cli_grid");
    auto r = run_cli(with_model("attack", out) + " --set attack.grid=true");
    ASSERT_EQ(r.code, 0);
    EXPECT_EQ(r.summary()["rows"], 15);
    EXPECT_EQ(ctr::read_csv(out / "attack_grid.csv").rows.size(), 15u);
    EXPECT_EQ(json::parse(slurp(out / "attack_results.json")).size(), 15u);
}

TEST(Cli, AttackRunsAreByteIdentical) {
    const auto a = ctr::testing::scratch_dir("cli_attack_a");
    const auto b = ctr::testing::scratch_dir("cli_attack_b");
    ASSERT_EQ(run_cli(with_model("attack", a)).code, 0);
    ASSERT_EQ(run_cli(with_model("attack", b)).code, 0);
    EXPECT_EQ(slurp(a / "attack_examples.csv"), slurp(b / "attack_examples.csv"));
}

TEST(Cli, MissingCheckpointExitsTwo) {
    const auto d = ctr::testing::scratch_dir("cli_nockpt");
    const auto cfg = blobs_config(d);
    auto r = run_cli("attack --config " + cfg.string() + " --checkpoint " + (d / "none.json").string() + " --out " +
                     (d / "out").string());
    EXPECT_EQ(r.code, 2);
    EXPECT_EQ(r.summary()["status"], "error");
}

TEST(Cli, AnalyzeCensusAndSweep) {
    const auto one = ctr::testing::scratch_dir("cli_ct_one");
    ASSERT_EQ(run_cli(with_model("analyze-ct", one)).code, 0);
    const auto census = ctr::read_csv(one / "ct_census.csv");
    ASSERT_EQ(census.rows.size(), 1u);

    const auto many = ctr::testing::scratch_dir("cli_ct_many");
    const std::string th = " --thresholds 0.05,0.1,0.15,0.2,0.25";
    ASSERT_EQ(run_cli(with_model("analyze-ct", many) + th).code, 0);
    const auto sweep = ctr::read_csv(many / "ct_sweep.csv");
    ASSERT_EQ(sweep.rows.size(), 5u);
    for (std::size_t i = 1; i < sweep.rows.size(); ++i)
        EXPECT_GE(std::get<double>(sweep.rows[i][1]), std::get<double>(sweep.rows[i - 1][1]));

    const auto again = ctr::testing::scratch_dir("cli_ct_again");
    ASSERT_EQ(run_cli(with_model("analyze-ct", again) + th).code, 0);
    EXPECT_EQ(slurp(many / "ct_sweep.csv"), slurp(again / "ct_sweep.csv"));

    EXPECT_EQ(run_cli(with_model("analyze-ct", many) + " --thresholds 0,0.1").code, 2);
}

TEST(Cli, CurveAndLogits) {
    const auto out = ctr::testing::scratch_dir("cli_curve");
    ASSERT_EQ(run_cli(with_model("curve", out)).code, 0);
    const auto curve = ctr::read_csv(out / "curve.csv");
    EXPECT_EQ(curve.rows.size(), 5u);
    ASSERT_EQ(run_cli(with_model("export-logits", out)).code, 0);
    const auto logits = ctr::read_csv(out / "logits.csv");
    EXPECT_EQ(logits.rows.size(), 250u);
    EXPECT_EQ(logits.columns.size(), 2u + 5u);
}

TEST(Cli, ResumingAFinishedRunChangesNothing) {
    const auto d = ctr::testing::scratch_dir("cli_resume");
    const auto cfg = blobs_config(d, {{"method", "natural_mdl"}, {"epochs", 4}});
    ASSERT_EQ(run_cli("train --config " + cfg.string() + " --out " + (d / "full").string()).code, 0);
    ASSERT_EQ(run_cli("train --config " + cfg.string() + " --out " + (d / "part").string()).code, 0);
    auto r = run_cli("train --config " + cfg.string() + " --out " + (d / "part").string() + " --resume");
    ASSERT_EQ(r.code, 0);
    EXPECT_EQ(r.summary()["epochs"], 4);
    EXPECT_EQ(slurp(d / "full" / "history.jsonl"), slurp(d / "part" / "history.jsonl"));
    EXPECT_EQ(slurp(d / "full" / "checkpoint.json"), slurp(d / "part" / "checkpoint.json"));
}
