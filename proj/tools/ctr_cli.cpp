// Command-line front end.
//
//   ctr train         --config C --out DIR [--set k=v]... [--seed N] [--resume]
//   ctr attack        --config C --out DIR --checkpoint F [--set k=v]... [--seed N]
//   ctr analyze-ct    --config C --out DIR --checkpoint F [--thresholds a,b,...]
//   ctr curve         --config C --out DIR --checkpoint F
//   ctr export-logits --config C --out DIR --checkpoint F
//
// Exit codes: 0 ok, 2 usage or configuration error, 3 runtime failure.
// stdout carries exactly one JSON summary line; diagnostics go to stderr.

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ctr/analysis.hpp"
#include "ctr/attacks.hpp"
#include "ctr/config.hpp"
#include "ctr/errors.hpp"
#include "ctr/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

struct Options {
    std::string config;
    std::string out;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::string checkpoint;
    std::string thresholds;
    bool resume = false;
};

/// Thrown for problems the user can fix by changing the invocation.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void summary(const json& j) { std::cout << j.dump() << std::endl; }

ctr::RunConfig load_config(const Options& o) {
    std::vector<std::string> overrides = o.overrides;
    if (o.seed) overrides.push_back("seed=" + std::to_string(*o.seed));
    ctr::RunConfig c = ctr::parse_config(o.config, overrides);
    std::cerr << "ctr " << ctr::kLibraryVersion << "\nresolved config:\n" << ctr::format_json(c.resolved);
    return c;
}

ctr::Classifier load_checkpoint(const Options& o, const ctr::RunConfig& c) {
    if (o.checkpoint.empty()) throw UsageError("--checkpoint is required");
    if (!fs::exists(o.checkpoint)) throw UsageError("checkpoint not found: " + o.checkpoint);
    ctr::Classifier model = ctr::Classifier::load(o.checkpoint);
    if (model.classes() != c.model.classes || model.input_dim() != c.model.input_dim) {
        throw UsageError("checkpoint does not match the configured data (classes/input width)");
    }
    return model;
}

void prepare_out(const Options& o, const ctr::RunConfig& c) {
    fs::create_directories(o.out);
    ctr::export_json(c.resolved, fs::path(o.out) / "config.json");
}

json metrics_json(const ctr::RobustnessMetrics& m, const ctr::AttackSpec& a) {
    return json{{"attack", ctr::to_string(a.kind)},
                {"loss", ctr::to_string(a.loss)},
                {"epsilon", a.epsilon},
                {"steps", a.kind == ctr::AttackKind::Fgsm ? 1 : a.steps},
                {"n", m.n},
                {"clean_correct", m.clean_correct},
                {"robust_correct", m.robust_correct},
                {"flipped", m.flipped},
                {"natural_accuracy", m.natural_accuracy},
                {"robust_accuracy", m.robust_accuracy},
                {"asr", m.asr}};
}

json cmd_train(const Options& o) {
    const ctr::RunConfig c = load_config(o);
    auto [train, test] = ctr::load_datasets(c);
    prepare_out(o, c);
    ctr::TrainIo io;
    io.history = fs::path(o.out) / "history.jsonl";
    io.checkpoint = fs::path(o.out) / "checkpoint.json";
    io.state = fs::path(o.out) / "trainer_state.json";
    io.resume = o.resume;
    io.record_wall_time = c.record_wall_time;
    const ctr::TrainResult r = ctr::train(c.train, c.model, train, &test, io);
    json s = {{"command", "train"},
              {"status", "ok"},
              {"method", ctr::to_string(c.train.method)},
              {"epochs", r.history.size()},
              {"out", o.out}};
    if (!r.history.empty()) {
        s["final_train_loss"] = r.history.back().train_loss;
        s["final_nat_acc"] = r.history.back().nat_acc;
    }
    return s;
}

json cmd_attack(const Options& o) {
    const ctr::RunConfig c = load_config(o);
    const ctr::Classifier model = load_checkpoint(o, c);
    auto [train, test] = ctr::load_datasets(c);
    prepare_out(o, c);
    const fs::path out(o.out);

    if (!c.attack_grid) {
        ctr::Rng rng = ctr::make_rng(c.seed, ctr::Stream::AttackStart);
        const auto m = ctr::evaluate_robustness(model, test, c.attack, rng, c.attack_batch);
        ctr::export_json(metrics_json(m, c.attack), out / "attack_results.json");
        ctr::write_attack_csv(out / "attack_examples.csv", m.records);
        return {{"command", "attack"}, {"status", "ok"}, {"asr", m.asr}, {"robust_accuracy", m.robust_accuracy},
                {"out", o.out}};
    }

    json rows = json::array();
    ctr::Table table{{"attack", "loss", "epsilon", "asr", "robust_accuracy", "natural_accuracy"}, {}};
    for (auto kind : {ctr::AttackKind::Fgsm, ctr::AttackKind::Pgd, ctr::AttackKind::Apgd}) {
        for (auto loss : {ctr::LossKind::Ce, ctr::LossKind::Sce, ctr::LossKind::Kl, ctr::LossKind::Skl,
                          ctr::LossKind::Std}) {
            ctr::AttackSpec a = c.attack;
            a.kind = kind;
            a.loss = loss;
            if (kind == ctr::AttackKind::Apgd && a.steps < 2) a.steps = 2;
            a.validate(model.classes());
            ctr::Rng rng = ctr::make_rng(c.seed, ctr::Stream::AttackStart);
            const auto m = ctr::evaluate_robustness(model, test, a, rng, c.attack_batch);
            rows.push_back(metrics_json(m, a));
            table.add_row({ctr::to_string(kind), ctr::to_string(loss), a.epsilon, m.asr, m.robust_accuracy,
                           m.natural_accuracy});
            ctr::write_attack_csv(out / ("examples_" + ctr::to_string(kind) + "_" + ctr::to_string(loss) + ".csv"),
                                  m.records);
        }
    }
    ctr::export_json(rows, out / "attack_results.json");
    ctr::export_table(table, out / "attack_grid.csv", ctr::ExportFormat::Csv);
    return {{"command", "attack"}, {"status", "ok"}, {"rows", rows.size()}, {"out", o.out}};
}

std::vector<double> parse_thresholds(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError("--thresholds: cannot parse '" + item + "'");
        }
    }
    return out;
}

json cmd_analyze_ct(const Options& o) {
    const ctr::RunConfig c = load_config(o);
    std::vector<double> thresholds = o.thresholds.empty() ? c.analysis.thresholds : parse_thresholds(o.thresholds);
    for (double t : thresholds)
        if (!(t > 0.0 && t <= 1.0)) throw UsageError("thresholds must lie in (0, 1]");
    const ctr::Classifier model = load_checkpoint(o, c);
    auto [train, test] = ctr::load_datasets(c);
    const double bound = 1.0 / static_cast<double>(model.classes() - 1);
    if (thresholds.empty()) thresholds = {bound};
    prepare_out(o, c);

    std::vector<ctr::CtCensus> census;
    for (double t : thresholds) census.push_back(ctr::ct_census(model, test, t));
    ctr::export_table(ctr::census_table(census), fs::path(o.out) / "ct_census.csv", ctr::ExportFormat::Csv);

    // The sweep covers the thresholds at or below the bound, sorted and de-duplicated.
    std::vector<double> sweep;
    for (double t : thresholds)
        if (t <= bound) sweep.push_back(t);
    std::sort(sweep.begin(), sweep.end());
    sweep.erase(std::unique(sweep.begin(), sweep.end()), sweep.end());
    const ctr::Curve curve = ctr::ct_sweep(model, test, sweep);
    ctr::export_table(ctr::curve_table(curve), fs::path(o.out) / "ct_sweep.csv", ctr::ExportFormat::Csv);
    return {{"command", "analyze-ct"}, {"status", "ok"}, {"census_rows", census.size()},
            {"sweep_points", curve.x.size()}, {"out", o.out}};
}

json cmd_curve(const Options& o) {
    const ctr::RunConfig c = load_config(o);
    const ctr::Classifier model = load_checkpoint(o, c);
    auto [train, test] = ctr::load_datasets(c);
    ctr::AttackSpec a = c.attack;
    a.kind = c.analysis.curve_attack;
    a.loss = c.analysis.curve_loss;
    a.steps = c.analysis.curve_steps;
    if (a.kind == ctr::AttackKind::Apgd && a.steps < 2) throw UsageError("analysis.curve_steps must be >= 2 for apgd");
    prepare_out(o, c);
    const ctr::Curve curve = ctr::robustness_curve(model, test, a, c.analysis.eps, c.seed);
    const ctr::Table t = ctr::curve_table(curve);
    ctr::export_table(t, fs::path(o.out) / "curve.csv", ctr::ExportFormat::Csv);
    ctr::export_table(t, fs::path(o.out) / "curve.json", ctr::ExportFormat::Json);
    return {{"command", "curve"}, {"status", "ok"}, {"points", curve.x.size()}, {"out", o.out}};
}

json cmd_export_logits(const Options& o) {
    const ctr::RunConfig c = load_config(o);
    const ctr::Classifier model = load_checkpoint(o, c);
    auto [train, test] = ctr::load_datasets(c);
    prepare_out(o, c);
    ctr::export_table(ctr::logits_table(model, test), fs::path(o.out) / "logits.csv", ctr::ExportFormat::Csv);
    return {{"command", "export-logits"}, {"status", "ok"}, {"rows", test.size()}, {"out", o.out}};
}

json error_summary(const std::string& command, int code, const std::string& message, const std::string& key = {}) {
    json j = {{"command", command}, {"status", "error"}, {"exit_code", code}, {"error", message}};
    if (!key.empty()) j["key"] = key;
    return j;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Confidence-threshold-reduction training, attacks and analysis"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(ctr::kLibraryVersion));
    Options o;

    auto common = [&o](CLI::App* sub, bool needs_checkpoint) {
        sub->add_option("--config", o.config, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", o.out, "output directory")->required();
        sub->add_option("--set", o.overrides, "override a config key: key=value (repeatable)");
        sub->add_option("--seed", o.seed, "override the run seed");
        if (needs_checkpoint) sub->add_option("--checkpoint", o.checkpoint, "model checkpoint (JSON)")->required();
    };
    CLI::App* train = app.add_subcommand("train", "train a model");
    common(train, false);
    train->add_flag("--resume", o.resume, "continue from the trainer state in --out");
    CLI::App* attack = app.add_subcommand("attack", "attack a checkpoint on the test split");
    common(attack, true);
    CLI::App* analyze = app.add_subcommand("analyze-ct", "confidence-threshold census and sweep");
    common(analyze, true);
    analyze->add_option("--thresholds", o.thresholds, "comma-separated thresholds");
    CLI::App* curve = app.add_subcommand("curve", "robust accuracy over the configured epsilons");
    common(curve, true);
    CLI::App* logits = app.add_subcommand("export-logits", "per-example logits on the test split");
    common(logits, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        summary(error_summary("", kExitUsage, e.what()));
        return kExitUsage;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        json s;
        if (command == "train") s = cmd_train(o);
        else if (command == "attack") s = cmd_attack(o);
        else if (command == "analyze-ct") s = cmd_analyze_ct(o);
        else if (command == "curve") s = cmd_curve(o);
        else s = cmd_export_logits(o);
        s["version"] = ctr::kLibraryVersion;
        summary(s);
        return kExitOk;
    } catch (const ctr::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        summary(error_summary(command, kExitUsage, e.what(), e.key()));
        return kExitUsage;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        summary(error_summary(command, kExitUsage, e.what()));
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        summary(error_summary(command, kExitRuntime, e.what()));
        return kExitRuntime;
    }
}
