#pragma once

// Run configuration: one JSON document with a mandatory schema_version.
// Every key has a default (see default_config_json); unknown keys and
// wrongly typed values are rejected with a ConfigError naming the dotted key.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctr/attacks.hpp"
#include "ctr/data.hpp"
#include "ctr/model.hpp"
#include "ctr/training.hpp"

namespace ctr {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kLibraryVersion = "0.1.0";

struct DataConfig {
    std::string source = "mnist";  ///< "mnist" or "blobs"
    std::filesystem::path dir;
    long long train_limit = 2000;  ///< -1 keeps every example
    long long test_limit = 1000;
    std::size_t blob_classes = 5;
    std::size_t blob_dim = 16;
    std::size_t blob_per_class = 100;
    std::size_t blob_test_per_class = 50;
    double blob_spread = 0.08;
};

struct AnalysisConfig {
    std::vector<double> thresholds;  ///< empty means {1/(C-1)}
    std::vector<double> eps;
    AttackKind curve_attack = AttackKind::Fgsm;
    LossKind curve_loss = LossKind::Ce;
    std::size_t curve_steps = 20;
};

struct RunConfig {
    std::uint64_t seed = 0;
    DataConfig data;
    ModelConfig model;
    TrainSpec train;
    bool record_wall_time = false;
    AttackSpec attack;
    bool attack_grid = false;
    std::size_t attack_batch = 250;
    AnalysisConfig analysis;
    /// The merged document (defaults + file + overrides); re-parsing it reproduces this config.
    nlohmann::json resolved;
};

nlohmann::json default_config_json();

/// Applies "dotted.key=value"; the value is parsed as JSON, falling back to a plain string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

RunConfig config_from_json(const nlohmann::json& user, const std::vector<std::string>& overrides = {});
RunConfig parse_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Train and test splits described by the data section. Model input width and
/// class count in the returned config are set from the data.
std::pair<Dataset, Dataset> load_datasets(const RunConfig& config);

} // namespace ctr
