#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctr/attacks.hpp"
#include "ctr/data.hpp"
#include "ctr/model.hpp"

namespace ctr {

/// Top-1 accuracy in eval mode.
double accuracy(const Classifier& model, const Dataset& data);

struct CtCensus {
    double threshold = 0.0;
    /// N x (C - 1) wrong-category entries.
    std::size_t total_slots = 0;
    /// Wrong-category probabilities strictly below the threshold.
    std::size_t count_below = 0;
};

/// threshold in (0, 1].
CtCensus ct_census(const Classifier& model, const Dataset& data, double threshold);

struct Curve {
    std::string label;
    std::string x_name;
    std::string y_name;
    std::vector<double> x;
    std::vector<double> y;

    /// Equal lengths, x strictly increasing.
    void validate() const;
};

/// Census count per threshold; thresholds strictly increasing, each in (0, 1/(C-1)].
Curve ct_sweep(const Classifier& model, const Dataset& data, const std::vector<double>& thresholds);

/// Robust accuracy per epsilon (strictly increasing, from 0 allowed). The attack
/// generator is re-seeded from `seed` for every point so points are independent.
Curve robustness_curve(const Classifier& model, const Dataset& data, const AttackSpec& attack,
                       const std::vector<double>& eps, std::uint64_t seed);

// --- export -------------------------------------------------------------------

using Cell = std::variant<long long, double, std::string>;

/// Rectangular result set. Doubles are written with %.6f.
struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<Cell>> rows;

    void add_row(std::vector<Cell> row);
};

enum class ExportFormat { Json, Csv };

/// JSON: array of objects with keys in sorted order. CSV: header plus rows.
void export_table(const Table& table, const std::filesystem::path& path, ExportFormat format);
/// Deterministic JSON text: sorted keys, %.6f for non-integer numbers, 2-space indent, trailing newline.
std::string format_json(const nlohmann::json& j);
void export_json(const nlohmann::json& j, const std::filesystem::path& path);
/// Reads a CSV written by export_table (no quoting support needed for our outputs).
Table read_csv(const std::filesystem::path& path);

Table curve_table(const Curve& c);
Table census_table(const std::vector<CtCensus>& rows);
/// Per-example logits: index,label,logit_0..logit_{C-1}.
Table logits_table(const Classifier& model, const Dataset& data);

} // namespace ctr
