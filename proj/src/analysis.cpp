#include "ctr/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ctr/errors.hpp"
#include "ctr/training.hpp"

namespace ctr {

namespace {

std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

// Integers, then decimals, then plain text.
Cell parse_cell(const std::string& f) {
    const char* first = f.data();
    const char* last = f.data() + f.size();
    long long i = 0;
    auto ri = std::from_chars(first, last, i);
    if (!f.empty() && ri.ec == std::errc() && ri.ptr == last) return i;
    double d = 0.0;
    auto rd = std::from_chars(first, last, d);
    if (!f.empty() && rd.ec == std::errc() && rd.ptr == last) return d;
    return f;
}

std::string cell_text(const Cell& c) {
    if (const auto* i = std::get_if<long long>(&c)) return std::to_string(*i);
    if (const auto* d = std::get_if<double>(&c)) return fixed6(*d);
    return std::get<std::string>(c);
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

void format_into(const nlohmann::json& j, std::string& out, int indent) {
    const std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
    const std::string inner(static_cast<std::size_t>(indent + 1) * 2, ' ');
    switch (j.type()) {
    case nlohmann::json::value_t::object: {
        if (j.empty()) {
            out += "{}";
            return;
        }
        out += "{\n";
        bool first = true;
        // nlohmann's default object type is an ordered std::map, so iteration is sorted.
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (!first) out += ",\n";
            first = false;
            out += inner + nlohmann::json(it.key()).dump() + ": ";
            format_into(it.value(), out, indent + 1);
        }
        out += "\n" + pad + "}";
        return;
    }
    case nlohmann::json::value_t::array: {
        if (j.empty()) {
            out += "[]";
            return;
        }
        out += "[\n";
        for (std::size_t i = 0; i < j.size(); ++i) {
            if (i) out += ",\n";
            out += inner;
            format_into(j[i], out, indent + 1);
        }
        out += "\n" + pad + "]";
        return;
    }
    case nlohmann::json::value_t::number_float: {
        const double v = j.get<double>();
        if (!std::isfinite(v)) throw NumericError("export: non-finite value");
        out += fixed6(v);
        return;
    }
    default: out += j.dump();
    }
}

} // namespace

double accuracy(const Classifier& model, const Dataset& data) { return eval_accuracy(model, data); }

CtCensus ct_census(const Classifier& model, const Dataset& data, double threshold) {
    if (!(threshold > 0.0 && threshold <= 1.0)) throw ParameterError("ct_census: threshold must be in (0, 1]");
    CtCensus c;
    c.threshold = threshold;
    const std::size_t classes = model.classes();
    c.total_slots = data.size() * (classes - 1);
    constexpr std::size_t kChunk = 500;
    for (std::size_t begin = 0; begin < data.size(); begin += kChunk) {
        const std::size_t count = std::min(kChunk, data.size() - begin);
        const Dataset chunk = data.slice(begin, count);
        Tensor probs = softmax(model.forward(chunk.all_inputs(), Mode::Eval, nullptr, ParamUse::Frozen));
        auto v = probs.values();
        for (std::size_t i = 0; i < count; ++i)
            for (std::size_t k = 0; k < classes; ++k)
                if (static_cast<int>(k) != chunk.labels[i] && v[i * classes + k] < threshold) ++c.count_below;
    }
    return c;
}

void Curve::validate() const {
    if (x.size() != y.size()) throw DimensionError("curve: x and y lengths differ");
    for (std::size_t i = 1; i < x.size(); ++i)
        if (!(x[i] > x[i - 1])) throw ParameterError("curve: x must be strictly increasing");
}

Curve ct_sweep(const Classifier& model, const Dataset& data, const std::vector<double>& thresholds) {
    const double bound = 1.0 / static_cast<double>(model.classes() - 1);
    Curve c{"ct_sweep", "threshold", "count_below", thresholds, {}};
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        const double t = thresholds[i];
        if (!(t > 0.0 && t <= bound * (1.0 + 1e-12))) {
            throw ParameterError("ct_sweep: thresholds must lie in (0, 1/(C-1)]");
        }
        if (i > 0 && !(t > thresholds[i - 1])) throw ParameterError("ct_sweep: thresholds must increase");
    }
    // One pass: sort wrong-category probabilities, then count below each threshold.
    std::vector<double> wrong;
    wrong.reserve(data.size() * (model.classes() - 1));
    const std::size_t classes = model.classes();
    constexpr std::size_t kChunk = 500;
    for (std::size_t begin = 0; begin < data.size(); begin += kChunk) {
        const std::size_t count = std::min(kChunk, data.size() - begin);
        const Dataset chunk = data.slice(begin, count);
        Tensor probs = softmax(model.forward(chunk.all_inputs(), Mode::Eval, nullptr, ParamUse::Frozen));
        auto v = probs.values();
        for (std::size_t i = 0; i < count; ++i)
            for (std::size_t k = 0; k < classes; ++k)
                if (static_cast<int>(k) != chunk.labels[i]) wrong.push_back(v[i * classes + k]);
    }
    std::sort(wrong.begin(), wrong.end());
    for (double t : thresholds) {
        const auto below = std::lower_bound(wrong.begin(), wrong.end(), t) - wrong.begin();
        c.y.push_back(static_cast<double>(below));
    }
    return c;
}

Curve robustness_curve(const Classifier& model, const Dataset& data, const AttackSpec& attack,
                       const std::vector<double>& eps, std::uint64_t seed) {
    Curve c{to_string(attack.kind) + "_" + to_string(attack.loss), "epsilon", "robust_accuracy", eps, {}};
    for (std::size_t i = 0; i < eps.size(); ++i) {
        if (!(eps[i] >= 0.0)) throw ParameterError("robustness_curve: epsilon must be >= 0");
        if (i > 0 && !(eps[i] > eps[i - 1])) throw ParameterError("robustness_curve: epsilons must increase");
    }
    for (double e : eps) {
        if (e == 0.0) {
            c.y.push_back(accuracy(model, data));
            continue;
        }
        AttackSpec a = attack;
        const double ratio = attack.epsilon > 0.0 ? attack.alpha / attack.epsilon : 0.25;
        a.epsilon = e;
        a.alpha = ratio * e;
        Rng rng = make_rng(seed, Stream::AttackStart);
        c.y.push_back(evaluate_robustness(model, data, a, rng).robust_accuracy);
    }
    return c;
}

void Table::add_row(std::vector<Cell> row) {
    if (row.size() != columns.size()) throw DimensionError("table: row width does not match columns");
    rows.push_back(std::move(row));
}

std::string format_json(const nlohmann::json& j) {
    std::string out;
    format_into(j, out, 0);
    out += "\n";
    return out;
}

void export_json(const nlohmann::json& j, const std::filesystem::path& path) { write_file(path, format_json(j)); }

void export_table(const Table& table, const std::filesystem::path& path, ExportFormat format) {
    if (format == ExportFormat::Json) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& row : table.rows) {
            nlohmann::json obj = nlohmann::json::object();
            for (std::size_t i = 0; i < row.size(); ++i)
                std::visit([&](const auto& v) { obj[table.columns[i]] = v; }, row[i]);
            arr.push_back(std::move(obj));
        }
        export_json(arr, path);
        return;
    }
    std::string text;
    for (std::size_t i = 0; i < table.columns.size(); ++i) text += (i ? "," : "") + table.columns[i];
    text += "\n";
    for (const auto& row : table.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) text += (i ? "," : "") + cell_text(row[i]);
        text += "\n";
    }
    write_file(path, text);
}

Table read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    auto split = [](const std::string& line) {
        std::vector<std::string> out;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) out.push_back(field);
        if (!line.empty() && line.back() == ',') out.emplace_back();
        return out;
    };
    Table t;
    std::string line;
    if (!std::getline(in, line)) return t;
    t.columns = split(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<Cell> row;
        for (auto& f : split(line)) row.push_back(parse_cell(f));
        if (row.size() != t.columns.size()) throw FormatError("csv: ragged row", static_cast<std::uint64_t>(in.tellg()));
        t.rows.push_back(std::move(row));
    }
    return t;
}

Table curve_table(const Curve& c) {
    c.validate();
    Table t{{c.x_name, c.y_name}, {}};
    for (std::size_t i = 0; i < c.x.size(); ++i) t.add_row({c.x[i], c.y[i]});
    return t;
}

Table census_table(const std::vector<CtCensus>& rows) {
    Table t{{"threshold", "total_slots", "count_below"}, {}};
    for (const auto& r : rows)
        t.add_row({r.threshold, static_cast<long long>(r.total_slots), static_cast<long long>(r.count_below)});
    return t;
}

Table logits_table(const Classifier& model, const Dataset& data) {
    Table t{{"index", "label"}, {}};
    for (std::size_t k = 0; k < model.classes(); ++k) t.columns.push_back("logit_" + std::to_string(k));
    constexpr std::size_t kChunk = 500;
    for (std::size_t begin = 0; begin < data.size(); begin += kChunk) {
        const std::size_t count = std::min(kChunk, data.size() - begin);
        const Dataset chunk = data.slice(begin, count);
        Tensor logits = model.forward(chunk.all_inputs(), Mode::Eval, nullptr, ParamUse::Frozen);
        auto v = logits.values();
        for (std::size_t i = 0; i < count; ++i) {
            std::vector<Cell> row{static_cast<long long>(begin + i), static_cast<long long>(chunk.labels[i])};
            for (std::size_t k = 0; k < model.classes(); ++k) row.emplace_back(v[i * model.classes() + k]);
            t.add_row(std::move(row));
        }
    }
    return t;
}

} // namespace ctr
