#include "ctr/config.hpp"

#include <fstream>

#include "ctr/errors.hpp"

#ifndef CTR_DATA_DIR
#define CTR_DATA_DIR "data"
#endif

namespace ctr {

namespace {

using nlohmann::json;

std::string join(const std::string& prefix, const std::string& key) {
    return prefix.empty() ? key : prefix + "." + key;
}

bool is_integer(const json& v) { return v.is_number_integer() || v.is_number_unsigned(); }

void check_type(const json& def, const json& val, const std::string& key) {
    if (def.is_boolean() && !val.is_boolean()) throw ConfigError(key, "expected a boolean");
    if (is_integer(def) && !is_integer(val)) throw ConfigError(key, "expected an integer");
    if (def.is_number_float() && !val.is_number()) throw ConfigError(key, "expected a number");
    if (def.is_string()) {
        // "auto" defaults may be replaced by an explicit numeric list.
        const bool auto_list = def == "auto" && val.is_array();
        if (!val.is_string() && !auto_list) throw ConfigError(key, "expected a string");
        if (auto_list)
            for (const auto& e : val)
                if (!e.is_number()) throw ConfigError(key, "expected a list of numbers");
    }
    if (def.is_array()) {
        if (!val.is_array()) throw ConfigError(key, "expected a list");
        for (const auto& e : val)
            if (!e.is_number()) throw ConfigError(key, "expected a list of numbers");
    }
}

void merge(json& base, const json& user, const std::string& prefix) {
    if (!user.is_object()) throw ConfigError(prefix, "expected an object");
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string key = join(prefix, it.key());
        if (!base.contains(it.key())) throw ConfigError(key, "unknown key");
        json& slot = base[it.key()];
        if (slot.is_object()) {
            merge(slot, it.value(), key);
        } else {
            check_type(slot, it.value(), key);
            slot = it.value();
        }
    }
}

template <class T>
T get(const json& doc, const std::string& dotted) {
    const json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = dotted.find('.', start);
        node = &node->at(dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start));
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    try {
        return node->get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(dotted, e.what());
    }
}

void require(bool ok, const std::string& key, const std::string& what) {
    if (!ok) throw ConfigError(key, what);
}

template <class F>
auto parsed(const std::string& key, F&& f) {
    try {
        return f();
    } catch (const ParameterError& e) {
        throw ConfigError(key, e.what());
    }
}

} // namespace

json default_config_json() {
    return json{
        {"schema_version", kSchemaVersion},
        {"seed", 0},
        {"data",
         {{"source", "mnist"},
          {"dir", std::string(CTR_DATA_DIR) + "/mnist"},
          {"train_limit", 2000},
          {"test_limit", 1000},
          {"blobs", {{"classes", 5}, {"dim", 16}, {"n_per_class", 100}, {"test_per_class", 50}, {"spread", 0.08}}}}},
        {"model",
         {{"arch", "mlp"},
          {"hidden", {256, 128}},
          {"dropout", 0.5},
          {"global_dropout", false},
          {"conv_channels", {8, 16}}}},
        {"train",
         {{"method", "natural_ce"},
          {"gamma", 0.0},
          {"beta", 6.0},
          {"k", 4},
          {"rho", 1.0},
          {"eta", 100.0},
          {"diversity", "cosine"},
          {"epochs", 10},
          {"batch_size", 64},
          {"lr",
           {{"schedule", "multistep"},
            {"init", 0.1},
            {"min", 0.0},
            {"max", 0.1},
            {"milestones", "auto"},
            {"decay", 0.1},
            {"warmup", false},
            {"warmup_epochs", 0}}},
          {"momentum", 0.9},
          {"weight_decay", 5e-4},
          {"epsilon", 0.1},
          {"inner_steps", 7},
          {"inner_alpha", 0.025},
          {"fast_alpha", 0.1},
          {"replays", 8},
          {"trades_sigma", 1e-3},
          {"robust_eval", false},
          {"record_wall_time", false}}},
        {"attack",
         {{"kind", "pgd"},
          {"epsilon", 0.1},
          {"alpha", 0.025},
          {"steps", 20},
          {"loss", "ce"},
          {"gamma", 1.0},
          {"momentum", 1.0},
          {"random_start", true},
          {"kl_start_sigma", 1e-3},
          {"grid", false},
          {"batch_size", 250},
          {"apgd", {{"alpha", 0.75}, {"rho", 0.75}, {"first_check", 0.22}, {"decay", 0.03}, {"min_phase", 0.06}}}}},
        {"analysis",
         {{"thresholds", json::array()},
          {"eps", {0.0, 0.05, 0.1, 0.15, 0.2}},
          {"curve_attack", "fgsm"},
          {"curve_loss", "ce"},
          {"curve_steps", 20}}},
    };
}

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError(assignment, "override must look like key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::parse_error&) {
        value = text;
    }
    json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError(key, "empty key segment");
        if (!node->is_object()) throw ConfigError(key, "cannot descend into a non-object");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            break;
        }
        if (!node->contains(part)) (*node)[part] = json::object();
        node = &(*node)[part];
        start = dot + 1;
    }
}

RunConfig config_from_json(const json& user_in, const std::vector<std::string>& overrides) {
    json user = user_in;
    if (!user.is_object()) throw ConfigError("", "config must be a JSON object");
    for (const auto& o : overrides) apply_override(user, o);
    if (!user.contains("schema_version")) throw ConfigError("schema_version", "missing (mandatory)");
    if (!is_integer(user["schema_version"]) || user["schema_version"].get<long long>() != kSchemaVersion) {
        throw ConfigError("schema_version", "unsupported version (expected " + std::to_string(kSchemaVersion) + ")");
    }

    json doc = default_config_json();
    merge(doc, user, "");

    RunConfig c;
    require(get<long long>(doc, "seed") >= 0, "seed", "must be >= 0");
    c.seed = get<std::uint64_t>(doc, "seed");

    // data
    c.data.source = get<std::string>(doc, "data.source");
    require(c.data.source == "mnist" || c.data.source == "blobs", "data.source", "must be \"mnist\" or \"blobs\"");
    c.data.dir = get<std::string>(doc, "data.dir");
    c.data.train_limit = get<long long>(doc, "data.train_limit");
    c.data.test_limit = get<long long>(doc, "data.test_limit");
    require(c.data.train_limit >= -1, "data.train_limit", "must be >= -1");
    require(c.data.test_limit >= -1, "data.test_limit", "must be >= -1");
    require(get<long long>(doc, "data.blobs.classes") >= 3, "data.blobs.classes", "must be >= 3");
    require(get<long long>(doc, "data.blobs.dim") >= 2, "data.blobs.dim", "must be >= 2");
    require(get<long long>(doc, "data.blobs.n_per_class") >= 1, "data.blobs.n_per_class", "must be >= 1");
    require(get<long long>(doc, "data.blobs.test_per_class") >= 1, "data.blobs.test_per_class", "must be >= 1");
    c.data.blob_classes = get<std::size_t>(doc, "data.blobs.classes");
    c.data.blob_dim = get<std::size_t>(doc, "data.blobs.dim");
    c.data.blob_per_class = get<std::size_t>(doc, "data.blobs.n_per_class");
    c.data.blob_test_per_class = get<std::size_t>(doc, "data.blobs.test_per_class");
    c.data.blob_spread = get<double>(doc, "data.blobs.spread");
    require(c.data.blob_spread >= 0.0, "data.blobs.spread", "must be >= 0");

    const bool mnist = c.data.source == "mnist";
    const std::size_t classes = mnist ? 10 : c.data.blob_classes;

    // model
    const auto arch = get<std::string>(doc, "model.arch");
    require(arch == "mlp" || arch == "cnn", "model.arch", "must be \"mlp\" or \"cnn\"");
    require(arch == "mlp" || mnist, "model.arch", "cnn needs 28x28 MNIST inputs");
    c.model.arch = arch == "mlp" ? Arch::Mlp : Arch::Cnn;
    c.model.classes = classes;
    c.model.input_dim = mnist ? 784 : c.data.blob_dim;
    for (const auto& h : doc["model"]["hidden"]) require(is_integer(h) && h.get<long long>() >= 1, "model.hidden", "widths must be positive integers");
    for (const auto& h : doc["model"]["conv_channels"]) require(is_integer(h) && h.get<long long>() >= 1, "model.conv_channels", "must be positive integers");
    c.model.hidden = get<std::vector<std::size_t>>(doc, "model.hidden");
    c.model.conv_channels = get<std::vector<std::size_t>>(doc, "model.conv_channels");
    c.model.dropout = get<double>(doc, "model.dropout");
    require(c.model.dropout >= 0.0 && c.model.dropout < 1.0, "model.dropout", "must be in [0, 1)");
    c.model.global_dropout = get<bool>(doc, "model.global_dropout");
    parsed("model", [&] { c.model.validate(); return 0; });

    // train
    TrainSpec& t = c.train;
    t.method = parsed("train.method", [&] { return parse_train_method(get<std::string>(doc, "train.method")); });
    t.gamma = get<double>(doc, "train.gamma");
    require(t.gamma >= 0.0, "train.gamma", "must be >= 0");
    t.beta = get<double>(doc, "train.beta");
    require(t.beta >= 0.0, "train.beta", "must be >= 0");
    require(get<long long>(doc, "train.k") >= 1, "train.k", "must be >= 1");
    t.k = get<std::size_t>(doc, "train.k");
    require(t.k >= 2 || t.method != TrainMethod::NaturalMDL, "train.k", "must be >= 2 for natural_mdl");
    t.rho = get<double>(doc, "train.rho");
    require(t.rho >= 0.0, "train.rho", "must be >= 0");
    t.eta = get<double>(doc, "train.eta");
    require(t.eta > 0.0 && t.eta <= 100.0, "train.eta", "must be in (0, 100]");
    t.diversity = parsed("train.diversity", [&] { return parse_diversity(get<std::string>(doc, "train.diversity")); });
    require(get<long long>(doc, "train.epochs") >= 1, "train.epochs", "must be >= 1");
    t.epochs = get<std::size_t>(doc, "train.epochs");
    require(get<long long>(doc, "train.batch_size") >= 1, "train.batch_size", "must be >= 1");
    t.batch_size = get<std::size_t>(doc, "train.batch_size");
    t.schedule.kind = parsed("train.lr.schedule", [&] { return parse_schedule_kind(get<std::string>(doc, "train.lr.schedule")); });
    t.schedule.total_epochs = t.epochs;
    t.schedule.init_lr = get<double>(doc, "train.lr.init");
    t.schedule.min_lr = get<double>(doc, "train.lr.min");
    t.schedule.max_lr = get<double>(doc, "train.lr.max");
    t.schedule.decay = get<double>(doc, "train.lr.decay");
    const json& ms = doc["train"]["lr"]["milestones"];
    if (ms.is_string()) {
        require(ms == "auto", "train.lr.milestones", "must be \"auto\" or a list");
        t.schedule.milestones = is_natural(t.method) ? kNaturalMilestones : kAdversarialMilestones;
    } else {
        t.schedule.milestones = ms.get<std::vector<double>>();
    }
    t.schedule.warmup = get<bool>(doc, "train.lr.warmup");
    require(get<long long>(doc, "train.lr.warmup_epochs") >= 0, "train.lr.warmup_epochs", "must be >= 0");
    t.schedule.warmup_epochs = get<std::size_t>(doc, "train.lr.warmup_epochs");
    parsed("train.lr", [&] { t.schedule.validate(); return 0; });
    t.momentum = get<double>(doc, "train.momentum");
    t.weight_decay = get<double>(doc, "train.weight_decay");
    t.seed = c.seed;
    t.epsilon = get<double>(doc, "train.epsilon");
    require(t.epsilon >= 0.0 && t.epsilon <= 1.0, "train.epsilon", "must be in [0, 1]");
    require(get<long long>(doc, "train.inner_steps") >= 1, "train.inner_steps", "must be >= 1");
    t.inner_steps = get<std::size_t>(doc, "train.inner_steps");
    t.inner_alpha = get<double>(doc, "train.inner_alpha");
    t.fast_alpha = get<double>(doc, "train.fast_alpha");
    require(get<long long>(doc, "train.replays") >= 1, "train.replays", "must be >= 1");
    t.replays = get<std::size_t>(doc, "train.replays");
    t.trades_sigma = get<double>(doc, "train.trades_sigma");
    c.record_wall_time = get<bool>(doc, "train.record_wall_time");

    // attack
    AttackSpec& a = c.attack;
    a.kind = parsed("attack.kind", [&] { return parse_attack_kind(get<std::string>(doc, "attack.kind")); });
    a.epsilon = get<double>(doc, "attack.epsilon");
    a.alpha = get<double>(doc, "attack.alpha");
    require(get<long long>(doc, "attack.steps") >= 1, "attack.steps", "must be >= 1");
    a.steps = get<std::size_t>(doc, "attack.steps");
    a.loss = parsed("attack.loss", [&] { return parse_loss_kind(get<std::string>(doc, "attack.loss")); });
    a.gamma = get<double>(doc, "attack.gamma");
    a.momentum = get<double>(doc, "attack.momentum");
    a.random_start = get<bool>(doc, "attack.random_start");
    a.kl_start_sigma = get<double>(doc, "attack.kl_start_sigma");
    a.apgd_alpha = get<double>(doc, "attack.apgd.alpha");
    a.apgd_rho = get<double>(doc, "attack.apgd.rho");
    a.apgd_first_check = get<double>(doc, "attack.apgd.first_check");
    a.apgd_decay = get<double>(doc, "attack.apgd.decay");
    a.apgd_min_phase = get<double>(doc, "attack.apgd.min_phase");
    c.attack_grid = get<bool>(doc, "attack.grid");
    require(get<long long>(doc, "attack.batch_size") >= 1, "attack.batch_size", "must be >= 1");
    c.attack_batch = get<std::size_t>(doc, "attack.batch_size");
    if (!c.attack_grid) parsed("attack", [&] { a.validate(classes); return 0; });
    else require(classes >= 3, "attack.grid", "the loss grid includes STD-family losses and needs >= 3 classes");

    if (get<bool>(doc, "train.robust_eval")) t.robust_eval = a;
    parsed("train", [&] { t.validate(classes); return 0; });

    // analysis
    c.analysis.thresholds = get<std::vector<double>>(doc, "analysis.thresholds");
    for (double th : c.analysis.thresholds) require(th > 0.0 && th <= 1.0, "analysis.thresholds", "must lie in (0, 1]");
    c.analysis.eps = get<std::vector<double>>(doc, "analysis.eps");
    for (std::size_t i = 0; i < c.analysis.eps.size(); ++i) {
        require(c.analysis.eps[i] >= 0.0 && c.analysis.eps[i] <= 1.0, "analysis.eps", "must lie in [0, 1]");
        require(i == 0 || c.analysis.eps[i] > c.analysis.eps[i - 1], "analysis.eps", "must be strictly increasing");
    }
    c.analysis.curve_attack = parsed("analysis.curve_attack", [&] { return parse_attack_kind(get<std::string>(doc, "analysis.curve_attack")); });
    c.analysis.curve_loss = parsed("analysis.curve_loss", [&] { return parse_loss_kind(get<std::string>(doc, "analysis.curve_loss")); });
    require(get<long long>(doc, "analysis.curve_steps") >= 1, "analysis.curve_steps", "must be >= 1");
    c.analysis.curve_steps = get<std::size_t>(doc, "analysis.curve_steps");
    require(!needs_three_classes(c.analysis.curve_loss) || classes >= 3, "analysis.curve_loss", "needs >= 3 classes");

    c.resolved = doc;
    return c;
}

RunConfig parse_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot open config " + path.string());
    json user;
    try {
        user = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("", std::string("invalid JSON: ") + e.what());
    }
    return config_from_json(user, overrides);
}

std::pair<Dataset, Dataset> load_datasets(const RunConfig& c) {
    if (c.data.source == "blobs") {
        Dataset train = synth_blobs(c.seed, c.data.blob_per_class, c.data.blob_classes, c.data.blob_dim,
                                    c.data.blob_spread);
        Dataset test = synth_blobs(c.seed + 0x9e3779b9ULL, c.data.blob_test_per_class, c.data.blob_classes,
                                   c.data.blob_dim, c.data.blob_spread);
        train.split = "train";
        test.split = "test";
        return {std::move(train), std::move(test)};
    }
    auto limit = [](long long l) { return l < 0 ? std::nullopt : std::optional<std::size_t>(static_cast<std::size_t>(l)); };
    Dataset train = load_idx(c.data.dir / "train-images-idx3-ubyte", c.data.dir / "train-labels-idx1-ubyte",
                             limit(c.data.train_limit));
    Dataset test = load_idx(c.data.dir / "test-images-idx3-ubyte", c.data.dir / "test-labels-idx1-ubyte",
                            limit(c.data.test_limit));
    train.split = "train";
    test.split = "test";
    return {std::move(train), std::move(test)};
}

} // namespace ctr
