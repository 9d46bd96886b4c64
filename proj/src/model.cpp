#include "ctr/model.hpp"

#include <cmath>
#include <fstream>

#include "ctr/errors.hpp"

namespace ctr {

namespace {

constexpr const char* kCheckpointFormat = "ctr-checkpoint";
constexpr int kCheckpointVersion = 1;

Tensor he_uniform(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng* rng) {
    std::vector<double> w(rows * cols, 0.0);
    if (rng) {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (double& v : w) v = u(*rng);
    }
    return Tensor::matrix(rows, cols, std::move(w), true);
}

Layer dense(std::size_t in, std::size_t out, Rng* rng) {
    Layer l;
    l.kind = Layer::Kind::Dense;
    l.weight = he_uniform(in, out, in, rng);
    l.bias = Tensor::zeros({1, out}, true);
    return l;
}

Layer conv(const Conv2dGeometry& g, Rng* rng) {
    Layer l;
    l.kind = Layer::Kind::Conv;
    l.geometry = g;
    const std::size_t fan_in = g.in_channels * g.kernel * g.kernel;
    l.weight = he_uniform(g.out_channels, fan_in, fan_in, rng);
    l.bias = Tensor::zeros({1, g.out_channels}, true);
    return l;
}

Tensor copy_tensor(const Tensor& t) {
    auto v = t.values();
    return Tensor::from(t.shape(), std::vector<double>(v.begin(), v.end()), t.requires_grad());
}

} // namespace

void ModelConfig::validate() const {
    if (classes < 2) throw ParameterError("model: classes must be >= 2");
    if (input_dim == 0) throw ParameterError("model: input_dim must be positive");
    if (hidden.empty()) throw ParameterError("model: at least one hidden layer is required");
    for (auto h : hidden)
        if (h == 0) throw ParameterError("model: hidden widths must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ParameterError("model: dropout must be in [0, 1)");
    if (arch == Arch::Cnn) {
        if (conv_channels.size() != 2) throw ParameterError("model: cnn needs exactly two conv_channels");
        if (image_channels * image_height * image_width != input_dim) {
            throw ParameterError("model: image geometry does not match input_dim");
        }
    }
}

Tensor Layer::apply(const Tensor& x, ParamUse use) const {
    const Tensor w = use == ParamUse::Frozen ? weight.detach() : weight;
    const Tensor b = use == ParamUse::Frozen ? bias.detach() : bias;
    if (kind == Kind::Conv) return conv2d(x, w, b, geometry);
    return add_row(matmul(x, w), b);
}

SubNetOutputs MultiSampleOutput::example(std::size_t row, int label) const {
    SubNetOutputs out;
    for (const auto& p : probs) {
        ProbVector pv;
        const std::size_t c = p.cols();
        auto v = p.values().subspan(row * c, c);
        pv.probs.assign(v.begin(), v.end());
        pv.label = label;
        out.probs.push_back(std::move(pv));
    }
    return out;
}

Classifier::Classifier(ModelConfig config) : config_(std::move(config)) { config_.validate(); }

Classifier::Classifier(ModelConfig config, Rng& init_rng) : Classifier(std::move(config)) { build(&init_rng); }

Classifier Classifier::zeros(ModelConfig config) {
    Classifier c(std::move(config));
    c.build(nullptr);
    return c;
}

Classifier::Classifier(const Classifier& other) : config_(other.config_), trunk_(other.trunk_), head_(other.head_) {
    for (auto* layers : {&trunk_, &head_}) {
        for (auto& l : *layers) {
            l.weight = copy_tensor(l.weight);
            l.bias = copy_tensor(l.bias);
        }
    }
    rebind_params();
}

Classifier& Classifier::operator=(const Classifier& other) {
    if (this != &other) {
        Classifier tmp(other);
        *this = std::move(tmp);
    }
    return *this;
}

void Classifier::build(Rng* rng) {
    trunk_.clear();
    head_.clear();
    const std::size_t feat = config_.hidden.back();
    if (config_.arch == Arch::Mlp) {
        std::size_t in = config_.input_dim;
        for (auto h : config_.hidden) {
            trunk_.push_back(dense(in, h, rng));
            in = h;
        }
    } else {
        Conv2dGeometry g1;
        g1.in_channels = config_.image_channels;
        g1.height = config_.image_height;
        g1.width = config_.image_width;
        g1.out_channels = config_.conv_channels[0];
        g1.kernel = 3;
        g1.stride = 2;
        g1.padding = 1;
        Conv2dGeometry g2 = g1;
        g2.in_channels = g1.out_channels;
        g2.height = g1.out_height();
        g2.width = g1.out_width();
        g2.out_channels = config_.conv_channels[1];
        trunk_.push_back(conv(g1, rng));
        trunk_.push_back(conv(g2, rng));
        trunk_.push_back(dense(g2.out_features(), feat, rng));
    }
    head_.push_back(dense(feat, config_.classes, rng));
    rebind_params();
}

void Classifier::rebind_params() {
    params_.clear();
    for (auto* layers : {&trunk_, &head_}) {
        for (auto& l : *layers) {
            params_.push_back(l.weight);
            params_.push_back(l.bias);
        }
    }
}

std::vector<std::string> Classifier::parameter_names() const {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < trunk_.size(); ++i) {
        names.push_back("trunk." + std::to_string(i) + ".weight");
        names.push_back("trunk." + std::to_string(i) + ".bias");
    }
    for (std::size_t i = 0; i < head_.size(); ++i) {
        names.push_back("head." + std::to_string(i) + ".weight");
        names.push_back("head." + std::to_string(i) + ".bias");
    }
    return names;
}

std::size_t Classifier::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
}

void Classifier::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

Tensor Classifier::features(const Tensor& x, Mode mode, Rng* rng, ParamUse use) const {
    if (x.shape().size() != 2 || x.cols() != config_.input_dim) {
        throw DimensionError("classifier: expected input of width " + std::to_string(config_.input_dim));
    }
    const bool train = mode == Mode::Train && config_.dropout > 0.0;
    if (train && !rng) throw ContractError("classifier: train-mode forward needs a dropout generator");
    Tensor h = x;
    for (std::size_t i = 0; i < trunk_.size(); ++i) {
        h = relu(trunk_[i].apply(h, use));
        if (train && config_.global_dropout && i + 1 < trunk_.size()) h = dropout(h, config_.dropout, *rng).first;
    }
    return h;
}

Tensor Classifier::head(const Tensor& f, ParamUse use) const {
    Tensor h = f;
    for (std::size_t i = 0; i < head_.size(); ++i) {
        if (i > 0) h = relu(h);
        h = head_[i].apply(h, use);
    }
    return h;
}

Tensor Classifier::forward(const Tensor& x, Mode mode, Rng* rng, ParamUse use) const {
    Tensor f = features(x, mode, rng, use);
    if (mode == Mode::Train && config_.dropout > 0.0) f = dropout(f, config_.dropout, *rng).first;
    return head(f, use);
}

MultiSampleOutput Classifier::forward_multisample(const Tensor& x, std::size_t k, Rng& rng, ParamUse use) const {
    if (k < 1) throw ParameterError("forward_multisample: K must be >= 1");
    MultiSampleOutput out;
    out.features = features(x, Mode::Train, &rng, use);
    for (std::size_t i = 0; i < k; ++i) {
        Tensor f = out.features;
        if (config_.dropout > 0.0) f = dropout(f, config_.dropout, rng).first;
        Tensor logits = head(f, use);
        out.probs.push_back(softmax(logits));
        out.logits.push_back(std::move(logits));
    }
    return out;
}

nlohmann::json to_json(const ModelConfig& c) {
    nlohmann::json j;
    j["arch"] = c.arch == Arch::Mlp ? "mlp" : "cnn";
    j["input_dim"] = c.input_dim;
    j["classes"] = c.classes;
    j["hidden"] = c.hidden;
    j["dropout"] = c.dropout;
    j["global_dropout"] = c.global_dropout;
    j["image_channels"] = c.image_channels;
    j["image_height"] = c.image_height;
    j["image_width"] = c.image_width;
    j["conv_channels"] = c.conv_channels;
    return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    const auto arch = j.at("arch").get<std::string>();
    if (arch == "mlp") {
        c.arch = Arch::Mlp;
    } else if (arch == "cnn") {
        c.arch = Arch::Cnn;
    } else {
        throw ParameterError("model: unknown arch '" + arch + "'");
    }
    c.input_dim = j.at("input_dim").get<std::size_t>();
    c.classes = j.at("classes").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    c.dropout = j.at("dropout").get<double>();
    c.global_dropout = j.at("global_dropout").get<bool>();
    c.image_channels = j.at("image_channels").get<std::size_t>();
    c.image_height = j.at("image_height").get<std::size_t>();
    c.image_width = j.at("image_width").get<std::size_t>();
    c.conv_channels = j.at("conv_channels").get<std::vector<std::size_t>>();
    c.validate();
    return c;
}

nlohmann::json Classifier::to_json() const {
    nlohmann::json j;
    j["format"] = kCheckpointFormat;
    j["version"] = kCheckpointVersion;
    j["config"] = ctr::to_json(config_);
    auto names = parameter_names();
    nlohmann::json params = nlohmann::json::array();
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto v = params_[i].values();
        params.push_back({{"name", names[i]},
                          {"shape", params_[i].shape()},
                          {"values", std::vector<double>(v.begin(), v.end())}});
    }
    j["parameters"] = std::move(params);
    return j;
}

Classifier Classifier::from_json(const nlohmann::json& j) {
    if (j.value("format", "") != kCheckpointFormat) throw ParameterError("checkpoint: not a ctr checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion) {
        throw ParameterError("checkpoint: unsupported version " + j.at("version").dump());
    }
    Classifier c = zeros(model_config_from_json(j.at("config")));
    const auto& params = j.at("parameters");
    auto names = c.parameter_names();
    if (params.size() != c.params_.size()) throw DimensionError("checkpoint: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& p = params[i];
        if (p.at("name").get<std::string>() != names[i]) {
            throw DimensionError("checkpoint: expected parameter " + names[i]);
        }
        if (p.at("shape").get<Shape>() != c.params_[i].shape()) {
            throw DimensionError("checkpoint: shape mismatch for " + names[i]);
        }
        auto values = p.at("values").get<std::vector<double>>();
        auto dst = c.params_[i].mutable_values();
        if (values.size() != dst.size()) throw DimensionError("checkpoint: value count mismatch for " + names[i]);
        std::copy(values.begin(), values.end(), dst.begin());
    }
    return c;
}

void Classifier::save(const std::filesystem::path& path) const {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("checkpoint: cannot write " + tmp.string());
        out << to_json().dump() << '\n';
        if (!out) throw std::runtime_error("checkpoint: write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Classifier Classifier::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
    return from_json(nlohmann::json::parse(in));
}

std::vector<int> argmax_rows(const Tensor& t) {
    const std::size_t m = t.rows(), n = t.cols();
    auto v = t.values();
    std::vector<int> out(m);
    for (std::size_t i = 0; i < m; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < n; ++j)
            if (v[i * n + j] > v[i * n + best]) best = j;
        out[i] = static_cast<int>(best);
    }
    return out;
}

} // namespace ctr
