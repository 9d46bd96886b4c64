#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctr/prob.hpp"
#include "ctr/rng.hpp"
#include "ctr/tensor.hpp"

namespace ctr {

enum class Arch { Mlp, Cnn };
enum class Mode { Eval, Train };
/// Frozen builds the graph over detached parameters so only inputs get gradients.
enum class ParamUse { Trainable, Frozen };

struct ModelConfig {
    Arch arch = Arch::Mlp;
    std::size_t input_dim = 784;
    std::size_t classes = 10;
    /// MLP: hidden widths; the last one is the dropped-out feature layer.
    /// CNN: only the last entry is used (width of the dense feature layer).
    std::vector<std::size_t> hidden = {256, 128};
    double dropout = 0.5;
    /// Also drop out every earlier hidden layer (plain-dropout baseline option).
    bool global_dropout = false;

    std::size_t image_channels = 1;
    std::size_t image_height = 28;
    std::size_t image_width = 28;
    std::vector<std::size_t> conv_channels = {8, 16};

    void validate() const;
};

struct Layer {
    enum class Kind { Dense, Conv };
    Kind kind = Kind::Dense;
    Tensor weight;
    Tensor bias;
    Conv2dGeometry geometry;

    Tensor apply(const Tensor& x, ParamUse use) const;
};

/// Logits and probabilities of the K sub-networks for a whole batch.
struct MultiSampleOutput {
    Tensor features;
    std::vector<Tensor> logits;
    std::vector<Tensor> probs;

    std::size_t k() const { return probs.size(); }
    SubNetOutputs example(std::size_t row, int label) const;
};

class Classifier {
public:
    Classifier(ModelConfig config, Rng& init_rng);

    /// All weights and biases zero; every input maps to uniform probabilities.
    static Classifier zeros(ModelConfig config);

    Classifier(const Classifier& other);
    Classifier& operator=(const Classifier& other);
    Classifier(Classifier&&) noexcept = default;
    Classifier& operator=(Classifier&&) noexcept = default;

    const ModelConfig& config() const { return config_; }
    std::size_t classes() const { return config_.classes; }
    std::size_t input_dim() const { return config_.input_dim; }

    /// Logits [B x C]. Train mode needs a dropout generator; eval mode is deterministic.
    Tensor forward(const Tensor& x, Mode mode, Rng* dropout_rng = nullptr,
                   ParamUse use = ParamUse::Trainable) const;

    /// Activations of the last feature layer (before its dropout).
    Tensor features(const Tensor& x, Mode mode, Rng* dropout_rng, ParamUse use) const;
    Tensor head(const Tensor& features, ParamUse use) const;

    /// One shared feature pass, then K independent dropout masks on the last
    /// feature layer, each followed by the classifier head.
    MultiSampleOutput forward_multisample(const Tensor& x, std::size_t k, Rng& rng,
                                          ParamUse use = ParamUse::Trainable) const;

    std::vector<Tensor>& parameters() { return params_; }
    const std::vector<Tensor>& parameters() const { return params_; }
    std::vector<std::string> parameter_names() const;
    std::size_t parameter_count() const;
    void zero_grad();

    nlohmann::json to_json() const;
    static Classifier from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static Classifier load(const std::filesystem::path& path);

private:
    explicit Classifier(ModelConfig config);
    void build(Rng* init_rng);
    void rebind_params();

    ModelConfig config_;
    std::vector<Layer> trunk_;
    std::vector<Layer> head_;
    std::vector<Tensor> params_;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Predicted class per row (first maximum on ties).
std::vector<int> argmax_rows(const Tensor& t);

} // namespace ctr
