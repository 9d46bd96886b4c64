#pragma once

// Natural training (single dropout, multi-sample dropout, MDL) and
// adversarial training (Madry, Fast, Free, TRADES), each optionally with the
// STD-weighted losses (gamma > 0).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctr/attacks.hpp"
#include "ctr/data.hpp"
#include "ctr/losses.hpp"
#include "ctr/model.hpp"
#include "ctr/schedule.hpp"

namespace ctr {

enum class TrainMethod { NaturalCE, NaturalMSD, NaturalMDL, MadryAT, FastAT, FreeAT, Trades };

std::string to_string(TrainMethod m);
TrainMethod parse_train_method(std::string_view s);
bool is_natural(TrainMethod m);
bool is_madry_family(TrainMethod m);

struct TrainSpec {
    TrainMethod method = TrainMethod::NaturalCE;
    double gamma = 0.0;
    double beta = 6.0;
    std::size_t k = 4;
    double rho = 1.0;
    double eta = 100.0;
    Diversity diversity = Diversity::Cosine;
    std::size_t epochs = 10;
    std::size_t batch_size = 128;
    LrSchedule schedule;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::uint64_t seed = 0;

    // Adversarial settings.
    double epsilon = 0.1;
    std::size_t inner_steps = 7;
    double inner_alpha = 0.025;  ///< PGD / TRADES inner step
    double fast_alpha = 0.1;     ///< Fast-AT step from the uniform start
    std::size_t replays = 8;     ///< Free-AT minibatch replays
    double trades_sigma = 1e-3;  ///< TRADES start noise

    /// If set, each history record also carries robust accuracy on the eval set under this attack.
    std::optional<AttackSpec> robust_eval;

    void validate(std::size_t classes) const;
};

struct EpochRecord {
    std::size_t epoch = 0;  ///< 1-based
    double lr = 0.0;        ///< rate at the start of the epoch
    double train_loss = 0.0;
    double nat_acc = 0.0;
    std::optional<double> robust_acc;
    std::optional<double> wall_ms;

    nlohmann::json to_json() const;
    static EpochRecord from_json(const nlohmann::json& j);
};

/// SGD with momentum and L2 weight decay (decay added to the gradient).
class Sgd {
public:
    Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
    void step(std::vector<Tensor>& params, double lr);
    const std::vector<std::vector<double>>& buffers() const { return buffers_; }
    void set_buffers(std::vector<std::vector<double>> b) { buffers_ = std::move(b); }

private:
    double momentum_;
    double weight_decay_;
    std::vector<std::vector<double>> buffers_;
};

/// Output locations; every field is optional.
struct TrainIo {
    std::optional<std::filesystem::path> history;     ///< JSON lines, one record per epoch
    std::optional<std::filesystem::path> checkpoint;  ///< model after the latest epoch
    std::optional<std::filesystem::path> state;       ///< optimizer / RNG state for resuming
    bool resume = false;
    bool record_wall_time = false;
    /// Called after each epoch is recorded and saved; returning false stops training there.
    std::function<bool(const EpochRecord&)> on_epoch;
};

struct TrainResult {
    Classifier model;
    std::vector<EpochRecord> history;
};

TrainResult train(const TrainSpec& spec, const ModelConfig& model_config, const Dataset& train_data,
                  const Dataset* eval_data = nullptr, const TrainIo& io = {});
/// Same as train() but rejects specs outside the named family.
TrainResult train_natural(const TrainSpec& spec, const ModelConfig& model_config, const Dataset& train_data,
                          const Dataset* eval_data = nullptr, const TrainIo& io = {});
TrainResult train_madry_family(const TrainSpec& spec, const ModelConfig& model_config, const Dataset& train_data,
                               const Dataset* eval_data = nullptr, const TrainIo& io = {});
TrainResult train_trades(const TrainSpec& spec, const ModelConfig& model_config, const Dataset& train_data,
                         const Dataset* eval_data = nullptr, const TrainIo& io = {});

// Batch objectives (scalar tensors, mean over the batch). Exposed for tests.

/// Mean of exp(gamma * STD) * CE; reduces to mean CE when gamma = 0 and C = 2.
Tensor adversarial_objective(const Classifier& model, const Tensor& x_adv, std::span<const int> labels,
                             double gamma);
/// Mean of SCE(f(x)) + beta * SKL(f(x_adv), f(x)).
Tensor trades_objective(const Classifier& model, const Tensor& x, const Tensor& x_adv, std::span<const int> labels,
                        double gamma, double beta);
/// Natural objectives; `rng` drives dropout.
Tensor natural_objective(const Classifier& model, const TrainSpec& spec, const Tensor& x,
                         std::span<const int> labels, Rng& rng);

/// Inner-maximization examples for the Madry family and TRADES.
Tensor madry_examples(const Classifier& model, const TrainSpec& spec, const Tensor& x, std::span<const int> labels,
                      Rng& rng);
Tensor fast_examples(const Classifier& model, const TrainSpec& spec, const Tensor& x, std::span<const int> labels,
                     Rng& rng);
Tensor trades_examples(const Classifier& model, const TrainSpec& spec, const Tensor& x, std::span<const int> labels,
                       Rng& rng);

/// Top-1 accuracy in eval mode.
double eval_accuracy(const Classifier& model, const Dataset& data, std::size_t batch_size = 500);

std::vector<EpochRecord> read_history(const std::filesystem::path& path);

} // namespace ctr
