#pragma once

// L-infinity gradient attacks with a pluggable loss.
//
// Every attack runs the model in eval mode over frozen parameters and only
// differentiates with respect to the input. Iterates are projected onto the
// intersection of the epsilon ball around the clean input and [0, 1].

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctr/data.hpp"
#include "ctr/losses.hpp"
#include "ctr/model.hpp"
#include "ctr/rng.hpp"
#include "ctr/tensor.hpp"

namespace ctr {

enum class AttackKind { Fgsm, Pgd, Mifgsm, Apgd };

std::string to_string(AttackKind k);
AttackKind parse_attack_kind(std::string_view s);

struct AttackSpec {
    AttackKind kind = AttackKind::Pgd;
    double epsilon = 0.1;
    double alpha = 0.025;
    std::size_t steps = 20;
    LossKind loss = LossKind::Ce;
    double gamma = 1.0;      ///< SCE / SKL weight
    double momentum = 1.0;   ///< MIFGSM decay
    bool random_start = true;
    /// Std-dev of the Gaussian start used by KL / SKL, whose gradient vanishes at x.
    double kl_start_sigma = 1e-3;

    // APGD constants.
    double apgd_alpha = 0.75;       ///< momentum weight on the new step
    double apgd_rho = 0.75;         ///< required fraction of successful steps per phase
    double apgd_first_check = 0.22; ///< first checkpoint as a fraction of steps
    double apgd_decay = 0.03;       ///< per-checkpoint shrink of the phase length
    double apgd_min_phase = 0.06;   ///< minimal phase length

    /// Throws ParameterError on invalid combinations for a C-class model.
    /// epsilon = 0 is accepted (identity attack); otherwise 0 < alpha <= epsilon <= 1.
    void validate(std::size_t classes) const;
    /// Copy with kind-implied fields forced (FGSM: one step).
    AttackSpec normalized() const;
};

struct AdvBatch {
    Tensor x_adv;
    std::vector<int> pred_before;
    std::vector<int> pred_after;
    /// pred_after != label
    std::vector<bool> success;
    /// Per-example loss at each recorded iterate; the last row is the returned point for PGD-like attacks.
    std::vector<std::vector<double>> loss_trajectory;
    std::vector<double> final_loss;
    /// APGD only: per-example step size after each checkpoint (first row is the initial 2 * epsilon).
    std::vector<std::vector<double>> step_sizes;
    /// APGD only: best loss found per example.
    std::vector<double> best_loss;

    /// Mean over the batch of each trajectory row.
    std::vector<double> mean_trajectory() const;
};

/// Per-example loss and input gradient at `x` (eval mode, frozen parameters).
struct LossGrad {
    std::vector<double> loss;
    std::vector<double> grad;
};
LossGrad input_loss_grad(const Classifier& model, std::span<const double> x, std::size_t rows,
                         std::span<const int> labels, LossKind kind, double gamma,
                         const std::optional<Tensor>& p_nat);

/// Clean eval-mode probabilities (detached), the reference for KL / SKL.
Tensor clean_probs(const Classifier& model, const Tensor& x);

AdvBatch fgsm(const Classifier& model, const Tensor& x, std::span<const int> labels, const AttackSpec& spec, Rng& rng);
AdvBatch pgd(const Classifier& model, const Tensor& x, std::span<const int> labels, const AttackSpec& spec, Rng& rng);
AdvBatch mifgsm(const Classifier& model, const Tensor& x, std::span<const int> labels, const AttackSpec& spec,
                Rng& rng);
AdvBatch apgd(const Classifier& model, const Tensor& x, std::span<const int> labels, const AttackSpec& spec, Rng& rng);
/// Dispatch on spec.kind.
AdvBatch run_attack(const Classifier& model, const Tensor& x, std::span<const int> labels, const AttackSpec& spec,
                    Rng& rng);

/// APGD checkpoint iterations for a step budget (0-based iteration indices).
std::vector<std::size_t> apgd_checkpoints(const AttackSpec& spec);

struct AttackRecord {
    std::size_t index = 0;
    int true_label = 0;
    int pred_before = 0;
    int pred_after = 0;
    double linf_norm = 0.0;
    double loss_final = 0.0;
};

struct RobustnessMetrics {
    std::size_t n = 0;
    std::size_t clean_correct = 0;
    std::size_t robust_correct = 0;
    std::size_t flipped = 0;
    double natural_accuracy = 0.0;
    double robust_accuracy = 0.0;
    /// flipped / clean_correct; 0 when nothing was initially correct.
    double asr = 0.0;
    std::vector<AttackRecord> records;
};

RobustnessMetrics evaluate_robustness(const Classifier& model, const Dataset& data, const AttackSpec& spec,
                                      Rng& rng, std::size_t batch_size = 250);

/// CSV with columns index,true_label,pred_before,pred_after,linf_norm,loss_final.
void write_attack_csv(const std::filesystem::path& path, std::span<const AttackRecord> records);

} // namespace ctr
