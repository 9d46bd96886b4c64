#pragma once

// Confidence-threshold-reduction loss family.
//
// Each loss exists twice:
//   * a scalar form on ProbVector, written directly from the definitions, and
//   * a batched, differentiable form on [B x C] probability tensors that the
//     trainers and attacks use.
// The two are implemented independently so tests can check one against the
// other.
//
// Conventions
//   - natural logarithms; probabilities are clamped at 1e-12 inside logs
//   - "wrong vector" = the C-1 probabilities left after removing the label
//   - STD is the sample standard deviation of the wrong vector (divisor C-2)
//   - KL(p_adv, p_nat) = sum_i p_nat_i * log(p_nat_i / p_adv_i), the clean
//     distribution being the reference

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctr/prob.hpp"
#include "ctr/tensor.hpp"

namespace ctr {

inline constexpr double kProbFloor = 1e-12;

enum class Diversity { Cosine, Pcc };
enum class LossKind { Ce, Kl, Std, Sce, Skl };

std::string to_string(Diversity d);
std::string to_string(LossKind k);
Diversity parse_diversity(std::string_view s);
LossKind parse_loss_kind(std::string_view s);
/// KL and SKL compare against a clean-input distribution.
bool needs_clean_reference(LossKind k);
/// STD, SCE and SKL are undefined for fewer than three classes.
bool needs_three_classes(LossKind k);

struct DiversityValue {
    double value = 0.0;
    /// A wrong vector had zero norm (cosine) or zero variance (PCC).
    bool degenerate = false;
};

/// Weights of the CTR objectives.
struct CtrParams {
    double gamma = 0.0;  ///< STD exponent weight; 0 means "without CTR"
    double beta = 1.0;   ///< TRADES trade-off
    double rho = 1.0;    ///< orthogonal-term weight
    std::size_t k = 4;   ///< sub-networks per step

    void validate(bool mdl_active) const;
};

/// Batch mask over the averaged sub-network predictions.
struct MaskResult {
    double eta = 100.0;      ///< percentage in (0, 100]
    double threshold = 0.0;  ///< eta-percentile of -log p_label (nearest rank)
    std::vector<double> bits;
};

// --- scalar route -----------------------------------------------------------

double cross_entropy(const ProbVector& p);
double kl_divergence(const ProbVector& p_adv, const ProbVector& p_nat);
DiversityValue cosine_diversity(const ProbVector& p1, const ProbVector& p2);
DiversityValue pcc_diversity(const ProbVector& p1, const ProbVector& p2);
DiversityValue diversity(Diversity kind, const ProbVector& p1, const ProbVector& p2);

/// xi_i = 1 iff -log p_i[label] <= T, T the nearest-rank eta-percentile of the batch.
MaskResult compute_mask(std::span<const ProbVector> batch_avg, double eta);
MaskResult compute_mask_from_nll(std::span<const double> neg_log_probs, double eta);

/// Sum over sub-network pairs of the diversity, divided by K(K-1)/2.
double orthogonal_term(const SubNetOutputs& outs, Diversity kind = Diversity::Cosine);
/// Mean sub-network CE + rho * mask_bit * normalized orthogonal term. Needs K >= 2.
double mdl_loss(const SubNetOutputs& outs, double mask_bit, double rho, Diversity kind = Diversity::Cosine);

double std_loss(const ProbVector& p);
double sce_loss(const ProbVector& p, double gamma);
/// STD factor is taken on the clean distribution.
double skl_loss(const ProbVector& p_adv, const ProbVector& p_nat, double gamma);

// Closed-form derivatives with the probabilities treated as free variables.
std::vector<double> cross_entropy_grad(const ProbVector& p);
/// d STD / d p_c = sum_{c' wrong, c' != c} (p_c - p_c') / ((C-2)(C-1) STD); zero at the label.
std::vector<double> std_loss_grad(const ProbVector& p);
std::vector<double> sce_loss_grad(const ProbVector& p, double gamma);

// --- batched, differentiable route (all return [B x 1]) ----------------------

Tensor cross_entropy(const Tensor& probs, std::span<const int> labels);
Tensor kl_divergence(const Tensor& p_adv, const Tensor& p_nat);
Tensor std_loss(const Tensor& probs, std::span<const int> labels);
Tensor sce_loss(const Tensor& probs, std::span<const int> labels, double gamma);
Tensor skl_loss(const Tensor& p_adv, const Tensor& p_nat, std::span<const int> labels, double gamma);
Tensor diversity(Diversity kind, const Tensor& p1, const Tensor& p2, std::span<const int> labels);
Tensor orthogonal_term(const std::vector<Tensor>& probs, std::span<const int> labels, Diversity kind);
Tensor mdl_loss(const std::vector<Tensor>& probs, std::span<const int> labels, std::span<const double> mask,
                double rho, Diversity kind);

/// Mask from the K-average of batched probabilities (values only).
MaskResult compute_mask(const std::vector<Tensor>& probs, std::span<const int> labels, double eta);

/// Per-example loss of the given kind. `p_nat` is required for KL/SKL.
Tensor loss_by_kind(LossKind kind, const Tensor& probs, std::span<const int> labels,
                    const std::optional<Tensor>& p_nat, double gamma);

/// Rows of a [B x C] tensor as ProbVectors.
std::vector<ProbVector> to_prob_vectors(const Tensor& probs, std::span<const int> labels);

} // namespace ctr
