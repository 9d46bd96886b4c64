#include "ctr/losses.hpp"

#include <algorithm>
#include <cmath>

#include "ctr/errors.hpp"

namespace ctr {

namespace {

void require_same_classes(const ProbVector& a, const ProbVector& b, const char* op) {
    if (a.classes() != b.classes()) throw DimensionError(std::string(op) + ": class counts differ");
}

void require_three(std::size_t c, const char* op) {
    if (c < 3) throw ParameterError(std::string(op) + ": needs at least 3 classes");
}

// Shifted by the first entry so a constant vector has an exact mean.
double mean_of(const std::vector<double>& v) {
    double shift = 0.0;
    for (double x : v) shift += x - v.front();
    return v.front() + shift / static_cast<double>(v.size());
}

std::vector<double> wrong_mask(std::span<const int> labels, std::size_t rows, std::size_t cols) {
    if (labels.size() != rows) throw DimensionError("labels do not match batch size");
    std::vector<double> w(rows * cols, 1.0);
    for (std::size_t i = 0; i < rows; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= cols) {
            throw DimensionError("label " + std::to_string(labels[i]) + " out of range");
        }
        w[i * cols + static_cast<std::size_t>(labels[i])] = 0.0;
    }
    return w;
}

/// Wrong entries minus their row mean, label entry zero.
// Wrong entries minus their row mean, zero at the label. The mean is taken
// relative to the first wrong entry so constant rows center to exact zeros.
Tensor centered_wrong(const Tensor& probs, const std::vector<double>& w) {
    const std::size_t rows = probs.rows(), c = probs.cols();
    std::vector<double> first(rows * c, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j)
            if (w[r * c + j] != 0.0) {
                first[r * c + j] = 1.0;
                break;
            }
    Tensor shifted = sub(probs, broadcast_cols(sum_rows(mul_const(probs, first)), c));
    Tensor mean_shift = scale(sum_rows(mul_const(shifted, w)), 1.0 / static_cast<double>(c - 1));
    return mul_const(sub(shifted, broadcast_cols(mean_shift, c)), w);
}

Tensor row_dot(const Tensor& a, const Tensor& b) { return sum_rows(mul(a, b)); }

} // namespace

std::vector<double> ProbVector::wrong() const {
    std::vector<double> out;
    out.reserve(probs.size() - 1);
    for (std::size_t i = 0; i < probs.size(); ++i)
        if (static_cast<int>(i) != label) out.push_back(probs[i]);
    return out;
}

void ProbVector::validate(double tol) const {
    if (probs.size() < 2) throw ParameterError("ProbVector: need at least 2 classes");
    if (label < 0 || static_cast<std::size_t>(label) >= probs.size()) {
        throw ParameterError("ProbVector: label out of range");
    }
    double total = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0 && p <= 1.0)) throw ParameterError("ProbVector: entry outside [0, 1]");
        total += p;
    }
    if (std::abs(total - 1.0) > tol) throw ParameterError("ProbVector: entries do not sum to 1");
}

ProbVector SubNetOutputs::average() const {
    if (probs.empty()) throw ParameterError("SubNetOutputs: empty");
    ProbVector avg;
    avg.label = probs.front().label;
    avg.probs.assign(probs.front().classes(), 0.0);
    for (const auto& p : probs) {
        if (p.classes() != avg.classes()) throw DimensionError("SubNetOutputs: class counts differ");
        for (std::size_t i = 0; i < p.classes(); ++i) avg.probs[i] += p.probs[i];
    }
    for (double& v : avg.probs) v /= static_cast<double>(probs.size());
    return avg;
}

std::string to_string(Diversity d) { return d == Diversity::Cosine ? "cosine" : "pcc"; }

std::string to_string(LossKind k) {
    switch (k) {
    case LossKind::Ce: return "ce";
    case LossKind::Kl: return "kl";
    case LossKind::Std: return "std";
    case LossKind::Sce: return "sce";
    case LossKind::Skl: return "skl";
    }
    return "?";
}

Diversity parse_diversity(std::string_view s) {
    if (s == "cosine") return Diversity::Cosine;
    if (s == "pcc") return Diversity::Pcc;
    throw ParameterError("unknown diversity '" + std::string(s) + "'");
}

LossKind parse_loss_kind(std::string_view s) {
    for (auto k : {LossKind::Ce, LossKind::Kl, LossKind::Std, LossKind::Sce, LossKind::Skl})
        if (to_string(k) == s) return k;
    throw ParameterError("unknown loss kind '" + std::string(s) + "'");
}

bool needs_clean_reference(LossKind k) { return k == LossKind::Kl || k == LossKind::Skl; }

bool needs_three_classes(LossKind k) { return k == LossKind::Std || k == LossKind::Sce || k == LossKind::Skl; }

void CtrParams::validate(bool mdl_active) const {
    if (!(gamma >= 0.0)) throw ParameterError("gamma must be >= 0");
    if (!(beta >= 0.0)) throw ParameterError("beta must be >= 0");
    if (!(rho >= 0.0)) throw ParameterError("rho must be >= 0");
    if (mdl_active && k < 2) throw ParameterError("K must be >= 2 when MDL is active");
}

// --- scalar route -----------------------------------------------------------

double cross_entropy(const ProbVector& p) { return -std::log(std::max(p.correct(), kProbFloor)); }

double kl_divergence(const ProbVector& p_adv, const ProbVector& p_nat) {
    require_same_classes(p_adv, p_nat, "kl_divergence");
    double total = 0.0;
    for (std::size_t i = 0; i < p_nat.classes(); ++i) {
        const double q = p_nat.probs[i];
        total += q * (std::log(std::max(q, kProbFloor)) - std::log(std::max(p_adv.probs[i], kProbFloor)));
    }
    return total;
}

DiversityValue cosine_diversity(const ProbVector& p1, const ProbVector& p2) {
    require_same_classes(p1, p2, "cosine_diversity");
    if (p1.label != p2.label) throw ParameterError("cosine_diversity: labels differ");
    const auto a = p1.wrong();
    const auto b = p2.wrong();
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return {0.0, true};
    return {dot / (std::sqrt(na) * std::sqrt(nb)), false};
}

DiversityValue pcc_diversity(const ProbVector& p1, const ProbVector& p2) {
    require_same_classes(p1, p2, "pcc_diversity");
    require_three(p1.classes(), "pcc_diversity");
    if (p1.label != p2.label) throw ParameterError("pcc_diversity: labels differ");
    auto a = p1.wrong();
    auto b = p2.wrong();
    const double ma = mean_of(a), mb = mean_of(b);
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        dot += da * db;
        na += da * da;
        nb += db * db;
    }
    if (na == 0.0 || nb == 0.0) return {0.5, true};
    const double pearson = dot / (std::sqrt(na) * std::sqrt(nb));
    return {(pearson + 1.0) / 2.0, false};
}

DiversityValue diversity(Diversity kind, const ProbVector& p1, const ProbVector& p2) {
    return kind == Diversity::Cosine ? cosine_diversity(p1, p2) : pcc_diversity(p1, p2);
}

MaskResult compute_mask_from_nll(std::span<const double> nll, double eta) {
    if (!(eta > 0.0 && eta <= 100.0)) throw ParameterError("mask: eta must be in (0, 100]");
    if (nll.empty()) throw ParameterError("mask: empty batch");
    std::vector<double> sorted(nll.begin(), nll.end());
    std::sort(sorted.begin(), sorted.end());
    const double n = static_cast<double>(sorted.size());
    // Nearest rank; the small offset keeps exact products like 70*10/100 from rounding up.
    auto rank = static_cast<std::size_t>(std::ceil(eta * n / 100.0 - 1e-9));
    rank = std::clamp<std::size_t>(rank, 1, sorted.size());
    MaskResult out;
    out.eta = eta;
    out.threshold = sorted[rank - 1];
    out.bits.reserve(nll.size());
    for (double v : nll) out.bits.push_back(v <= out.threshold ? 1.0 : 0.0);
    return out;
}

MaskResult compute_mask(std::span<const ProbVector> batch_avg, double eta) {
    std::vector<double> nll;
    nll.reserve(batch_avg.size());
    for (const auto& p : batch_avg) nll.push_back(cross_entropy(p));
    return compute_mask_from_nll(nll, eta);
}

double orthogonal_term(const SubNetOutputs& outs, Diversity kind) {
    const std::size_t k = outs.k();
    if (k < 2) throw ParameterError("orthogonal term needs K >= 2");
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j) total += diversity(kind, outs.probs[i], outs.probs[j]).value;
    return total / (static_cast<double>(k * (k - 1)) / 2.0);
}

double mdl_loss(const SubNetOutputs& outs, double mask_bit, double rho, Diversity kind) {
    const std::size_t k = outs.k();
    if (k < 2) throw ParameterError("mdl_loss: K must be >= 2");
    double ce = 0.0;
    for (const auto& p : outs.probs) ce += cross_entropy(p);
    ce /= static_cast<double>(k);
    return ce + rho * mask_bit * orthogonal_term(outs, kind);
}

double std_loss(const ProbVector& p) {
    require_three(p.classes(), "std_loss");
    const auto w = p.wrong();
    const double m = mean_of(w);
    double ss = 0.0;
    for (double v : w) ss += (v - m) * (v - m);
    return std::sqrt(ss / static_cast<double>(p.classes() - 2));
}

double sce_loss(const ProbVector& p, double gamma) { return std::exp(gamma * std_loss(p)) * cross_entropy(p); }

double skl_loss(const ProbVector& p_adv, const ProbVector& p_nat, double gamma) {
    require_same_classes(p_adv, p_nat, "skl_loss");
    return std::exp(gamma * std_loss(p_nat)) * kl_divergence(p_adv, p_nat);
}

std::vector<double> cross_entropy_grad(const ProbVector& p) {
    std::vector<double> g(p.classes(), 0.0);
    const double py = p.correct();
    if (py > kProbFloor) g[static_cast<std::size_t>(p.label)] = -1.0 / py;
    return g;
}

std::vector<double> std_loss_grad(const ProbVector& p) {
    const std::size_t c = p.classes();
    const double s = std_loss(p);
    std::vector<double> g(c, 0.0);
    if (s == 0.0) return g;
    const double denom = static_cast<double>((c - 2) * (c - 1)) * s;
    for (std::size_t c1 = 0; c1 < c; ++c1) {
        if (static_cast<int>(c1) == p.label) continue;
        double acc = 0.0;
        for (std::size_t c2 = 0; c2 < c; ++c2) {
            if (c2 == c1 || static_cast<int>(c2) == p.label) continue;
            acc += p.probs[c1] - p.probs[c2];
        }
        g[c1] = acc / denom;
    }
    return g;
}

std::vector<double> sce_loss_grad(const ProbVector& p, double gamma) {
    const double factor = std::exp(gamma * std_loss(p));
    const double ce = cross_entropy(p);
    auto g_std = std_loss_grad(p);
    auto g_ce = cross_entropy_grad(p);
    std::vector<double> g(p.classes());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = factor * (g_ce[i] + ce * gamma * g_std[i]);
    return g;
}

// --- batched route ----------------------------------------------------------

Tensor cross_entropy(const Tensor& probs, std::span<const int> labels) {
    return scale(log(gather_cols(probs, labels), kProbFloor), -1.0);
}

Tensor kl_divergence(const Tensor& p_adv, const Tensor& p_nat) {
    if (p_adv.shape() != p_nat.shape()) throw DimensionError("kl_divergence: shape mismatch");
    return sum_rows(mul(p_nat, sub(log(p_nat, kProbFloor), log(p_adv, kProbFloor))));
}

Tensor std_loss(const Tensor& probs, std::span<const int> labels) {
    const std::size_t c = probs.cols();
    require_three(c, "std_loss");
    const auto w = wrong_mask(labels, probs.rows(), c);
    Tensor centered = centered_wrong(probs, w);
    Tensor var = scale(row_dot(centered, centered), 1.0 / static_cast<double>(c - 2));
    return sqrt(var);
}

Tensor sce_loss(const Tensor& probs, std::span<const int> labels, double gamma) {
    return mul(exp(scale(std_loss(probs, labels), gamma)), cross_entropy(probs, labels));
}

Tensor skl_loss(const Tensor& p_adv, const Tensor& p_nat, std::span<const int> labels, double gamma) {
    return mul(exp(scale(std_loss(p_nat, labels), gamma)), kl_divergence(p_adv, p_nat));
}

Tensor diversity(Diversity kind, const Tensor& p1, const Tensor& p2, std::span<const int> labels) {
    if (p1.shape() != p2.shape()) throw DimensionError("diversity: shape mismatch");
    const std::size_t c = p1.cols();
    const auto w = wrong_mask(labels, p1.rows(), c);
    Tensor a, b;
    if (kind == Diversity::Cosine) {
        a = mul_const(p1, w);
        b = mul_const(p2, w);
    } else {
        require_three(c, "pcc_diversity");
        a = centered_wrong(p1, w);
        b = centered_wrong(p2, w);
    }
    Tensor norms = mul(sqrt(row_dot(a, a)), sqrt(row_dot(b, b)));
    Tensor cosine = safe_div(row_dot(a, b), norms);
    if (kind == Diversity::Cosine) return cosine;
    return scale(add_scalar(cosine, 1.0), 0.5);
}

Tensor orthogonal_term(const std::vector<Tensor>& probs, std::span<const int> labels, Diversity kind) {
    const std::size_t k = probs.size();
    if (k < 2) throw ParameterError("orthogonal term needs K >= 2");
    Tensor total;
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j) {
            Tensor d = diversity(kind, probs[i], probs[j], labels);
            total = total.defined() ? add(total, d) : d;
        }
    return scale(total, 1.0 / (static_cast<double>(k * (k - 1)) / 2.0));
}

Tensor mdl_loss(const std::vector<Tensor>& probs, std::span<const int> labels, std::span<const double> mask,
                double rho, Diversity kind) {
    const std::size_t k = probs.size();
    if (k < 2) throw ParameterError("mdl_loss: K must be >= 2");
    Tensor ce;
    for (const auto& p : probs) {
        Tensor l = cross_entropy(p, labels);
        ce = ce.defined() ? add(ce, l) : l;
    }
    ce = scale(ce, 1.0 / static_cast<double>(k));
    Tensor orth = mul_const(orthogonal_term(probs, labels, kind), mask);
    return add(ce, scale(orth, rho));
}

MaskResult compute_mask(const std::vector<Tensor>& probs, std::span<const int> labels, double eta) {
    if (probs.empty()) throw ParameterError("mask: no sub-network outputs");
    const std::size_t rows = probs.front().rows(), cols = probs.front().cols();
    if (labels.size() != rows) throw DimensionError("mask: labels do not match batch size");
    std::vector<double> nll(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        const auto y = static_cast<std::size_t>(labels[i]);
        double avg = 0.0;
        for (const auto& p : probs) avg += p.values()[i * cols + y];
        avg /= static_cast<double>(probs.size());
        nll[i] = -std::log(std::max(avg, kProbFloor));
    }
    return compute_mask_from_nll(nll, eta);
}

Tensor loss_by_kind(LossKind kind, const Tensor& probs, std::span<const int> labels,
                    const std::optional<Tensor>& p_nat, double gamma) {
    if (needs_clean_reference(kind) && !p_nat) {
        throw ContractError(to_string(kind) + " loss needs the clean-input distribution");
    }
    switch (kind) {
    case LossKind::Ce: return cross_entropy(probs, labels);
    case LossKind::Kl: return kl_divergence(probs, *p_nat);
    case LossKind::Std: return std_loss(probs, labels);
    case LossKind::Sce: return sce_loss(probs, labels, gamma);
    case LossKind::Skl: return skl_loss(probs, *p_nat, labels, gamma);
    }
    throw ParameterError("unknown loss kind");
}

std::vector<ProbVector> to_prob_vectors(const Tensor& probs, std::span<const int> labels) {
    const std::size_t rows = probs.rows(), cols = probs.cols();
    if (labels.size() != rows) throw DimensionError("labels do not match batch size");
    std::vector<ProbVector> out(rows);
    auto v = probs.values();
    for (std::size_t i = 0; i < rows; ++i) {
        out[i].probs.assign(v.begin() + static_cast<long>(i * cols), v.begin() + static_cast<long>((i + 1) * cols));
        out[i].label = labels[i];
    }
    return out;
}

} // namespace ctr
