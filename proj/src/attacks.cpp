#include "ctr/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "ctr/errors.hpp"

namespace ctr {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// Clamp x into [x0 - eps, x0 + eps] and [0, 1].
void project(std::vector<double>& x, std::span<const double> x0, double eps) {
    for (std::size_t i = 0; i < x.size(); ++i)
        x[i] = std::clamp(std::clamp(x[i], x0[i] - eps, x0[i] + eps), 0.0, 1.0);
}

std::vector<double> start_point(std::span<const double> x0, const AttackSpec& spec, Rng& rng) {
    std::vector<double> x(x0.begin(), x0.end());
    if (needs_clean_reference(spec.loss)) {
        std::normal_distribution<double> n(0.0, spec.kl_start_sigma);
        for (double& v : x) v += n(rng);
    } else if (spec.random_start) {
        std::uniform_real_distribution<double> u(-spec.epsilon, spec.epsilon);
        for (double& v : x) v += u(rng);
    }
    project(x, x0, spec.epsilon);
    return x;
}

struct Setup {
    std::size_t rows = 0;
    std::size_t dim = 0;
    std::vector<double> x0;
    std::optional<Tensor> p_nat;
    std::vector<int> pred_before;
};

Setup prepare(const Classifier& model, const Tensor& x, std::span<const int> labels, const AttackSpec& spec) {
    spec.validate(model.classes());
    if (labels.size() != x.rows()) throw DimensionError("attack: labels do not match batch size");
    if (x.cols() != model.input_dim()) throw DimensionError("attack: input width does not match model");
    Setup s;
    s.rows = x.rows();
    s.dim = x.cols();
    s.x0.assign(x.values().begin(), x.values().end());
    Tensor logits = model.forward(x, Mode::Eval, nullptr, ParamUse::Frozen);
    s.pred_before = argmax_rows(logits);
    if (needs_clean_reference(spec.loss)) s.p_nat = softmax(logits).detach();
    return s;
}

/// Loss and prediction at the returned point.
void finish(AdvBatch& out, const Classifier& model, const Setup& s, std::vector<double> x_adv,
            std::span<const int> labels, const AttackSpec& spec) {
    out.x_adv = Tensor::matrix(s.rows, s.dim, std::move(x_adv));
    Tensor logits = model.forward(out.x_adv, Mode::Eval, nullptr, ParamUse::Frozen);
    Tensor loss = loss_by_kind(spec.loss, softmax(logits), labels, s.p_nat, spec.gamma);
    out.final_loss.assign(loss.values().begin(), loss.values().end());
    out.pred_before = s.pred_before;
    out.pred_after = argmax_rows(logits);
    out.success.resize(s.rows);
    for (std::size_t i = 0; i < s.rows; ++i) out.success[i] = out.pred_after[i] != labels[i];
}

/// Shared sign-gradient loop for PGD and MIFGSM (momentum <= 0 disables the accumulator).
AdvBatch iterate_sign(const Classifier& model, const Tensor& x, std::span<const int> labels, const AttackSpec& spec,
                      Rng& rng, double step, std::size_t steps, bool use_momentum) {
    const Setup s = prepare(model, x, labels, spec);
    AdvBatch out;
    std::vector<double> xa = start_point(s.x0, spec, rng);
    std::vector<double> acc(use_momentum ? xa.size() : 0, 0.0);
    for (std::size_t t = 0; t < steps; ++t) {
        LossGrad lg = input_loss_grad(model, xa, s.rows, labels, spec.loss, spec.gamma, s.p_nat);
        out.loss_trajectory.push_back(std::move(lg.loss));
        if (use_momentum) {
            for (std::size_t r = 0; r < s.rows; ++r) {
                double l1 = 0.0;
                for (std::size_t d = 0; d < s.dim; ++d) l1 += std::abs(lg.grad[r * s.dim + d]);
                for (std::size_t d = 0; d < s.dim; ++d) {
                    const std::size_t i = r * s.dim + d;
                    acc[i] = spec.momentum * acc[i] + (l1 > 0.0 ? lg.grad[i] / l1 : 0.0);
                }
            }
            for (std::size_t i = 0; i < xa.size(); ++i) xa[i] += step * sign(acc[i]);
        } else {
            for (std::size_t i = 0; i < xa.size(); ++i) xa[i] += step * sign(lg.grad[i]);
        }
        project(xa, s.x0, spec.epsilon);
    }
    finish(out, model, s, std::move(xa), labels, spec);
    out.loss_trajectory.push_back(out.final_loss);
    return out;
}

} // namespace

std::string to_string(AttackKind k) {
    switch (k) {
    case AttackKind::Fgsm: return "fgsm";
    case AttackKind::Pgd: return "pgd";
    case AttackKind::Mifgsm: return "mifgsm";
    case AttackKind::Apgd: return "apgd";
    }
    return "?";
}

AttackKind parse_attack_kind(std::string_view s) {
    for (auto k : {AttackKind::Fgsm, AttackKind::Pgd, AttackKind::Mifgsm, AttackKind::Apgd})
        if (to_string(k) == s) return k;
    throw ParameterError("unknown attack kind '" + std::string(s) + "'");
}

void AttackSpec::validate(std::size_t classes) const {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ParameterError("attack: epsilon must be in [0, 1]");
    if (epsilon > 0.0 && kind != AttackKind::Apgd && !(alpha > 0.0 && alpha <= epsilon)) {
        throw ParameterError("attack: need 0 < alpha <= epsilon");
    }
    if (steps < 1) throw ParameterError("attack: steps must be >= 1");
    if (kind == AttackKind::Apgd && steps < 2) throw ParameterError("attack: APGD needs steps >= 2");
    if (kind == AttackKind::Mifgsm && !(momentum > 0.0)) throw ParameterError("attack: MIFGSM needs momentum > 0");
    if (!(gamma >= 0.0)) throw ParameterError("attack: gamma must be >= 0");
    if (needs_three_classes(loss) && classes < 3) {
        throw ParameterError("attack: " + to_string(loss) + " loss needs at least 3 classes");
    }
    if (!(kl_start_sigma >= 0.0)) throw ParameterError("attack: kl_start_sigma must be >= 0");
    if (kind == AttackKind::Apgd) {
        if (!(apgd_alpha > 0.0 && apgd_alpha <= 1.0)) throw ParameterError("attack: apgd_alpha must be in (0, 1]");
        if (!(apgd_rho > 0.0 && apgd_rho <= 1.0)) throw ParameterError("attack: apgd_rho must be in (0, 1]");
        if (!(apgd_first_check > 0.0 && apgd_first_check <= 1.0 && apgd_decay >= 0.0 && apgd_min_phase > 0.0)) {
            throw ParameterError("attack: invalid APGD checkpoint fractions");
        }
    }
}

AttackSpec AttackSpec::normalized() const {
    AttackSpec s = *this;
    if (s.kind == AttackKind::Fgsm) s.steps = 1;
    return s;
}

std::vector<double> AdvBatch::mean_trajectory() const {
    std::vector<double> out;
    for (const auto& row : loss_trajectory) {
        double m = 0.0;
        for (double v : row) m += v;
        out.push_back(row.empty() ? 0.0 : m / static_cast<double>(row.size()));
    }
    return out;
}

Tensor clean_probs(const Classifier& model, const Tensor& x) {
    return softmax(model.forward(x, Mode::Eval, nullptr, ParamUse::Frozen)).detach();
}

LossGrad input_loss_grad(const Classifier& model, std::span<const double> x, std::size_t rows,
                         std::span<const int> labels, LossKind kind, double gamma,
                         const std::optional<Tensor>& p_nat) {
    const std::size_t dim = rows == 0 ? 0 : x.size() / rows;
    Tensor xt = Tensor::matrix(rows, dim, std::vector<double>(x.begin(), x.end()), true);
    Tensor probs = softmax(model.forward(xt, Mode::Eval, nullptr, ParamUse::Frozen));
    Tensor loss = loss_by_kind(kind, probs, labels, p_nat, gamma);
    sum(loss).backward();
    LossGrad out;
    out.loss.assign(loss.values().begin(), loss.values().end());
    out.grad.assign(xt.grad().begin(), xt.grad().end());
    for (double g : out.grad)
        if (!std::isfinite(g)) throw NumericError("attack: non-finite input gradient");
    return out;
}

AdvBatch fgsm(const Classifier& model, const Tensor& x, std::span<const int> labels, const AttackSpec& spec,
              Rng& rng) {
    AttackSpec s = spec.normalized();
    s.kind = AttackKind::Fgsm;
    // From a uniform random start the step is alpha; otherwise the full radius.
    const bool uniform_start = s.random_start && !needs_clean_reference(s.loss);
    return iterate_sign(model, x, labels, s, rng, uniform_start ? s.alpha : s.epsilon, 1, false);
}

AdvBatch pgd(const Classifier& model, const Tensor& x, std::span<const int> labels, const AttackSpec& spec,
             Rng& rng) {
    return iterate_sign(model, x, labels, spec, rng, spec.alpha, spec.steps, false);
}

AdvBatch mifgsm(const Classifier& model, const Tensor& x, std::span<const int> labels, const AttackSpec& spec,
                Rng& rng) {
    return iterate_sign(model, x, labels, spec, rng, spec.alpha, spec.steps, true);
}

std::vector<std::size_t> apgd_checkpoints(const AttackSpec& spec) {
    const double n = static_cast<double>(spec.steps);
    auto frac = [n](double f) { return std::max<std::size_t>(static_cast<std::size_t>(f * n), 1); };
    std::size_t phase = frac(spec.apgd_first_check);
    const std::size_t shrink = frac(spec.apgd_decay);
    const std::size_t min_phase = frac(spec.apgd_min_phase);
    std::vector<std::size_t> out;
    std::size_t pos = phase;
    while (pos <= spec.steps) {
        out.push_back(pos - 1);
        phase = std::max(phase > shrink ? phase - shrink : 0, min_phase);
        pos += phase;
    }
    return out;
}

AdvBatch apgd(const Classifier& model, const Tensor& x, std::span<const int> labels, const AttackSpec& spec,
              Rng& rng) {
    AttackSpec sp = spec;
    sp.kind = AttackKind::Apgd;
    const Setup s = prepare(model, x, labels, sp);
    const std::size_t rows = s.rows, dim = s.dim, n = rows * dim;
    AdvBatch out;

    std::vector<double> xa = start_point(s.x0, sp, rng);
    LossGrad lg = input_loss_grad(model, xa, rows, labels, sp.loss, sp.gamma, s.p_nat);
    out.loss_trajectory.push_back(lg.loss);

    std::vector<double> x_best = xa, grad_best = lg.grad, loss_best = lg.loss;
    std::vector<double> grad = lg.grad;
    std::vector<double> x_old = xa;
    std::vector<double> step(rows, 2.0 * sp.epsilon);
    out.step_sizes.push_back(step);

    const double nd = static_cast<double>(sp.steps);
    auto frac = [nd](double f) { return std::max<std::size_t>(static_cast<std::size_t>(f * nd), 1); };
    std::size_t phase = frac(sp.apgd_first_check);
    const std::size_t shrink = frac(sp.apgd_decay);
    const std::size_t min_phase = frac(sp.apgd_min_phase);
    std::size_t since_check = 0;
    std::vector<double> best_at_check = loss_best;
    std::vector<bool> reduced_at_check(rows, true);

    std::vector<double> z(n), moved(n);
    for (std::size_t it = 0; it < sp.steps; ++it) {
        const double a = it > 0 ? sp.apgd_alpha : 1.0;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t d = 0; d < dim; ++d) {
                const std::size_t i = r * dim + d;
                z[i] = xa[i] + step[r] * sign(grad[i]);
            }
        project(z, s.x0, sp.epsilon);
        for (std::size_t i = 0; i < n; ++i) moved[i] = xa[i] + (z[i] - xa[i]) * a + (xa[i] - x_old[i]) * (1.0 - a);
        project(moved, s.x0, sp.epsilon);
        x_old = xa;
        xa = moved;

        lg = input_loss_grad(model, xa, rows, labels, sp.loss, sp.gamma, s.p_nat);
        grad = lg.grad;
        for (std::size_t r = 0; r < rows; ++r) {
            if (lg.loss[r] > loss_best[r]) {
                loss_best[r] = lg.loss[r];
                std::copy_n(xa.begin() + static_cast<long>(r * dim), dim, x_best.begin() + static_cast<long>(r * dim));
                std::copy_n(grad.begin() + static_cast<long>(r * dim), dim,
                            grad_best.begin() + static_cast<long>(r * dim));
            }
        }
        out.loss_trajectory.push_back(lg.loss);

        if (++since_check == phase) {
            const auto& traj = out.loss_trajectory;
            const std::size_t last = traj.size() - 1;
            for (std::size_t r = 0; r < rows; ++r) {
                std::size_t increases = 0;
                for (std::size_t c = 0; c < phase; ++c)
                    if (traj[last - c][r] > traj[last - c - 1][r]) ++increases;
                const bool oscillating =
                    static_cast<double>(increases) <= static_cast<double>(phase) * sp.apgd_rho;
                const bool stalled = !reduced_at_check[r] && best_at_check[r] >= loss_best[r];
                const bool reduce = oscillating || stalled;
                reduced_at_check[r] = reduce;
                best_at_check[r] = loss_best[r];
                if (reduce) {
                    step[r] /= 2.0;
                    std::copy_n(x_best.begin() + static_cast<long>(r * dim), dim,
                                xa.begin() + static_cast<long>(r * dim));
                    std::copy_n(grad_best.begin() + static_cast<long>(r * dim), dim,
                                grad.begin() + static_cast<long>(r * dim));
                }
            }
            out.step_sizes.push_back(step);
            since_check = 0;
            phase = std::max(phase > shrink ? phase - shrink : 0, min_phase);
        }
    }
    out.best_loss = loss_best;
    finish(out, model, s, std::move(x_best), labels, sp);
    return out;
}

AdvBatch run_attack(const Classifier& model, const Tensor& x, std::span<const int> labels, const AttackSpec& spec,
                    Rng& rng) {
    switch (spec.kind) {
    case AttackKind::Fgsm: return fgsm(model, x, labels, spec, rng);
    case AttackKind::Pgd: return pgd(model, x, labels, spec, rng);
    case AttackKind::Mifgsm: return mifgsm(model, x, labels, spec, rng);
    case AttackKind::Apgd: return apgd(model, x, labels, spec, rng);
    }
    throw ParameterError("unknown attack kind");
}

RobustnessMetrics evaluate_robustness(const Classifier& model, const Dataset& data, const AttackSpec& spec, Rng& rng,
                                      std::size_t batch_size) {
    if (data.empty()) throw ParameterError("evaluate_robustness: empty dataset");
    if (batch_size == 0) throw ParameterError("evaluate_robustness: batch size must be >= 1");
    RobustnessMetrics m;
    m.n = data.size();
    for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
        const std::size_t count = std::min(batch_size, data.size() - begin);
        const Dataset chunk = data.slice(begin, count);
        const Tensor x = chunk.all_inputs();
        const AdvBatch adv = run_attack(model, x, chunk.labels, spec, rng);
        auto xv = x.values();
        auto av = adv.x_adv.values();
        for (std::size_t r = 0; r < count; ++r) {
            AttackRecord rec;
            rec.index = begin + r;
            rec.true_label = chunk.labels[r];
            rec.pred_before = adv.pred_before[r];
            rec.pred_after = adv.pred_after[r];
            for (std::size_t d = 0; d < data.dim; ++d)
                rec.linf_norm = std::max(rec.linf_norm, std::abs(av[r * data.dim + d] - xv[r * data.dim + d]));
            rec.loss_final = adv.final_loss[r];
            const bool clean_ok = rec.pred_before == rec.true_label;
            const bool adv_ok = rec.pred_after == rec.true_label;
            m.clean_correct += clean_ok;
            m.robust_correct += adv_ok;
            m.flipped += clean_ok && !adv_ok;
            m.records.push_back(rec);
        }
    }
    const double n = static_cast<double>(m.n);
    m.natural_accuracy = static_cast<double>(m.clean_correct) / n;
    m.robust_accuracy = static_cast<double>(m.robust_correct) / n;
    m.asr = m.clean_correct == 0 ? 0.0 : static_cast<double>(m.flipped) / static_cast<double>(m.clean_correct);
    return m;
}

void write_attack_csv(const std::filesystem::path& path, std::span<const AttackRecord> records) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "index,true_label,pred_before,pred_after,linf_norm,loss_final\n";
    char buf[64];
    for (const auto& r : records) {
        out << r.index << ',' << r.true_label << ',' << r.pred_before << ',' << r.pred_after << ',';
        std::snprintf(buf, sizeof buf, "%.6f", r.linf_norm);
        out << buf << ',';
        std::snprintf(buf, sizeof buf, "%.6f", r.loss_final);
        out << buf << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

} // namespace ctr
