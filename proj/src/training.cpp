#include "ctr/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ctr/errors.hpp"

namespace ctr {

namespace {

using nlohmann::json;

/// SCE unless the model has two classes and gamma is zero (STD undefined for C = 2).
LossKind outer_loss(std::size_t classes, double gamma) {
    return (classes < 3 && gamma == 0.0) ? LossKind::Ce : LossKind::Sce;
}

LossKind trades_loss(std::size_t classes, double gamma) {
    return (classes < 3 && gamma == 0.0) ? LossKind::Kl : LossKind::Skl;
}

std::string rng_state(const Rng& r) {
    std::ostringstream os;
    os << r;
    return os.str();
}

void restore_rng(Rng& r, const std::string& s) {
    std::istringstream is(s);
    is >> r;
    if (!is) throw std::runtime_error("trainer state: corrupt generator state");
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << text;
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

} // namespace

std::string to_string(TrainMethod m) {
    switch (m) {
    case TrainMethod::NaturalCE: return "natural_ce";
    case TrainMethod::NaturalMSD: return "natural_msd";
    case TrainMethod::NaturalMDL: return "natural_mdl";
    case TrainMethod::MadryAT: return "madry_at";
    case TrainMethod::FastAT: return "fast_at";
    case TrainMethod::FreeAT: return "free_at";
    case TrainMethod::Trades: return "trades";
    }
    return "?";
}

TrainMethod parse_train_method(std::string_view s) {
    for (auto m : {TrainMethod::NaturalCE, TrainMethod::NaturalMSD, TrainMethod::NaturalMDL, TrainMethod::MadryAT,
                   TrainMethod::FastAT, TrainMethod::FreeAT, TrainMethod::Trades})
        if (to_string(m) == s) return m;
    throw ParameterError("unknown training method '" + std::string(s) + "'");
}

bool is_natural(TrainMethod m) {
    return m == TrainMethod::NaturalCE || m == TrainMethod::NaturalMSD || m == TrainMethod::NaturalMDL;
}

bool is_madry_family(TrainMethod m) {
    return m == TrainMethod::MadryAT || m == TrainMethod::FastAT || m == TrainMethod::FreeAT;
}

void TrainSpec::validate(std::size_t classes) const {
    CtrParams{gamma, beta, rho, k}.validate(method == TrainMethod::NaturalMDL);
    if (method == TrainMethod::NaturalMSD && k < 1) throw ParameterError("K must be >= 1");
    if (!(eta > 0.0 && eta <= 100.0)) throw ParameterError("eta must be in (0, 100]");
    if (epochs < 1) throw ParameterError("epochs must be >= 1");
    if (batch_size < 1) throw ParameterError("batch size must be >= 1");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ParameterError("weight decay must be >= 0");
    LrSchedule s = schedule;
    s.total_epochs = epochs;
    s.validate();
    if (!is_natural(method)) {
        if (gamma > 0.0 && classes < 3) throw ParameterError("gamma > 0 needs at least 3 classes");
        if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ParameterError("epsilon must be in [0, 1]");
        if (inner_steps < 1) throw ParameterError("inner steps must be >= 1");
        if (epsilon > 0.0) {
            if (!(inner_alpha > 0.0 && inner_alpha <= epsilon)) {
                throw ParameterError("inner alpha must be in (0, epsilon]");
            }
            if (!(fast_alpha > 0.0 && fast_alpha <= epsilon)) throw ParameterError("fast alpha must be in (0, epsilon]");
        }
        if (method == TrainMethod::FreeAT && replays < 1) throw ParameterError("Free-AT replays must be >= 1");
        if (method == TrainMethod::Trades && !(beta > 0.0)) throw ParameterError("TRADES needs beta > 0");
        if (!(trades_sigma >= 0.0)) throw ParameterError("TRADES sigma must be >= 0");
    }
    if (robust_eval) robust_eval->validate(classes);
}

json EpochRecord::to_json() const {
    json j = {{"epoch", epoch}, {"lr", lr}, {"train_loss", train_loss}, {"nat_acc", nat_acc}};
    if (robust_acc) j["robust_acc"] = *robust_acc;
    if (wall_ms) j["wall_ms"] = *wall_ms;
    return j;
}

EpochRecord EpochRecord::from_json(const json& j) {
    EpochRecord r;
    r.epoch = j.at("epoch").get<std::size_t>();
    r.lr = j.at("lr").get<double>();
    r.train_loss = j.at("train_loss").get<double>();
    r.nat_acc = j.at("nat_acc").get<double>();
    if (j.contains("robust_acc")) r.robust_acc = j["robust_acc"].get<double>();
    if (j.contains("wall_ms")) r.wall_ms = j["wall_ms"].get<double>();
    return r;
}

void Sgd::step(std::vector<Tensor>& params, double lr) {
    if (buffers_.empty()) {
        buffers_.resize(params.size());
    } else if (buffers_.size() != params.size()) {
        throw ContractError("optimizer: parameter list changed");
    }
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto values = params[p].mutable_values();
        std::vector<double>& buf = buffers_[p];
        const bool first = buf.empty();
        if (first) buf.resize(values.size());
        const bool has = params[p].has_grad();
        auto grad = has ? params[p].grad() : std::span<const double>{};
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double d = (has ? grad[i] : 0.0) + weight_decay_ * values[i];
            buf[i] = first ? d : momentum_ * buf[i] + d;
            values[i] -= lr * buf[i];
        }
    }
}

Tensor adversarial_objective(const Classifier& model, const Tensor& x_adv, std::span<const int> labels,
                             double gamma) {
    Tensor probs = softmax(model.forward(x_adv, Mode::Eval));
    return mean(loss_by_kind(outer_loss(model.classes(), gamma), probs, labels, std::nullopt, gamma));
}

Tensor trades_objective(const Classifier& model, const Tensor& x, const Tensor& x_adv, std::span<const int> labels,
                        double gamma, double beta) {
    Tensor p_nat = softmax(model.forward(x, Mode::Eval));
    Tensor p_adv = softmax(model.forward(x_adv, Mode::Eval));
    Tensor natural = loss_by_kind(outer_loss(model.classes(), gamma), p_nat, labels, std::nullopt, gamma);
    Tensor robust = loss_by_kind(trades_loss(model.classes(), gamma), p_adv, labels, p_nat, gamma);
    return mean(add(natural, scale(robust, beta)));
}

Tensor natural_objective(const Classifier& model, const TrainSpec& spec, const Tensor& x,
                         std::span<const int> labels, Rng& rng) {
    switch (spec.method) {
    case TrainMethod::NaturalCE:
        return mean(cross_entropy(softmax(model.forward(x, Mode::Train, &rng)), labels));
    case TrainMethod::NaturalMSD: {
        MultiSampleOutput out = model.forward_multisample(x, spec.k, rng);
        Tensor ce;
        for (const auto& p : out.probs) {
            Tensor l = cross_entropy(p, labels);
            ce = ce.defined() ? add(ce, l) : l;
        }
        return mean(scale(ce, 1.0 / static_cast<double>(out.k())));
    }
    case TrainMethod::NaturalMDL: {
        MultiSampleOutput out = model.forward_multisample(x, spec.k, rng);
        MaskResult mask = compute_mask(out.probs, labels, spec.eta);
        return mean(mdl_loss(out.probs, labels, mask.bits, spec.rho, spec.diversity));
    }
    default: throw ParameterError("natural_objective: not a natural method");
    }
}

Tensor madry_examples(const Classifier& model, const TrainSpec& spec, const Tensor& x, std::span<const int> labels,
                      Rng& rng) {
    AttackSpec a;
    a.kind = AttackKind::Pgd;
    a.epsilon = spec.epsilon;
    a.alpha = spec.inner_alpha;
    a.steps = spec.inner_steps;
    a.loss = outer_loss(model.classes(), spec.gamma);
    a.gamma = spec.gamma;
    a.random_start = true;
    return pgd(model, x, labels, a, rng).x_adv;
}

Tensor fast_examples(const Classifier& model, const TrainSpec& spec, const Tensor& x, std::span<const int> labels,
                     Rng& rng) {
    AttackSpec a;
    a.kind = AttackKind::Fgsm;
    a.epsilon = spec.epsilon;
    a.alpha = spec.fast_alpha;
    a.steps = 1;
    a.loss = outer_loss(model.classes(), spec.gamma);
    a.gamma = spec.gamma;
    a.random_start = true;
    return fgsm(model, x, labels, a, rng).x_adv;
}

Tensor trades_examples(const Classifier& model, const TrainSpec& spec, const Tensor& x, std::span<const int> labels,
                       Rng& rng) {
    AttackSpec a;
    a.kind = AttackKind::Pgd;
    a.epsilon = spec.epsilon;
    a.alpha = spec.inner_alpha;
    a.steps = spec.inner_steps;
    a.loss = trades_loss(model.classes(), spec.gamma);
    a.gamma = spec.gamma;
    a.random_start = false;
    a.kl_start_sigma = spec.trades_sigma;
    return pgd(model, x, labels, a, rng).x_adv;
}

double eval_accuracy(const Classifier& model, const Dataset& data, std::size_t batch_size) {
    if (data.empty()) throw ParameterError("accuracy: empty dataset");
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
        const std::size_t count = std::min(batch_size, data.size() - begin);
        const Dataset chunk = data.slice(begin, count);
        const auto pred = argmax_rows(model.forward(chunk.all_inputs(), Mode::Eval, nullptr, ParamUse::Frozen));
        for (std::size_t i = 0; i < count; ++i) correct += pred[i] == chunk.labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::vector<EpochRecord> read_history(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<EpochRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        // An unterminated last line is a torn write from an interrupted run.
        if (in.eof()) {
            try {
                out.push_back(EpochRecord::from_json(json::parse(line)));
            } catch (const json::exception&) {
            }
            break;
        }
        out.push_back(EpochRecord::from_json(json::parse(line)));
    }
    return out;
}

TrainResult train(const TrainSpec& spec, const ModelConfig& model_config, const Dataset& train_data,
                  const Dataset* eval_data, const TrainIo& io) {
    model_config.validate();
    spec.validate(model_config.classes);
    train_data.validate();
    if (train_data.empty()) throw ParameterError("train: empty training set");
    if (train_data.classes != model_config.classes || train_data.dim != model_config.input_dim) {
        throw DimensionError("train: dataset does not match the model configuration");
    }
    if (io.resume && !(io.checkpoint && io.state)) throw ParameterError("train: resume needs checkpoint and state paths");

    LrSchedule schedule = spec.schedule;
    schedule.total_epochs = spec.epochs;

    Rng init_rng = make_rng(spec.seed, Stream::Init);
    Rng drop_rng = make_rng(spec.seed, Stream::Dropout);
    Rng shuffle_rng = make_rng(spec.seed, Stream::Shuffle);
    Rng attack_rng = make_rng(spec.seed, Stream::AttackStart);
    Rng eval_rng = make_rng(spec.seed, Stream::Eval);

    TrainResult result{Classifier(model_config, init_rng), {}};
    Classifier& model = result.model;
    Sgd opt(spec.momentum, spec.weight_decay);
    std::vector<double> free_delta(std::min(spec.batch_size, train_data.size()) * train_data.dim, 0.0);
    std::size_t start_epoch = 0;

    if (io.resume && std::filesystem::exists(*io.state)) {
        std::ifstream in(*io.state);
        const json st = json::parse(in);
        start_epoch = st.at("epoch").get<std::size_t>();
        model = Classifier::from_json(st.at("model"));
        restore_rng(drop_rng, st.at("rng").at("dropout").get<std::string>());
        restore_rng(shuffle_rng, st.at("rng").at("shuffle").get<std::string>());
        restore_rng(attack_rng, st.at("rng").at("attack").get<std::string>());
        restore_rng(eval_rng, st.at("rng").at("eval").get<std::string>());
        opt.set_buffers(st.at("momentum_buffers").get<std::vector<std::vector<double>>>());
        free_delta = st.at("free_delta").get<std::vector<double>>();
        if (io.history && std::filesystem::exists(*io.history)) {
            auto previous = read_history(*io.history);
            if (previous.size() < start_epoch) throw std::runtime_error("resume: history shorter than state");
            previous.resize(start_epoch);
            result.history = previous;
        }
    }
    if (io.history) {
        // Rewrite the kept prefix so a partially written epoch never survives.
        std::string text;
        for (const auto& r : result.history) text += r.to_json().dump() + "\n";
        write_text_atomic(*io.history, text);
    }

    const Dataset& eval_set = eval_data ? *eval_data : train_data;
    const std::size_t n = train_data.size();
    const std::size_t batches = (n + spec.batch_size - 1) / spec.batch_size;
    const std::size_t dim = train_data.dim;

    for (std::size_t epoch = start_epoch; epoch < spec.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_total = 0.0;
        EpochRecord rec;
        rec.epoch = epoch + 1;
        for (std::size_t b = 0; b < batches; ++b) {
            const std::size_t begin = b * spec.batch_size;
            const std::size_t count = std::min(spec.batch_size, n - begin);
            std::span<const std::size_t> rows(order.data() + begin, count);
            const Tensor x = train_data.inputs_for(rows);
            const std::vector<int> y = train_data.labels_for(rows);
            const double lr = schedule.lr_at(epoch, static_cast<double>(b) / static_cast<double>(batches));
            if (b == 0) rec.lr = lr;

            double batch_loss = 0.0;
            switch (spec.method) {
            case TrainMethod::NaturalCE:
            case TrainMethod::NaturalMSD:
            case TrainMethod::NaturalMDL: {
                Tensor loss = natural_objective(model, spec, x, y, drop_rng);
                model.zero_grad();
                loss.backward();
                opt.step(model.parameters(), lr);
                batch_loss = loss.item();
                break;
            }
            case TrainMethod::MadryAT:
            case TrainMethod::FastAT: {
                Tensor x_adv = spec.method == TrainMethod::MadryAT ? madry_examples(model, spec, x, y, attack_rng)
                                                                   : fast_examples(model, spec, x, y, attack_rng);
                Tensor loss = adversarial_objective(model, x_adv, y, spec.gamma);
                model.zero_grad();
                loss.backward();
                opt.step(model.parameters(), lr);
                batch_loss = loss.item();
                break;
            }
            case TrainMethod::FreeAT: {
                auto xv = x.values();
                for (std::size_t r = 0; r < spec.replays; ++r) {
                    std::vector<double> adv(count * dim);
                    for (std::size_t i = 0; i < adv.size(); ++i)
                        adv[i] = std::clamp(xv[i] + free_delta[i], 0.0, 1.0);
                    Tensor x_adv = Tensor::matrix(count, dim, std::move(adv), true);
                    Tensor loss = adversarial_objective(model, x_adv, y, spec.gamma);
                    model.zero_grad();
                    loss.backward();
                    auto gx = x_adv.grad();
                    for (std::size_t i = 0; i < count * dim; ++i) {
                        const double s = gx[i] > 0.0 ? 1.0 : (gx[i] < 0.0 ? -1.0 : 0.0);
                        free_delta[i] = std::clamp(free_delta[i] + spec.epsilon * s, -spec.epsilon, spec.epsilon);
                    }
                    opt.step(model.parameters(), lr);
                    batch_loss += loss.item() / static_cast<double>(spec.replays);
                }
                break;
            }
            case TrainMethod::Trades: {
                Tensor x_adv = trades_examples(model, spec, x, y, attack_rng);
                Tensor loss = trades_objective(model, x, x_adv, y, spec.gamma, spec.beta);
                model.zero_grad();
                loss.backward();
                opt.step(model.parameters(), lr);
                batch_loss = loss.item();
                break;
            }
            }
            if (!std::isfinite(batch_loss)) throw NumericError("train: non-finite loss");
            loss_total += batch_loss * static_cast<double>(count);
        }
        rec.train_loss = loss_total / static_cast<double>(n);
        rec.nat_acc = eval_accuracy(model, eval_set);
        if (spec.robust_eval) rec.robust_acc = evaluate_robustness(model, eval_set, *spec.robust_eval, eval_rng).robust_accuracy;
        if (io.record_wall_time) {
            rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        }
        result.history.push_back(rec);

        if (io.history) {
            std::ofstream out(*io.history, std::ios::app);
            out << rec.to_json().dump() << "\n";
            if (!out) throw std::runtime_error("cannot append history");
        }
        if (io.checkpoint) model.save(*io.checkpoint);
        if (io.state) {
            json st = {{"epoch", epoch + 1},
                       {"rng",
                        {{"dropout", rng_state(drop_rng)},
                         {"shuffle", rng_state(shuffle_rng)},
                         {"attack", rng_state(attack_rng)},
                         {"eval", rng_state(eval_rng)}}},
                       {"momentum_buffers", opt.buffers()},
                       {"free_delta", free_delta},
                       {"model", model.to_json()}};
            write_text_atomic(*io.state, st.dump());
        }
        if (io.on_epoch && !io.on_epoch(rec)) break;
    }
    return result;
}

TrainResult train_natural(const TrainSpec& spec, const ModelConfig& model_config, const Dataset& train_data,
                          const Dataset* eval_data, const TrainIo& io) {
    if (!is_natural(spec.method)) throw ParameterError("train_natural: method " + to_string(spec.method));
    return train(spec, model_config, train_data, eval_data, io);
}

TrainResult train_madry_family(const TrainSpec& spec, const ModelConfig& model_config, const Dataset& train_data,
                               const Dataset* eval_data, const TrainIo& io) {
    if (!is_madry_family(spec.method)) throw ParameterError("train_madry_family: method " + to_string(spec.method));
    return train(spec, model_config, train_data, eval_data, io);
}

TrainResult train_trades(const TrainSpec& spec, const ModelConfig& model_config, const Dataset& train_data,
                         const Dataset* eval_data, const TrainIo& io) {
    if (spec.method != TrainMethod::Trades) throw ParameterError("train_trades: method " + to_string(spec.method));
    return train(spec, model_config, train_data, eval_data, io);
}

} // namespace ctr
