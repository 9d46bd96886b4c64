#include <gtest/gtest.h>

#include <memory>

#include "ctr/analysis.hpp"
#include "ctr/attacks.hpp"
#include "ctr/config.hpp"
#include "ctr/training.hpp"

using namespace ctr;

namespace {

// Natural MNIST-subset models (dropout baseline and MDL), trained once for the whole suite.
class NaturalMnist : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        auto base = config_from_json({{"schema_version", 1}, {"seed", 1}});
        auto [train_set, test_set] = load_datasets(base);
        test_ = std::make_unique<Dataset>(test_set);
        for (const char* method : {"natural_ce", "natural_mdl"}) {
            auto c = config_from_json({{"schema_version", 1}, {"seed", 1}, {"train", {{"method", method}}}});
            auto r = train(c.train, c.model, train_set);
            (std::string(method) == "natural_ce" ? dropout_ : mdl_) = std::make_unique<Classifier>(r.model);
        }
    }
    static void TearDownTestSuite() {
        dropout_.reset();
        mdl_.reset();
        test_.reset();
    }

    static RobustnessMetrics attack(const Classifier& m, AttackKind kind, LossKind loss, double eps,
                                    std::size_t steps = 20, bool random_start = false) {
        AttackSpec a;
        a.kind = kind;
        a.loss = loss;
        a.epsilon = eps;
        a.alpha = eps / 4.0;
        a.steps = steps;
        a.random_start = random_start;
        Rng rng = make_rng(1, Stream::AttackStart);
        return evaluate_robustness(m, *test_, a, rng);
    }

    static std::unique_ptr<Dataset> test_;
    static std::unique_ptr<Classifier> dropout_;
    static std::unique_ptr<Classifier> mdl_;
};

std::unique_ptr<Dataset> NaturalMnist::test_;
std::unique_ptr<Classifier> NaturalMnist::dropout_;
std::unique_ptr<Classifier> NaturalMnist::mdl_;

} // namespace

TEST_F(NaturalMnist, ModelsLearn) {
    EXPECT_GT(accuracy(*dropout_, *test_), 0.85);
    EXPECT_GT(accuracy(*mdl_, *test_), 0.85);
    EXPECT_GE(test_->size(), 500u);
}

TEST_F(NaturalMnist, IteratedAttackBeatsSingleStep) {
    for (const Classifier* m : {dropout_.get(), mdl_.get()}) {
        const auto f = attack(*m, AttackKind::Fgsm, LossKind::Ce, 0.1);
        const auto p = attack(*m, AttackKind::Pgd, LossKind::Ce, 0.1);
        EXPECT_GE(p.asr, f.asr);
    }
}

TEST_F(NaturalMnist, ApgdAtLeastPgdAtEqualBudget) {
    for (double eps : {0.05, 0.1}) {
        const auto p = attack(*dropout_, AttackKind::Pgd, LossKind::Ce, eps);
        const auto a = attack(*dropout_, AttackKind::Apgd, LossKind::Ce, eps);
        EXPECT_GE(a.asr, p.asr) << "eps " << eps;
    }
}

TEST_F(NaturalMnist, StdAttacksAtLeastCrossEntropyAttacks) {
    // A quarter of the default training radius.
    const double eps = 0.025;
    EXPECT_GE(attack(*dropout_, AttackKind::Pgd, LossKind::Std, eps).asr,
              attack(*dropout_, AttackKind::Pgd, LossKind::Ce, eps).asr);
    EXPECT_GE(attack(*dropout_, AttackKind::Fgsm, LossKind::Std, eps).asr,
              attack(*dropout_, AttackKind::Fgsm, LossKind::Ce, eps).asr);
    EXPECT_GE(attack(*dropout_, AttackKind::Apgd, LossKind::Std, eps).asr,
              attack(*dropout_, AttackKind::Apgd, LossKind::Ce, eps).asr);
}

TEST_F(NaturalMnist, MdlHasMoreLowWrongProbabilities) {
    const double bound = 1.0 / 9.0;
    EXPECT_GE(ct_census(*mdl_, *test_, bound).count_below, ct_census(*dropout_, *test_, bound).count_below);
    std::vector<double> th;
    for (int i = 1; i <= 10; ++i) th.push_back(bound * i / 10.0);
    const auto a = ct_sweep(*mdl_, *test_, th);
    const auto b = ct_sweep(*dropout_, *test_, th);
    for (std::size_t i = 0; i < th.size(); ++i) EXPECT_GE(a.y[i], b.y[i]) << "threshold " << th[i];
}

TEST_F(NaturalMnist, MdlFgsmCurveAboveDropout) {
    AttackSpec a;
    a.kind = AttackKind::Fgsm;
    a.random_start = false;
    const std::vector<double> eps = {0.0, 0.05, 0.1, 0.15};
    const auto m = robustness_curve(*mdl_, *test_, a, eps, 1);
    const auto d = robustness_curve(*dropout_, *test_, a, eps, 1);
    for (std::size_t i = 1; i < eps.size(); ++i) EXPECT_GT(m.y[i], d.y[i]) << "eps " << eps[i];
}

TEST_F(NaturalMnist, PgdCurveIsNonincreasing) {
    AttackSpec a;
    a.kind = AttackKind::Pgd;
    a.steps = 10;
    const auto c = robustness_curve(*dropout_, *test_, a, {0.0, 0.025, 0.05, 0.1, 0.2}, 2);
    for (std::size_t i = 1; i < c.y.size(); ++i) EXPECT_LE(c.y[i], c.y[i - 1]);
}
