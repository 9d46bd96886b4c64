#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ctr/errors.hpp"
#include "ctr/losses.hpp"
#include "diversity_oracle.hpp"
#include "test_util.hpp"

using namespace ctr;
using ctr::testing::close_rel;
using ctr::testing::labels_of;
using ctr::testing::random_prob;
using ctr::testing::rows_tensor;

namespace {

ProbVector pv(std::vector<double> probs, int label) { return ProbVector{std::move(probs), label}; }

std::vector<double> values_of(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

} // namespace

TEST(CrossEntropy, Examples) {
    EXPECT_EQ(cross_entropy(pv({0.0, 1.0, 0.0}, 1)), 0.0);
    EXPECT_NEAR(cross_entropy(pv(std::vector<double>(10, 0.1), 3)), 2.302585, 1e-6);
    EXPECT_NEAR(cross_entropy(pv({0.5, 0.25, 0.25}, 0)), 0.693147, 1e-6);
    EXPECT_NEAR(cross_entropy(pv({1.0, 0.0}, 1)), -std::log(kProbFloor), 1e-9);
}

TEST(KlDivergence, Examples) {
    auto p = pv({0.2, 0.3, 0.5}, 0);
    EXPECT_EQ(kl_divergence(p, p), 0.0);
    EXPECT_NEAR(kl_divergence(pv({0.5, 0.5}, 0), pv({1.0, 0.0}, 0)), std::log(2.0), 1e-12);
    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
        auto a = random_prob(rng, 6), b = random_prob(rng, 6);
        EXPECT_GE(kl_divergence(a, b), 0.0);
    }
}

TEST(CosineDiversity, Examples) {
    auto a = pv({0.5, 0.3, 0.2}, 0);
    EXPECT_NEAR(cosine_diversity(a, a).value, 1.0, 1e-15);
    EXPECT_EQ(cosine_diversity(pv({0.5, 0.5, 0.0}, 0), pv({0.5, 0.0, 0.5}, 0)).value, 0.0);
    // Wrong vectors [1,0] and [1,1] up to scale.
    auto v = cosine_diversity(pv({0.0, 1.0, 0.0}, 0), pv({0.0, 0.5, 0.5}, 0));
    EXPECT_NEAR(v.value, 1.0 / std::sqrt(2.0), 1e-12);
    EXPECT_NEAR(v.value, 0.7071, 1e-4);
    EXPECT_FALSE(v.degenerate);
}

TEST(CosineDiversity, DegenerateWrongVector) {
    auto v = cosine_diversity(pv({1.0, 0.0, 0.0}, 0), pv({0.5, 0.25, 0.25}, 0));
    EXPECT_TRUE(v.degenerate);
    EXPECT_EQ(v.value, 0.0);
    EXPECT_THROW(cosine_diversity(pv({1.0, 0.0, 0.0}, 0), pv({1.0, 0.0, 0.0}, 1)), ParameterError);
}

TEST(PccDiversity, Examples) {
    auto a = pv({0.1, 0.5, 0.3, 0.1}, 0);
    EXPECT_NEAR(pcc_diversity(a, a).value, 1.0, 1e-12);
    // Second wrong vector is -centered(first) + const.
    auto b = pv({0.1, 0.1, 0.3, 0.5}, 0);
    EXPECT_NEAR(pcc_diversity(a, b).value, 0.0, 1e-12);
    auto flat = pcc_diversity(pv({0.4, 0.2, 0.2, 0.2}, 0), a);
    EXPECT_TRUE(flat.degenerate);
    EXPECT_EQ(flat.value, 0.5);
    EXPECT_THROW(pcc_diversity(pv({0.5, 0.5}, 0), pv({0.5, 0.5}, 0)), ParameterError);
}

TEST(PccDiversity, IndependentVectorsAverageOneHalf) {
    Rng rng(42);
    double total = 0.0;
    const int draws = 1000;
    for (int i = 0; i < draws; ++i) {
        auto a = random_prob(rng, 10);
        auto b = random_prob(rng, 10);
        b.label = a.label;
        total += pcc_diversity(a, b).value;
    }
    EXPECT_NEAR(total / draws, 0.5, 0.05);
}

TEST(Mask, Examples) {
    const std::vector<double> nll = {0.1, 0.2, 0.9, 1.5};
    auto m = compute_mask_from_nll(nll, 50.0);
    EXPECT_EQ(m.bits, (std::vector<double>{1, 1, 0, 0}));
    EXPECT_EQ(m.threshold, 0.2);
    EXPECT_EQ(compute_mask_from_nll(nll, 100.0).bits, (std::vector<double>{1, 1, 1, 1}));
    const std::vector<double> same(7, 0.4);
    for (double eta : {1.0, 30.0, 70.0, 100.0}) EXPECT_EQ(compute_mask_from_nll(same, eta).bits, std::vector<double>(7, 1.0));
}

TEST(Mask, NearestRankOnTen) {
    std::vector<double> nll(10);
    std::iota(nll.begin(), nll.end(), 1.0);
    for (double eta : {70.0, 80.0, 90.0}) {
        auto m = compute_mask_from_nll(nll, eta);
        EXPECT_EQ(m.threshold, eta / 10.0);
        EXPECT_EQ(std::accumulate(m.bits.begin(), m.bits.end(), 0.0), eta / 10.0);
    }
}

TEST(Mask, Errors) {
    const std::vector<double> nll = {0.1};
    EXPECT_THROW(compute_mask_from_nll(nll, 0.0), ParameterError);
    EXPECT_THROW(compute_mask_from_nll(nll, 100.5), ParameterError);
    EXPECT_THROW(compute_mask_from_nll({}, 50.0), ParameterError);
}

TEST(Mask, FromProbVectors) {
    std::vector<ProbVector> batch = {pv({0.9, 0.1, 0.0}, 0), pv({0.2, 0.8, 0.0}, 0), pv({0.5, 0.5, 0.0}, 0)};
    auto m = compute_mask(std::span<const ProbVector>(batch), 60.0);
    EXPECT_EQ(m.bits, (std::vector<double>{1, 0, 1}));
}

TEST(Mdl, Examples) {
    SubNetOutputs same{{pv({0.5, 0.3, 0.2}, 0), pv({0.5, 0.3, 0.2}, 0)}};
    const double ce = std::log(2.0);
    EXPECT_NEAR(mdl_loss(same, 0.0, 1.0), ce, 1e-15);
    EXPECT_NEAR(mdl_loss(same, 1.0, 1.0), ce + 1.0, 1e-12);
    SubNetOutputs ortho{{pv({0.5, 0.5, 0.0}, 0), pv({0.5, 0.0, 0.5}, 0)}};
    EXPECT_NEAR(mdl_loss(ortho, 1.0, 1.0), ce, 1e-15);
    SubNetOutputs one{{pv({0.5, 0.5, 0.0}, 0)}};
    EXPECT_THROW(mdl_loss(one, 1.0, 1.0), ParameterError);
}

TEST(Mdl, OrthogonalTermStaysInUnitInterval) {
    Rng rng(8);
    for (int i = 0; i < 50; ++i) {
        SubNetOutputs outs;
        auto base = random_prob(rng, 5);
        for (int k = 0; k < 4; ++k) {
            auto p = random_prob(rng, 5);
            p.label = base.label;
            outs.probs.push_back(p);
        }
        for (auto kind : {Diversity::Cosine, Diversity::Pcc}) {
            const double t = orthogonal_term(outs, kind);
            EXPECT_GE(t, 0.0);
            EXPECT_LE(t, 1.0 + 1e-12);
        }
    }
}

TEST(StdLoss, Examples) {
    EXPECT_EQ(std_loss(pv({0.4, 0.2, 0.2, 0.2}, 0)), 0.0);
    EXPECT_NEAR(std_loss(pv({0.4, 0.1, 0.2, 0.3}, 0)), 0.1, 1e-12);
    EXPECT_NEAR(std_loss(pv({0.4, 0.3, 0.1, 0.2}, 0)), 0.1, 1e-12);
    EXPECT_NEAR(std_loss(pv({0.1, 0.4, 0.2, 0.3}, 1)), 0.1, 1e-12);
    EXPECT_THROW(std_loss(pv({0.5, 0.5}, 0)), ParameterError);
}

TEST(SceLoss, Examples) {
    Rng rng(2);
    for (int i = 0; i < 100; ++i) {
        auto p = random_prob(rng, 10);
        EXPECT_EQ(sce_loss(p, 0.0), cross_entropy(p));
        EXPECT_GE(sce_loss(p, 2.0), cross_entropy(p));
    }
    auto flat = pv({0.4, 0.2, 0.2, 0.2}, 0);
    EXPECT_EQ(sce_loss(flat, 3.0), cross_entropy(flat));
    EXPECT_THROW(sce_loss(pv({0.5, 0.5}, 0), 1.0), ParameterError);
}

TEST(SklLoss, Examples) {
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        auto a = random_prob(rng, 10);
        auto b = random_prob(rng, 10);
        b.label = a.label;
        EXPECT_EQ(skl_loss(a, b, 0.0), kl_divergence(a, b));
        EXPECT_GE(skl_loss(a, b, 2.0), kl_divergence(a, b));
        EXPECT_EQ(skl_loss(a, a, 5.0), 0.0);
    }
}

TEST(CtBound, ZeroSpreadCapsWrongProbabilities) {
    Rng rng(4);
    for (int i = 0; i < 100; ++i) {
        auto p = random_prob(rng, 10);
        const double each = (1.0 - p.correct()) / 9.0;
        for (std::size_t c = 0; c < 10; ++c)
            if (static_cast<int>(c) != p.label) p.probs[c] = each;
        ASSERT_LE(std_loss(p), 1e-9);
        for (double w : p.wrong()) EXPECT_LE(w, 1.0 / 9.0 + 1e-6);
    }
}

TEST(Gradients, CrossEntropyIgnoresWrongCategories) {
    Rng rng(5);
    for (int i = 0; i < 50; ++i) {
        auto p = random_prob(rng, 10);
        auto g = cross_entropy_grad(p);
        for (std::size_t c = 0; c < 10; ++c) {
            if (static_cast<int>(c) == p.label) EXPECT_LT(g[c], 0.0);
            else EXPECT_EQ(g[c], 0.0);
        }
    }
}

TEST(Gradients, StdSignsFollowDeviationFromWrongMean) {
    Rng rng(6);
    for (int i = 0; i < 50; ++i) {
        auto p = random_prob(rng, 10);
        auto g = std_loss_grad(p);
        const auto w = p.wrong();
        const double mean = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
        EXPECT_EQ(g[static_cast<std::size_t>(p.label)], 0.0);
        for (std::size_t c = 0; c < 10; ++c) {
            if (static_cast<int>(c) == p.label) continue;
            EXPECT_EQ(g[c] > 0.0, p.probs[c] > mean);
            EXPECT_EQ(g[c] < 0.0, p.probs[c] < mean);
        }
    }
}

TEST(Gradients, StdMonotoneInProbability) {
    Rng rng(7);
    for (int i = 0; i < 50; ++i) {
        auto p = random_prob(rng, 10);
        auto g = std_loss_grad(p);
        for (std::size_t a = 0; a < 10; ++a) {
            for (std::size_t b = 0; b < 10; ++b) {
                if (static_cast<int>(a) == p.label || static_cast<int>(b) == p.label) continue;
                if (p.probs[a] > p.probs[b]) {
                    EXPECT_GT(g[a], g[b]);
                }
            }
        }
    }
}

TEST(Gradients, SceNegativeOnCorrectClass) {
    Rng rng(8);
    for (int i = 0; i < 50; ++i) {
        auto p = random_prob(rng, 10);
        for (double gamma : {0.0, 1.0, 3.0, 10.0}) EXPECT_LT(sce_loss_grad(p, gamma)[static_cast<std::size_t>(p.label)], 0.0);
    }
}

TEST(Gradients, ClosedFormsMatchFiniteDifferences) {
    Rng rng(9);
    for (int i = 0; i < 50; ++i) {
        const auto p = random_prob(rng, 10);
        auto as_pv = [&](const std::vector<double>& x) { return ProbVector{x, p.label}; };
        struct Case {
            std::function<double(const ProbVector&)> f;
            std::vector<double> g;
        };
        const Case cases[] = {
            {[](const ProbVector& q) { return cross_entropy(q); }, cross_entropy_grad(p)},
            {[](const ProbVector& q) { return std_loss(q); }, std_loss_grad(p)},
            {[](const ProbVector& q) { return sce_loss(q, 2.0); }, sce_loss_grad(p, 2.0)},
        };
        for (const auto& c : cases) {
            auto num = ctr::testing::numeric_grad([&](const std::vector<double>& x) { return c.f(as_pv(x)); }, p.probs);
            for (std::size_t k = 0; k < 10; ++k) EXPECT_TRUE(close_rel(c.g[k], num[k], 1e-4, 1e-9)) << c.g[k] << " vs " << num[k];
        }
    }
}

TEST(TensorRoute, MatchesScalarRoute) {
    Rng rng(10);
    std::vector<ProbVector> a, b;
    for (int i = 0; i < 20; ++i) {
        a.push_back(random_prob(rng, 6));
        auto q = random_prob(rng, 6);
        q.label = a.back().label;
        b.push_back(q);
    }
    const auto labels = labels_of(a);
    auto ta = rows_tensor(a), tb = rows_tensor(b);
    const auto ce = values_of(cross_entropy(ta, labels));
    const auto kl = values_of(kl_divergence(ta, tb));
    const auto sd = values_of(std_loss(ta, labels));
    const auto sce = values_of(sce_loss(ta, labels, 1.5));
    const auto skl = values_of(skl_loss(ta, tb, labels, 1.5));
    const auto cos = values_of(diversity(Diversity::Cosine, ta, tb, labels));
    const auto pcc = values_of(diversity(Diversity::Pcc, ta, tb, labels));
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_NEAR(ce[i], cross_entropy(a[i]), 1e-12);
        EXPECT_NEAR(kl[i], kl_divergence(a[i], b[i]), 1e-12);
        EXPECT_NEAR(sd[i], std_loss(a[i]), 1e-12);
        EXPECT_NEAR(sce[i], sce_loss(a[i], 1.5), 1e-12);
        EXPECT_NEAR(skl[i], skl_loss(a[i], b[i], 1.5), 1e-12);
        EXPECT_NEAR(cos[i], cosine_diversity(a[i], b[i]).value, 1e-12);
        EXPECT_NEAR(pcc[i], pcc_diversity(a[i], b[i]).value, 1e-12);
    }
}

TEST(TensorRoute, DegenerateRowsMatchScalarConventions) {
    std::vector<ProbVector> a = {pv({1.0, 0.0, 0.0}, 0), pv({0.4, 0.3, 0.3}, 0)};
    std::vector<ProbVector> b = {pv({0.5, 0.25, 0.25}, 0), pv({0.2, 0.5, 0.3}, 0)};
    const auto labels = labels_of(a);
    auto cos = values_of(diversity(Diversity::Cosine, rows_tensor(a), rows_tensor(b), labels));
    auto pcc = values_of(diversity(Diversity::Pcc, rows_tensor(a), rows_tensor(b), labels));
    EXPECT_EQ(cos[0], 0.0);
    EXPECT_EQ(pcc[0], 0.5);
    EXPECT_EQ(pcc[1], 0.5);
    EXPECT_EQ(values_of(std_loss(rows_tensor(a), labels))[0], 0.0);
}

TEST(TensorRoute, GradientsMatchScalarFiniteDifferences) {
    Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<ProbVector> a, b;
        for (int i = 0; i < 4; ++i) {
            a.push_back(random_prob(rng, 5));
            auto q = random_prob(rng, 5);
            q.label = a.back().label;
            b.push_back(q);
        }
        const auto labels = labels_of(a);
        const double gamma = 1.3;
        using Scalar = std::function<double(const ProbVector&, const ProbVector&)>;
        using Batched = std::function<Tensor(const Tensor&, const Tensor&)>;
        const std::vector<std::pair<Scalar, Batched>> cases = {
            {[](auto& x, auto&) { return cross_entropy(x); }, [&](auto& x, auto&) { return cross_entropy(x, labels); }},
            {[](auto& x, auto& y) { return kl_divergence(x, y); }, [&](auto& x, auto& y) { return kl_divergence(x, y); }},
            {[](auto& x, auto&) { return std_loss(x); }, [&](auto& x, auto&) { return std_loss(x, labels); }},
            {[&](auto& x, auto&) { return sce_loss(x, gamma); }, [&](auto& x, auto&) { return sce_loss(x, labels, gamma); }},
            {[&](auto& x, auto& y) { return skl_loss(x, y, gamma); },
             [&](auto& x, auto& y) { return skl_loss(x, y, labels, gamma); }},
            {[](auto& x, auto& y) { return cosine_diversity(x, y).value; },
             [&](auto& x, auto& y) { return diversity(Diversity::Cosine, x, y, labels); }},
            {[](auto& x, auto& y) { return pcc_diversity(x, y).value; },
             [&](auto& x, auto& y) { return diversity(Diversity::Pcc, x, y, labels); }},
        };
        for (const auto& [scalar, batched] : cases) {
            auto ta = rows_tensor(a, true), tb = rows_tensor(b, true);
            sum(batched(ta, tb)).backward();
            for (int which = 0; which < 2; ++which) {
                std::vector<double> flat;
                for (const auto& p : which == 0 ? a : b) flat.insert(flat.end(), p.probs.begin(), p.probs.end());
                auto f = [&](const std::vector<double>& x) {
                    double total = 0.0;
                    for (std::size_t r = 0; r < a.size(); ++r) {
                        ProbVector row{{x.begin() + static_cast<long>(r * 5), x.begin() + static_cast<long>(r * 5 + 5)},
                                       labels[r]};
                        total += which == 0 ? scalar(row, b[r]) : scalar(a[r], row);
                    }
                    return total;
                };
                const auto num = ctr::testing::numeric_grad(f, flat);
                const Tensor& t = which == 0 ? ta : tb;
                std::vector<double> ana(num.size(), 0.0);
                if (t.has_grad()) ana.assign(t.grad().begin(), t.grad().end());
                for (std::size_t k = 0; k < num.size(); ++k)
                    EXPECT_TRUE(close_rel(ana[k], num[k], 1e-4, 1e-8)) << "input " << which << " elem " << k << ": "
                                                                       << ana[k] << " vs " << num[k];
            }
        }
    }
}

TEST(TensorRoute, MdlMatchesScalarAndDegeneratesToMeanCe) {
    Rng rng(12);
    const std::size_t k = 4, rows = 6;
    std::vector<std::vector<ProbVector>> subs(k);
    std::vector<int> labels;
    for (std::size_t r = 0; r < rows; ++r) labels.push_back(static_cast<int>(r % 5));
    for (auto& s : subs) {
        for (std::size_t r = 0; r < rows; ++r) {
            auto p = random_prob(rng, 5);
            p.label = labels[r];
            s.push_back(p);
        }
    }
    std::vector<Tensor> probs;
    for (const auto& s : subs) probs.push_back(rows_tensor(s));
    const std::vector<double> mask = {1, 0, 1, 1, 0, 1};
    auto batched = values_of(mdl_loss(probs, labels, mask, 0.7, Diversity::Cosine));
    auto plain = values_of(mdl_loss(probs, labels, mask, 0.0, Diversity::Cosine));
    for (std::size_t r = 0; r < rows; ++r) {
        SubNetOutputs outs;
        double mean_ce = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            outs.probs.push_back(subs[i][r]);
            mean_ce += cross_entropy(subs[i][r]);
        }
        mean_ce /= static_cast<double>(k);
        EXPECT_NEAR(batched[r], mdl_loss(outs, mask[r], 0.7), 1e-12);
        EXPECT_EQ(plain[r], mean_ce);
    }
}

TEST(LossByKind, RequiresCleanReferenceForKl) {
    std::vector<ProbVector> a = {pv({0.5, 0.3, 0.2}, 0)};
    const auto labels = labels_of(a);
    EXPECT_THROW(loss_by_kind(LossKind::Kl, rows_tensor(a), labels, std::nullopt, 1.0), ContractError);
    EXPECT_THROW(loss_by_kind(LossKind::Skl, rows_tensor(a), labels, std::nullopt, 1.0), ContractError);
    EXPECT_NO_THROW(loss_by_kind(LossKind::Kl, rows_tensor(a), labels, rows_tensor(a), 1.0));
}

TEST(Names, RoundTrip) {
    for (auto k : {LossKind::Ce, LossKind::Kl, LossKind::Std, LossKind::Sce, LossKind::Skl})
        EXPECT_EQ(parse_loss_kind(to_string(k)), k);
    for (auto d : {Diversity::Cosine, Diversity::Pcc}) EXPECT_EQ(parse_diversity(to_string(d)), d);
    EXPECT_THROW(parse_loss_kind("focal"), ParameterError);
}

TEST(CtrParams, Validation) {
    CtrParams p;
    EXPECT_NO_THROW(p.validate(true));
    p.gamma = -0.1;
    EXPECT_THROW(p.validate(false), ParameterError);
    p = CtrParams{};
    p.k = 1;
    EXPECT_THROW(p.validate(true), ParameterError);
    EXPECT_NO_THROW(p.validate(false));
}

TEST(OrthogonalMinimum, SmallCaseReachesAxisConfiguration) {
    std::mt19937_64 rng(2024);
    const double target = ctr::testing::axis_parallel_minimum(4, 2);
    EXPECT_EQ(target, 2.0);
    int hits = 0;
    for (int s = 0; s < 20; ++s) {
        auto run = ctr::testing::minimize_pairwise_cosine(4, 2, rng);
        if (std::abs(run.value - target) <= 1e-3) ++hits;
        // The library's normalized orthogonal term agrees with the oracle objective.
        SubNetOutputs outs;
        for (const auto& v : run.vectors) {
            const double s1 = v[0] + v[1];
            outs.probs.push_back(ProbVector{{0.0, v[0] / s1, v[1] / s1}, 0});
        }
        EXPECT_NEAR(orthogonal_term(outs) * 6.0, run.value, 1e-9);
    }
    EXPECT_GE(hits, 18);
}
