#include <gtest/gtest.h>

#include "ctr/errors.hpp"
#include "ctr/schedule.hpp"

using namespace ctr;

TEST(Warmup, FactorsFollowRecurrence) {
    const std::size_t horizon = 5;
    auto k = warmup_factors(horizon);
    ASSERT_EQ(k.size(), horizon + 1);
    EXPECT_EQ(k[0], 0.001);
    EXPECT_NEAR(k[1], 0.2008, 1e-12);
    double ref = 0.001;
    for (std::size_t i = 1; i <= horizon; ++i) {
        const double f = static_cast<double>(i) / static_cast<double>(horizon);
        ref = ref * (1.0 - f) + f;
        EXPECT_NEAR(k[i], ref, 1e-12);
    }
    EXPECT_EQ(k[horizon], 1.0);
}

TEST(Warmup, FactorByEpoch) {
    auto k = warmup_factors(3);
    for (std::size_t e = 1; e <= 4; ++e) EXPECT_EQ(warmup_factor(e, 3), k[e - 1]);
    EXPECT_EQ(warmup_factor(5, 3), 1.0);
    EXPECT_EQ(warmup_factor(100, 3), 1.0);
}

TEST(Multistep, DropsAtMilestones) {
    LrSchedule s;
    s.total_epochs = 200;
    s.init_lr = 0.01;
    s.milestones = {0.5, 0.75};
    EXPECT_DOUBLE_EQ(s.lr_at(0), 0.01);
    EXPECT_DOUBLE_EQ(s.lr_at(99), 0.01);
    EXPECT_NEAR(s.lr_at(100), 0.001, 1e-15);
    EXPECT_NEAR(s.lr_at(120), 0.001, 1e-15);
    EXPECT_NEAR(s.lr_at(150), 0.0001, 1e-15);
    EXPECT_NEAR(s.lr_at(199, 0.9), 0.0001, 1e-15);
}

TEST(Cyclic, SingleTrianglePeakingAtMidpoint) {
    LrSchedule s;
    s.kind = ScheduleKind::Cyclic;
    s.total_epochs = 10;
    s.min_lr = 0.0;
    s.max_lr = 0.2;
    EXPECT_DOUBLE_EQ(s.lr_at(0, 0.0), 0.0);
    EXPECT_NEAR(s.lr_at(5, 0.0), 0.2, 1e-15);
    EXPECT_NEAR(s.lr_at(2, 0.5), 0.1, 1e-15);
    EXPECT_NEAR(s.lr_at(7, 0.5), 0.1, 1e-15);
    double prev = -1.0;
    for (std::size_t e = 0; e < 5; ++e) {
        const double v = s.lr_at(e, 0.3);
        EXPECT_GT(v, prev);
        prev = v;
    }
}

TEST(Warmup, AppliedOnlyWithinHorizon) {
    LrSchedule s;
    s.total_epochs = 20;
    s.init_lr = 0.1;
    s.warmup = true;
    s.warmup_epochs = 4;
    auto k = warmup_factors(4);
    for (std::size_t e = 0; e < 4; ++e) EXPECT_DOUBLE_EQ(s.lr_at(e), 0.1 * k[e]);
    for (std::size_t e = 4; e < 10; ++e) EXPECT_DOUBLE_EQ(s.lr_at(e), 0.1);
    s.warmup_epochs = 0;
    EXPECT_EQ(s.warmup_horizon(), 2u);
    s.total_epochs = 5;
    EXPECT_EQ(s.warmup_horizon(), 1u);
}

TEST(Schedule, Validation) {
    LrSchedule s;
    s.init_lr = -1.0;
    EXPECT_THROW(s.validate(), ParameterError);
    s = LrSchedule{};
    s.milestones = {0.75, 0.5};
    EXPECT_THROW(s.validate(), ParameterError);
    s = LrSchedule{};
    s.total_epochs = 0;
    EXPECT_THROW(s.validate(), ParameterError);
    EXPECT_EQ(parse_schedule_kind(to_string(ScheduleKind::Cyclic)), ScheduleKind::Cyclic);
}
