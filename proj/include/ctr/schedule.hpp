#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace ctr {

enum class ScheduleKind { Multistep, Cyclic };

std::string to_string(ScheduleKind k);
ScheduleKind parse_schedule_kind(std::string_view s);

/// Warmup factors kappa_1 .. kappa_{I+1} for horizon I:
///   kappa_1 = 0.001, kappa_{i+1} = kappa_i * (1 - i/I) + i/I.
std::vector<double> warmup_factors(std::size_t horizon);

/// Factor for 1-based epoch `epoch`; 1 after the horizon.
double warmup_factor(std::size_t epoch, std::size_t horizon);

struct LrSchedule {
    ScheduleKind kind = ScheduleKind::Multistep;
    std::size_t total_epochs = 10;

    // Multistep: init_lr, multiplied by `decay` at each milestone (fractions of total_epochs).
    double init_lr = 0.01;
    std::vector<double> milestones = {0.5, 0.75};
    double decay = 0.1;

    // Cyclic: one triangle min_lr -> max_lr (at the midpoint) -> min_lr.
    double min_lr = 0.0;
    double max_lr = 0.2;

    bool warmup = false;
    /// Warmup horizon I in epochs; 0 selects total_epochs / 10 (at least 1).
    std::size_t warmup_epochs = 0;

    void validate() const;
    std::size_t warmup_horizon() const;

    /// Rate for 0-based `epoch` with `progress` in [0, 1) through that epoch.
    /// Multistep ignores progress; Cyclic interpolates along the triangle.
    double lr_at(std::size_t epoch, double progress = 0.0) const;
};

/// Milestone fractions used for natural and adversarial runs.
inline const std::vector<double> kNaturalMilestones = {0.5, 0.75};
inline const std::vector<double> kAdversarialMilestones = {2.0 / 3.0, 5.0 / 6.0};

} // namespace ctr
