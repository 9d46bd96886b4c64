#include "ctr/schedule.hpp"

#include <algorithm>
#include <cmath>

#include "ctr/errors.hpp"

namespace ctr {

std::string to_string(ScheduleKind k) { return k == ScheduleKind::Multistep ? "multistep" : "cyclic"; }

ScheduleKind parse_schedule_kind(std::string_view s) {
    if (s == "multistep") return ScheduleKind::Multistep;
    if (s == "cyclic") return ScheduleKind::Cyclic;
    throw ParameterError("unknown schedule '" + std::string(s) + "'");
}

std::vector<double> warmup_factors(std::size_t horizon) {
    if (horizon == 0) throw ParameterError("warmup horizon must be >= 1");
    std::vector<double> kappa{0.001};
    const double n = static_cast<double>(horizon);
    for (std::size_t i = 1; i <= horizon; ++i) {
        const double r = static_cast<double>(i) / n;
        kappa.push_back(kappa.back() * (1.0 - r) + r);
    }
    return kappa;
}

double warmup_factor(std::size_t epoch, std::size_t horizon) {
    if (epoch == 0) throw ParameterError("warmup epochs are 1-based");
    if (epoch > horizon) return 1.0;
    return warmup_factors(horizon)[epoch - 1];
}

void LrSchedule::validate() const {
    if (total_epochs == 0) throw ParameterError("schedule: total_epochs must be >= 1");
    if (kind == ScheduleKind::Multistep) {
        if (!(init_lr > 0.0)) throw ParameterError("schedule: init lr must be > 0");
        if (!(decay > 0.0 && decay <= 1.0)) throw ParameterError("schedule: decay must be in (0, 1]");
        double prev = 0.0;
        for (double m : milestones) {
            if (!(m > prev && m < 1.0)) throw ParameterError("schedule: milestones must increase within (0, 1)");
            prev = m;
        }
    } else {
        if (!(min_lr >= 0.0 && max_lr > min_lr)) throw ParameterError("schedule: need 0 <= min lr < max lr");
    }
}

std::size_t LrSchedule::warmup_horizon() const {
    if (warmup_epochs > 0) return warmup_epochs;
    return std::max<std::size_t>(1, total_epochs / 10);
}

double LrSchedule::lr_at(std::size_t epoch, double progress) const {
    if (epoch >= total_epochs) throw ParameterError("schedule: epoch out of range");
    double lr = 0.0;
    if (kind == ScheduleKind::Multistep) {
        lr = init_lr;
        const double e = static_cast<double>(epoch);
        for (double m : milestones)
            if (e >= m * static_cast<double>(total_epochs) - 1e-9) lr *= decay;
    } else {
        const double t = (static_cast<double>(epoch) + std::clamp(progress, 0.0, 1.0)) /
                         static_cast<double>(total_epochs);
        lr = min_lr + (max_lr - min_lr) * (1.0 - std::abs(2.0 * t - 1.0));
    }
    if (warmup) lr *= warmup_factor(epoch + 1, warmup_horizon());
    return lr;
}

} // namespace ctr
