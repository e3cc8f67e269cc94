#include "st3/schedule.hpp"

#include <cmath>

namespace st3 {

const char* schedule_kind_name(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::kCubic: return "cubic";
    case ScheduleKind::kConstant: return "constant";
    case ScheduleKind::kLrrCycle: return "lrr_cycle";
  }
  return "unknown";
}

void SparsitySchedule::validate() const {
  if (kind == ScheduleKind::kLrrCycle) {
    if (cycle_steps <= 0)
      fail(ErrorKind::kConfig, "schedule: lrr_cycle needs cycle_steps > 0");
    if (!(prune_fraction > 0.0 && prune_fraction < 1.0))
      fail(ErrorKind::kConfig, "schedule: prune_fraction must lie in (0, 1)");
    return;
  }
  if (!(s_final >= 0.0 && s_final < 1.0))
    fail(ErrorKind::kConfig, "schedule: s_final must lie in [0, 1)");
  if (kind == ScheduleKind::kCubic && start_step >= end_step)
    fail(ErrorKind::kConfig, "schedule: start_step must precede end_step");
}

double sparsity_at(const SparsitySchedule& schedule, int64_t step) {
  if (step < 0)
    fail(ErrorKind::kInvalidArgument, "sparsity_at: negative step");
  switch (schedule.kind) {
    case ScheduleKind::kConstant:
      return schedule.s_final;
    case ScheduleKind::kCubic: {
      if (step <= schedule.start_step) return 0.0;
      if (step >= schedule.end_step) return schedule.s_final;
      const double u =
          static_cast<double>(step - schedule.start_step) /
          static_cast<double>(schedule.end_step - schedule.start_step);
      const double r = 1.0 - u;
      return schedule.s_final * (1.0 - r * r * r);
    }
    case ScheduleKind::kLrrCycle: {
      const int64_t cycle = step / schedule.cycle_steps;
      if (cycle == 0) return 0.0;
      return 1.0 - std::pow(1.0 - schedule.prune_fraction,
                            static_cast<double>(cycle));
    }
  }
  return 0.0;
}

}  // namespace st3
