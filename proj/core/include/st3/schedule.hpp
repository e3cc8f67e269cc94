#pragma once

#include <cstdint>

#include "st3/common.hpp"

namespace st3 {

enum class ScheduleKind { kCubic, kConstant, kLrrCycle };

const char* schedule_kind_name(ScheduleKind k);

// Maps the global step index to the target sparsity ratio.
struct SparsitySchedule {
  ScheduleKind kind = ScheduleKind::kCubic;
  double s_final = 0.0;      // cubic/constant target, in [0, 1)
  int64_t start_step = 0;    // cubic ramp start
  int64_t end_step = 1;      // cubic ramp end
  int64_t cycle_steps = 0;   // lrr_cycle: steps per training cycle
  double prune_fraction = 0; // lrr_cycle: fraction of remaining weights

  void validate() const;
};

// cubic:    0 for t <= start, s_final for t >= end, and
//           s_final * (1 - (1 - u)^3) with u = (t-start)/(end-start) between.
// constant: s_final everywhere.
// lrr_cycle: 1 - (1-p)^c during cycle c, with cycle 0 dense.
double sparsity_at(const SparsitySchedule& schedule, int64_t step);

}  // namespace st3
