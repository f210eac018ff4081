// SPDX-License-Identifier: Apache-2.0
//
// Scalar training schedules, computed in double so the anchor values hold to
// tight tolerances regardless of the model scalar type.

#ifndef STEVE_SCHEDULES_HPP
#define STEVE_SCHEDULES_HPP

#include "steve/tensor.hpp"

#include <cmath>
#include <cstdint>

namespace steve {

/// Linear warmup from 0 to `peak` over `warmup_steps`, then exponential decay
/// with the given half-life.
inline double lr_schedule(std::int64_t step, double peak,
                          std::int64_t warmup_steps, double halflife) {
  check(warmup_steps >= 1, "lr_schedule: warmup_steps must be >= 1");
  check(halflife > 0, "lr_schedule: halflife must be positive");
  if (step < warmup_steps)
    return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
  return peak * std::exp2(-static_cast<double>(step - warmup_steps) / halflife);
}

/// Linear decay from tau_start to tau_end over decay_steps, clamped at
/// tau_end afterwards.
inline double temperature_schedule(std::int64_t step, double tau_start,
                                   double tau_end, std::int64_t decay_steps) {
  check(decay_steps >= 1, "temperature_schedule: decay_steps must be >= 1");
  if (step >= decay_steps) return tau_end;
  const double f = static_cast<double>(step) / static_cast<double>(decay_steps);
  return tau_start + (tau_end - tau_start) * f;
}

}  // namespace steve

#endif  // STEVE_SCHEDULES_HPP
