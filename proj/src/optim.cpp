// SPDX-License-Identifier: Apache-2.0
#include "taskmix/optim.hpp"

#include <algorithm>
#include <numbers>

namespace taskmix {

void Schedule::validate() const {
  if (!(lr_min >= 0.0))
    throw ConfigError("schedule: lr_min must be >= 0");
  if (!(lr_max >= lr_min))
    throw ConfigError("schedule: lr_max must be >= lr_min");
  if (max_step == 0)
    throw ConfigError("schedule: max_step must be > 0");
}

double cosine_lr(std::size_t step, const Schedule &s) {
  const double progress = static_cast<double>(std::min(step, s.max_step)) / static_cast<double>(s.max_step);
  return s.lr_min + 0.5 * (s.lr_max - s.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

} // namespace taskmix
