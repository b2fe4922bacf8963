#ifndef FASTADV_TRAIN_SCHEDULE_HPP
#define FASTADV_TRAIN_SCHEDULE_HPP

#include <stdexcept>
#include <string>

namespace fastadv {

/// Triangular schedule: 0 at t=0, max_lr at t=horizon/2, 0 at t=horizon.
/// t is measured in (fractional) epochs.
inline double cyclic_lr(double t, double horizon, double max_lr) {
  if (!(horizon > 0.0)) throw std::invalid_argument("cyclic_lr: horizon must be positive");
  if (!(t >= 0.0 && t <= horizon)) {
    throw std::out_of_range("cyclic_lr: t=" + std::to_string(t) + " outside [0, " + std::to_string(horizon) + "]");
  }
  const double half = horizon / 2.0;
  return t <= half ? max_lr * (t / half) : max_lr * ((horizon - t) / half);
}

}  // namespace fastadv

#endif  // FASTADV_TRAIN_SCHEDULE_HPP
