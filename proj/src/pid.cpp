#include "ndtsync/pid.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ndtsync/error.hpp"

namespace ndtsync {

void PidGains::validate(double gain_max) const {
  for (std::size_t i = 0; i < 3; ++i) {
    const double g = (*this)[i];
    if (!std::isfinite(g) || g < 0.0 || g > gain_max) {
      static constexpr const char* kNames[] = {"kp", "ki", "kd"};
      throw Error(Errc::kInvalidGains, std::string(kNames[i]) + " = " + std::to_string(g) +
                                           " is outside [0, " + std::to_string(gain_max) + "]");
    }
  }
}

PidController::PidController(PidGains gains, double integral_limit, double derivative_alpha)
    : gains_(gains), integral_limit_(integral_limit), alpha_(derivative_alpha) {
  gains_.validate();
  set_integral_limit(integral_limit);
  if (!(derivative_alpha > 0.0 && derivative_alpha <= 1.0)) {
    throw Error(Errc::kInvalidArgument, "derivative filter coefficient must lie in (0, 1]");
  }
}

double PidController::step(double error, double dt) {
  if (!enabled_) throw Error(Errc::kNotEnabled, "PID step while deactivated");
  if (!std::isfinite(error)) throw Error(Errc::kNonFiniteError, "PID error is not finite");
  if (!(dt > 0.0) || !std::isfinite(dt)) throw Error(Errc::kInvalidArgument, "PID dt must be positive");

  integral_ = std::clamp(integral_ + error * dt, -integral_limit_, integral_limit_);
  const double raw_derivative = prev_error_ ? (error - *prev_error_) / dt : 0.0;
  filtered_derivative_ = prev_error_ ? alpha_ * raw_derivative + (1.0 - alpha_) * filtered_derivative_ : 0.0;
  prev_error_ = error;
  last_u_ = gains_.kp * error + gains_.ki * integral_ + gains_.kd * filtered_derivative_;
  return last_u_;
}

void PidController::activate() {
  if (enabled_) return;
  enabled_ = true;
  integral_ = 0.0;
  prev_error_.reset();
  filtered_derivative_ = 0.0;
  last_u_ = 0.0;
}

void PidController::deactivate() {
  enabled_ = false;
  integral_ = 0.0;
  prev_error_.reset();
  filtered_derivative_ = 0.0;
  last_u_ = 0.0;
}

void PidController::set_gains(const PidGains& gains) {
  gains.validate();
  gains_ = gains;
}

void PidController::set_integral_limit(double limit) {
  if (!(limit > 0.0) || std::isnan(limit)) throw Error(Errc::kInvalidArgument, "integral limit must be positive");
  integral_limit_ = limit;
  integral_ = std::clamp(integral_, -integral_limit_, integral_limit_);
}

double apply_correction(double raw_prediction, double u) noexcept { return std::max(0.0, raw_prediction + u); }

AutoTuner::AutoTuner(AutoTuneConfig config) : config_(config) {
  if (config_.window == 0 || !(config_.delta_frac > 0.0) || !(config_.delta_floor > 0.0) ||
      !(config_.gain_max > 0.0)) {
    throw Error(Errc::kInvalidArgument, "invalid auto-tuner configuration");
  }
}

PidGains AutoTuner::step(const PidGains& current, double windowed_mae) {
  PidGains gains = current;
  if (pending_) {
    if (baseline_ && windowed_mae < *baseline_) {
      baseline_ = windowed_mae;
    } else {
      gains[pending_->coordinate] = pending_->previous;
      direction_[pending_->coordinate] = -direction_[pending_->coordinate];
    }
    pending_.reset();
  } else {
    baseline_ = windowed_mae;
  }

  const std::size_t c = coordinate_;
  const double old = gains[c];
  const double delta = std::max(config_.delta_frac * std::abs(old), config_.delta_floor);
  gains[c] = std::clamp(old + direction_[c] * delta, 0.0, config_.gain_max);
  pending_ = Pending{c, old};
  coordinate_ = (c + 1) % 3;
  return gains;
}

}  // namespace ndtsync
