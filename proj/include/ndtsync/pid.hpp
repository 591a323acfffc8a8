#pragma once

#include <array>
#include <cstddef>
#include <limits>
#include <optional>

namespace ndtsync {

struct PidGains {
  double kp = 0.0;
  double ki = 0.0;  // 1/s
  double kd = 0.0;  // s

  /// Throws Error(kInvalidGains) unless every gain is finite and in
  /// [0, gain_max].
  void validate(double gain_max = std::numeric_limits<double>::infinity()) const;

  double& operator[](std::size_t i) { return i == 0 ? kp : (i == 1 ? ki : kd); }
  double operator[](std::size_t i) const { return i == 0 ? kp : (i == 1 ? ki : kd); }

  friend bool operator==(const PidGains&, const PidGains&) = default;
};

/// Discrete PID on the forecast error: rectangular integration with a
/// symmetric clamp, backward-difference derivative on the error, and
/// bumpless activation (the first step after activate() has no derivative
/// term). Copyable value type; equality compares the full state.
class PidController {
 public:
  explicit PidController(PidGains gains = {}, double integral_limit = 1e6, double derivative_alpha = 1.0);

  /// u = kp*e + ki*clamp(I + e*dt) + kd*de/dt. Throws kNotEnabled when
  /// deactivated, kNonFiniteError for a NaN/inf error, kInvalidArgument for
  /// dt <= 0.
  double step(double error, double dt);

  /// Enables the controller with cleared memories. No-op when already
  /// enabled, so repeated activation never resets a running integral.
  void activate();
  /// Disables the controller and clears integral, derivative memory and
  /// last output.
  void deactivate();
  /// Replaces the gains; integral and previous error are kept.
  void set_gains(const PidGains& gains);
  void set_integral_limit(double limit);

  const PidGains& gains() const noexcept { return gains_; }
  double integral() const noexcept { return integral_; }
  std::optional<double> prev_error() const noexcept { return prev_error_; }
  double integral_limit() const noexcept { return integral_limit_; }
  double derivative_alpha() const noexcept { return alpha_; }
  bool enabled() const noexcept { return enabled_; }
  double last_u() const noexcept { return last_u_; }

  friend bool operator==(const PidController&, const PidController&) = default;

 private:
  PidGains gains_;
  double integral_ = 0.0;
  std::optional<double> prev_error_;
  double integral_limit_;
  double alpha_;
  double filtered_derivative_ = 0.0;
  bool enabled_ = false;
  double last_u_ = 0.0;
};

/// max(0, raw + u): packet rates cannot go negative.
double apply_correction(double raw_prediction, double u) noexcept;

struct AutoTuneConfig {
  bool enabled = false;
  std::size_t window = 30;  // loop steps per evaluation
  double delta_frac = 0.1;
  double delta_floor = 1e-4;
  double gain_max = 10.0;
};

/// Round-robin coordinate hill climb over (kp, ki, kd). Each call scores
/// the perturbation proposed by the previous call against the best MAE so
/// far, keeps or reverts it (flipping that coordinate's direction on
/// revert), then proposes the next perturbation.
class AutoTuner {
 public:
  explicit AutoTuner(AutoTuneConfig config = {});

  /// Returns the gains to run for the next window.
  PidGains step(const PidGains& current, double windowed_mae);

  const AutoTuneConfig& config() const noexcept { return config_; }
  int direction(std::size_t coordinate) const { return direction_.at(coordinate); }
  std::size_t next_coordinate() const noexcept { return coordinate_; }
  std::optional<double> baseline_mae() const noexcept { return baseline_; }

 private:
  struct Pending {
    std::size_t coordinate;
    double previous;
  };

  AutoTuneConfig config_;
  std::optional<double> baseline_;
  std::optional<Pending> pending_;
  std::array<int, 3> direction_{1, 1, 1};
  std::size_t coordinate_ = 0;
};

}  // namespace ndtsync
