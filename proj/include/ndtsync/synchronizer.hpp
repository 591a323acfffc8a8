#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <deque>
#include <functional>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "ndtsync/cnn.hpp"
#include "ndtsync/ingest.hpp"
#include "ndtsync/pid.hpp"

namespace ndtsync {

enum class SessionStatus { kIdle, kRunning, kPaused, kFinished };
std::string_view to_string(SessionStatus status) noexcept;

struct PidSnapshot {
  bool enabled = false;
  double kp = 0.0;
  double ki = 0.0;
  double kd = 0.0;
  double integral = 0.0;

  friend bool operator==(const PidSnapshot&, const PidSnapshot&) = default;
};

/// One pass of the prediction/correction loop.
struct SyncTick {
  std::size_t step = 0;
  double t_seconds = 0.0;
  double actual = 0.0;
  double raw_pred = 0.0;       // forecast for this step, made one tick earlier
  double adjusted_pred = 0.0;  // max(0, raw_pred + u_applied)
  double error_raw = 0.0;      // actual - raw_pred
  double error_adjusted = 0.0; // actual - adjusted_pred
  double u_applied = 0.0;      // correction computed on the previous tick
  PidSnapshot pid;             // controller state after this tick

  friend bool operator==(const SyncTick&, const SyncTick&) = default;
};

struct SessionMetrics {
  std::size_t ticks = 0;
  double mae_raw = 0.0;
  double mae_adjusted = 0.0;
  double rmse_raw = 0.0;
  double rmse_adjusted = 0.0;
};

/// Running sums behind SessionMetrics.
class MetricsAccumulator {
 public:
  void add(const SyncTick& tick);
  void clear() { *this = {}; }
  SessionMetrics metrics() const;

 private:
  std::size_t n_ = 0;
  double abs_raw_ = 0.0, sq_raw_ = 0.0, abs_adj_ = 0.0, sq_adj_ = 0.0;
};

/// Recomputes metrics from a tick log, independently of the accumulator.
SessionMetrics metrics_from_log(std::span<const SyncTick> log);

struct SyncConfig {
  PidGains initial_gains{0.4, 0.05, 0.0};
  /// Anti-windup clamp in pps*s. Unset means 10x the standard deviation of
  /// the replayed series (at least 1).
  std::optional<double> integral_limit;
  /// Saturation of the applied correction |u| in pps. Unset means twice
  /// the largest replayed value (at least 1), beyond which a correction
  /// overshoots every observation. Keeps an unstable gain choice bounded
  /// instead of overflowing.
  std::optional<double> output_limit;
  double derivative_alpha = 1.0;
  /// Controller input. The adjusted error closes the loop, so a constant
  /// forecast bias is driven out; the raw error leaves the loop open and
  /// its integral grows for as long as the bias persists.
  bool correct_on_adjusted_error = true;
  std::size_t rolling_window = 300;
  double speed = 1.0;
  double gain_max = 10.0;
  AutoTuneConfig autotune;
};

namespace cmd {
struct Start {};
struct Pause {};
struct Reset {};
struct SetSpeed {
  double speed = 1.0;
};
struct PidEnable {};
struct PidDisable {};
struct PidSetGains {
  PidGains gains;
};
/// Partial update applied as one unit: gains first, then the enable flag.
struct PidUpdate {
  std::optional<bool> enabled;
  std::optional<double> kp, ki, kd;
};
}  // namespace cmd

using Command = std::variant<cmd::Start, cmd::Pause, cmd::Reset, cmd::SetSpeed, cmd::PidEnable, cmd::PidDisable,
                             cmd::PidSetGains, cmd::PidUpdate>;

struct SessionSnapshot {
  SessionStatus status = SessionStatus::kIdle;
  std::size_t cursor = 0;
  double speed = 1.0;
  PidSnapshot pid;
  double integral_limit = 0.0;
  SessionMetrics metrics;
  std::optional<SyncTick> last_tick;
  std::string series_label;
  std::size_t series_length = 0;
  double bucket_seconds = 1.0;
  std::size_t window_len = 0;
  std::size_t horizon = 0;
  std::string config_hash;
};

/// Replays a series through the forecaster and the PID corrector. Ticks
/// start at step window_len; earlier steps only seed the history. The
/// forecast for step t is made at tick t-1 from actual values (teacher
/// forcing) and carries the correction computed at tick t-1.
class ReplaySession {
 public:
  ReplaySession(std::shared_ptr<const TrafficSeries> series, std::shared_ptr<const CnnModel> model,
                SyncConfig config = {});

  /// Requires status running. Emits the tick for `cursor()` and advances;
  /// the tick that consumes the last sample moves status to finished.
  SyncTick tick();

  /// Throws kInvalidCommand for bad arguments, kInvalidGains for bad gains
  /// and kExhausted when starting a finished session.
  void apply(const Command& command);

  SessionStatus status() const noexcept { return status_; }
  std::size_t cursor() const noexcept { return cursor_; }
  double speed() const noexcept { return speed_; }
  std::size_t window_len() const noexcept { return window_len_; }
  const PidController& pid() const noexcept { return pid_; }
  SessionMetrics metrics() const { return metrics_.metrics(); }
  const std::deque<SyncTick>& rolling() const noexcept { return rolling_; }
  const std::optional<SyncTick>& last_tick() const noexcept { return last_tick_; }
  const TrafficSeries& series() const noexcept { return *series_; }
  const CnnModel& model() const noexcept { return *model_; }
  const SyncConfig& config() const noexcept { return config_; }

  SessionSnapshot snapshot() const;

 private:
  void reset();
  double forecast_after(std::size_t last_observed) const;

  std::shared_ptr<const TrafficSeries> series_;
  std::shared_ptr<const CnnModel> model_;
  SyncConfig config_;
  std::string config_hash_;
  std::size_t window_len_;
  double dt_;

  SessionStatus status_ = SessionStatus::kIdle;
  std::size_t cursor_ = 0;
  double speed_ = 1.0;
  PidController pid_;
  AutoTuner tuner_;
  double tuner_abs_sum_ = 0.0;
  std::size_t tuner_count_ = 0;

  double pending_raw_ = 0.0;
  double pending_u_ = 0.0;

  MetricsAccumulator metrics_;
  std::deque<SyncTick> rolling_;
  std::optional<SyncTick> last_tick_;
};

/// Commands keyed by the cursor before which they take effect.
struct ScriptedCommand {
  std::size_t at_step = 0;
  Command command;
};
using CommandScript = std::vector<ScriptedCommand>;

/// Applies every command whose at_step <= session.cursor(), starting at
/// `next`; returns the new position. Script must be sorted by at_step.
std::size_t apply_due_commands(ReplaySession& session, const CommandScript& script, std::size_t next);

struct OfflineSummary {
  SessionMetrics overall;
  SessionMetrics post_activation;  // ticks whose snapshot shows the PID enabled
  std::optional<std::size_t> activation_step;
};

struct OfflineResult {
  std::vector<SyncTick> log;
  OfflineSummary summary;
};

OfflineSummary summarize(std::span<const SyncTick> log);

/// Unpaced replay to completion with a command script.
OfflineResult run_script(std::shared_ptr<const TrafficSeries> series, std::shared_ptr<const CnnModel> model,
                         const SyncConfig& config, const CommandScript& script);

/// Unpaced replay with the PID switched on before the tick for
/// `enable_at_step` (never, when unset).
OfflineResult run_offline(std::shared_ptr<const TrafficSeries> series, std::shared_ptr<const CnnModel> model,
                          const SyncConfig& config, std::optional<std::size_t> enable_at_step);

struct GainGrid {
  std::vector<double> kp{0.0, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<double> ki{0.0, 0.01, 0.05, 0.1, 0.2};
  std::vector<double> kd{0.0, 0.05, 0.1};
};

struct SweepEntry {
  PidGains gains;
  OfflineSummary summary;
};

struct SweepResult {
  std::vector<SweepEntry> entries;  // grid order
  std::size_t best = 0;             // lowest post-activation adjusted MAE
};

/// Offline replay for every grid point with the PID enabled at
/// `enable_at_step`. Ties keep the earlier grid point.
SweepResult sweep_gains(std::shared_ptr<const TrafficSeries> series, std::shared_ptr<const CnnModel> model,
                        const SyncConfig& config, std::size_t enable_at_step, const GainGrid& grid = {});

/// Bounded drop-oldest queue of ticks for one consumer.
class TickSubscription {
 public:
  explicit TickSubscription(std::size_t capacity) : capacity_(capacity == 0 ? 1 : capacity) {}

  void push(const SyncTick& tick);
  /// Waits up to `timeout` for the next tick; nullopt on timeout or close.
  std::optional<SyncTick> next(std::chrono::milliseconds timeout);
  void close();
  bool closed() const;
  std::size_t dropped() const;

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<SyncTick> queue_;
  std::size_t capacity_;
  std::size_t dropped_ = 0;
  bool closed_ = false;
};

struct PacingStats {
  std::size_t ticks_since_anchor = 0;
  double last_lag_seconds = 0.0;  // emit time minus absolute deadline
  double max_lag_seconds = 0.0;
};

/// Drives a ReplaySession on its own thread. Commands go through a queue
/// and are applied between ticks; the returned future resolves with the
/// snapshot taken right after the command was applied. Ticks are paced
/// against absolute deadlines anchor + k*bucket/speed (speed 0 = unpaced).
class LiveRunner {
 public:
  using TickListener = std::function<void(const SyncTick&)>;

  explicit LiveRunner(ReplaySession session, CommandScript script = {});
  ~LiveRunner();

  LiveRunner(const LiveRunner&) = delete;
  LiveRunner& operator=(const LiveRunner&) = delete;

  /// Listeners run on the loop thread; register before start().
  void add_listener(TickListener listener);
  void start();
  void stop();

  std::future<SessionSnapshot> submit(Command command);
  SessionSnapshot snapshot() const;
  std::shared_ptr<TickSubscription> subscribe(std::size_t capacity = 256);
  PacingStats pacing() const;
  /// Blocks until the session reaches finished or the timeout expires.
  bool wait_finished(std::chrono::milliseconds timeout) const;

 private:
  struct Pending {
    Command command;
    std::promise<SessionSnapshot> done;
  };

  void loop();
  void publish(const SyncTick* tick);

  ReplaySession session_;
  CommandScript script_;
  std::size_t script_pos_ = 0;
  std::vector<TickListener> listeners_;

  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  std::deque<Pending> queue_;
  bool stop_ = false;
  SessionSnapshot snapshot_;
  PacingStats pacing_;
  std::vector<std::weak_ptr<TickSubscription>> subscribers_;
  std::thread thread_;
};

std::string tick_log_csv(std::span<const SyncTick> log);

}  // namespace ndtsync
