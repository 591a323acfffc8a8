#include "ndtsync/synchronizer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>

#include "ndtsync/error.hpp"
#include "ndtsync/series.hpp"

namespace ndtsync {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

PidSnapshot snapshot_of(const PidController& pid) {
  return {pid.enabled(), pid.gains().kp, pid.gains().ki, pid.gains().kd, pid.integral()};
}

}  // namespace

std::string_view to_string(SessionStatus status) noexcept {
  switch (status) {
    case SessionStatus::kIdle: return "idle";
    case SessionStatus::kRunning: return "running";
    case SessionStatus::kPaused: return "paused";
    case SessionStatus::kFinished: return "finished";
  }
  return "unknown";
}

void MetricsAccumulator::add(const SyncTick& t) {
  ++n_;
  abs_raw_ += std::abs(t.error_raw);
  sq_raw_ += t.error_raw * t.error_raw;
  abs_adj_ += std::abs(t.error_adjusted);
  sq_adj_ += t.error_adjusted * t.error_adjusted;
}

SessionMetrics MetricsAccumulator::metrics() const {
  if (n_ == 0) return {};
  const double n = static_cast<double>(n_);
  return {n_, abs_raw_ / n, abs_adj_ / n, std::sqrt(sq_raw_ / n), std::sqrt(sq_adj_ / n)};
}

SessionMetrics metrics_from_log(std::span<const SyncTick> log) {
  if (log.empty()) return {};
  std::vector<double> raw_pred, adj_pred, actual;
  for (const auto& t : log) {
    actual.push_back(t.actual);
    raw_pred.push_back(t.raw_pred);
    adj_pred.push_back(t.adjusted_pred);
  }
  const auto raw = compute_metrics(raw_pred, actual);
  const auto adj = compute_metrics(adj_pred, actual);
  return {log.size(), raw.mae, adj.mae, raw.rmse, adj.rmse};
}

ReplaySession::ReplaySession(std::shared_ptr<const TrafficSeries> series, std::shared_ptr<const CnnModel> model,
                             SyncConfig config)
    : series_(std::move(series)),
      model_(std::move(model)),
      config_(std::move(config)),
      window_len_(0),
      dt_(1.0),
      tuner_(config_.autotune) {
  if (!series_ || !model_) throw Error(Errc::kInvalidArgument, "session needs a series and a model");
  window_len_ = model_->config.window_len;
  dt_ = series_->bucket_seconds;
  if (series_->size() <= window_len_) {
    throw Error(Errc::kTooShort, "series of length " + std::to_string(series_->size()) +
                                     " leaves nothing to replay after a warm-up of " + std::to_string(window_len_));
  }
  if (!(config_.speed >= 0.0) || !std::isfinite(config_.speed)) {
    throw Error(Errc::kInvalidCommand, "speed must be finite and >= 0");
  }
  config_.initial_gains.validate(config_.gain_max);
  const double limit = config_.integral_limit.value_or(std::max(1.0, 10.0 * stddev(series_->values)));
  pid_ = PidController(config_.initial_gains, limit, config_.derivative_alpha);
  config_.integral_limit = limit;
  config_.output_limit = config_.output_limit.value_or(
      std::max(1.0, 2.0 * *std::max_element(series_->values.begin(), series_->values.end())));
  if (!(*config_.output_limit > 0.0)) throw Error(Errc::kInvalidArgument, "output limit must be positive");
  config_hash_ = model_->config_hash();
  speed_ = config_.speed;
  reset();
}

double ReplaySession::forecast_after(std::size_t last_observed) const {
  const auto window = std::span(series_->values).subspan(last_observed + 1 - window_len_, window_len_);
  return predict(*model_, window, last_observed + 1).values.front();
}

void ReplaySession::reset() {
  status_ = SessionStatus::kIdle;
  cursor_ = window_len_;
  pid_.deactivate();
  tuner_ = AutoTuner(config_.autotune);
  tuner_abs_sum_ = 0.0;
  tuner_count_ = 0;
  metrics_.clear();
  rolling_.clear();
  last_tick_.reset();
  pending_raw_ = forecast_after(cursor_ - 1);
  pending_u_ = 0.0;
}

SyncTick ReplaySession::tick() {
  if (status_ != SessionStatus::kRunning) {
    throw Error(Errc::kInvalidCommand, "tick requires a running session (status " +
                                           std::string(to_string(status_)) + ")");
  }
  const auto& values = series_->values;
  if (cursor_ >= values.size()) {
    status_ = SessionStatus::kFinished;
    throw Error(Errc::kExhausted, "replay reached the end of the series");
  }

  SyncTick t;
  t.step = cursor_;
  t.t_seconds = series_->time_at(cursor_);
  t.actual = values[cursor_];
  t.raw_pred = pending_raw_;
  t.u_applied = pid_.enabled() ? pending_u_ : 0.0;
  t.adjusted_pred = apply_correction(t.raw_pred, t.u_applied);
  t.error_raw = t.actual - t.raw_pred;
  t.error_adjusted = t.actual - t.adjusted_pred;

  double next_u = 0.0;
  if (pid_.enabled()) {
    next_u = std::clamp(pid_.step(config_.correct_on_adjusted_error ? t.error_adjusted : t.error_raw, dt_),
                        -*config_.output_limit, *config_.output_limit);
    if (config_.autotune.enabled) {
      tuner_abs_sum_ += std::abs(t.error_adjusted);
      if (++tuner_count_ == config_.autotune.window) {
        pid_.set_gains(tuner_.step(pid_.gains(), tuner_abs_sum_ / static_cast<double>(tuner_count_)));
        tuner_abs_sum_ = 0.0;
        tuner_count_ = 0;
      }
    }
  }
  t.pid = snapshot_of(pid_);
  pending_u_ = next_u;

  ++cursor_;
  if (cursor_ < values.size()) {
    pending_raw_ = forecast_after(cursor_ - 1);
  } else {
    status_ = SessionStatus::kFinished;
  }

  metrics_.add(t);
  rolling_.push_back(t);
  while (rolling_.size() > config_.rolling_window) rolling_.pop_front();
  last_tick_ = t;
  return t;
}

void ReplaySession::apply(const Command& command) {
  std::visit(
      Overloaded{
          [&](const cmd::Start&) {
            if (status_ == SessionStatus::kFinished) {
              throw Error(Errc::kExhausted, "session finished; reset required");
            }
            status_ = SessionStatus::kRunning;
          },
          [&](const cmd::Pause&) {
            if (status_ == SessionStatus::kRunning) status_ = SessionStatus::kPaused;
          },
          [&](const cmd::Reset&) { reset(); },
          [&](const cmd::SetSpeed& c) {
            if (!(c.speed >= 0.0) || !std::isfinite(c.speed)) {
              throw Error(Errc::kInvalidCommand, "speed must be finite and >= 0");
            }
            speed_ = c.speed;
          },
          [&](const cmd::PidEnable&) {
            if (!pid_.enabled()) {
              pid_.activate();
              pending_u_ = 0.0;
              tuner_ = AutoTuner(config_.autotune);
              tuner_abs_sum_ = 0.0;
              tuner_count_ = 0;
            }
          },
          [&](const cmd::PidDisable&) {
            pid_.deactivate();
            pending_u_ = 0.0;
          },
          [&](const cmd::PidSetGains& c) {
            c.gains.validate(config_.gain_max);
            pid_.set_gains(c.gains);
          },
          [&](const cmd::PidUpdate& c) {
            PidGains g = pid_.gains();
            if (c.kp) g.kp = *c.kp;
            if (c.ki) g.ki = *c.ki;
            if (c.kd) g.kd = *c.kd;
            g.validate(config_.gain_max);
            pid_.set_gains(g);
            if (c.enabled) apply(*c.enabled ? Command{cmd::PidEnable{}} : Command{cmd::PidDisable{}});
          },
      },
      command);
}

SessionSnapshot ReplaySession::snapshot() const {
  SessionSnapshot s;
  s.status = status_;
  s.cursor = cursor_;
  s.speed = speed_;
  s.pid = snapshot_of(pid_);
  s.integral_limit = pid_.integral_limit();
  s.metrics = metrics_.metrics();
  s.last_tick = last_tick_;
  s.series_label = series_->label;
  s.series_length = series_->size();
  s.bucket_seconds = series_->bucket_seconds;
  s.window_len = window_len_;
  s.horizon = model_->config.horizon;
  s.config_hash = config_hash_;
  return s;
}

std::size_t apply_due_commands(ReplaySession& session, const CommandScript& script, std::size_t next) {
  while (next < script.size() && script[next].at_step <= session.cursor()) {
    session.apply(script[next].command);
    ++next;
  }
  return next;
}

OfflineSummary summarize(std::span<const SyncTick> log) {
  OfflineSummary s;
  s.overall = metrics_from_log(log);
  const auto first = std::find_if(log.begin(), log.end(), [](const SyncTick& t) { return t.pid.enabled; });
  if (first != log.end()) {
    s.activation_step = first->step;
    std::vector<SyncTick> post;
    std::copy_if(first, log.end(), std::back_inserter(post), [](const SyncTick& t) { return t.pid.enabled; });
    s.post_activation = metrics_from_log(post);
  }
  return s;
}

OfflineResult run_script(std::shared_ptr<const TrafficSeries> series, std::shared_ptr<const CnnModel> model,
                         const SyncConfig& config, const CommandScript& script) {
  SyncConfig unpaced = config;
  unpaced.speed = 0.0;
  ReplaySession session(std::move(series), std::move(model), unpaced);
  session.apply(cmd::Start{});
  OfflineResult result;
  result.log.reserve(session.series().size() - session.window_len());
  std::size_t pos = 0;
  while (true) {
    pos = apply_due_commands(session, script, pos);
    if (session.status() != SessionStatus::kRunning) break;
    result.log.push_back(session.tick());
  }
  result.summary = summarize(result.log);
  return result;
}

OfflineResult run_offline(std::shared_ptr<const TrafficSeries> series, std::shared_ptr<const CnnModel> model,
                          const SyncConfig& config, std::optional<std::size_t> enable_at_step) {
  if (model && series && series->size() <= model->config.window_len + 2) {
    throw Error(Errc::kTooShort, "offline replay needs more than window_len + 2 samples");
  }
  CommandScript script;
  if (enable_at_step) script.push_back({*enable_at_step, cmd::PidEnable{}});
  return run_script(std::move(series), std::move(model), config, script);
}

SweepResult sweep_gains(std::shared_ptr<const TrafficSeries> series, std::shared_ptr<const CnnModel> model,
                        const SyncConfig& config, std::size_t enable_at_step, const GainGrid& grid) {
  if (grid.kp.empty() || grid.ki.empty() || grid.kd.empty()) {
    throw Error(Errc::kInvalidArgument, "gain grid has an empty axis");
  }
  SweepResult result;
  double best_mae = std::numeric_limits<double>::infinity();
  for (double kp : grid.kp) {
    for (double ki : grid.ki) {
      for (double kd : grid.kd) {
        SyncConfig c = config;
        c.initial_gains = {kp, ki, kd};
        auto run = run_offline(series, model, c, enable_at_step);
        const double mae = run.summary.post_activation.mae_adjusted;
        if (run.summary.post_activation.ticks > 0 && mae < best_mae) {
          best_mae = mae;
          result.best = result.entries.size();
        }
        result.entries.push_back({c.initial_gains, run.summary});
      }
    }
  }
  return result;
}

void TickSubscription::push(const SyncTick& tick) {
  {
    std::lock_guard lk(mu_);
    if (closed_) return;
    if (queue_.size() >= capacity_) {
      queue_.pop_front();
      ++dropped_;
    }
    queue_.push_back(tick);
  }
  cv_.notify_one();
}

std::optional<SyncTick> TickSubscription::next(std::chrono::milliseconds timeout) {
  std::unique_lock lk(mu_);
  if (!cv_.wait_for(lk, timeout, [&] { return closed_ || !queue_.empty(); })) return std::nullopt;
  if (queue_.empty()) return std::nullopt;
  SyncTick t = queue_.front();
  queue_.pop_front();
  return t;
}

void TickSubscription::close() {
  {
    std::lock_guard lk(mu_);
    closed_ = true;
  }
  cv_.notify_all();
}

bool TickSubscription::closed() const {
  std::lock_guard lk(mu_);
  return closed_;
}

std::size_t TickSubscription::dropped() const {
  std::lock_guard lk(mu_);
  return dropped_;
}

LiveRunner::LiveRunner(ReplaySession session, CommandScript script)
    : session_(std::move(session)), script_(std::move(script)), snapshot_(session_.snapshot()) {}

LiveRunner::~LiveRunner() { stop(); }

void LiveRunner::add_listener(TickListener listener) { listeners_.push_back(std::move(listener)); }

void LiveRunner::start() {
  if (thread_.joinable()) return;
  thread_ = std::thread([this] { loop(); });
}

void LiveRunner::stop() {
  {
    std::lock_guard lk(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  if (thread_.joinable()) thread_.join();
  std::lock_guard lk(mu_);
  for (auto& p : queue_) {
    p.done.set_exception(std::make_exception_ptr(Error(Errc::kInvalidCommand, "runner stopped")));
  }
  queue_.clear();
  for (auto& w : subscribers_) {
    if (auto s = w.lock()) s->close();
  }
}

std::future<SessionSnapshot> LiveRunner::submit(Command command) {
  std::promise<SessionSnapshot> promise;
  auto fut = promise.get_future();
  {
    std::lock_guard lk(mu_);
    if (stop_) {
      promise.set_exception(std::make_exception_ptr(Error(Errc::kInvalidCommand, "runner stopped")));
      return fut;
    }
    queue_.push_back({std::move(command), std::move(promise)});
  }
  cv_.notify_all();
  return fut;
}

SessionSnapshot LiveRunner::snapshot() const {
  std::lock_guard lk(mu_);
  return snapshot_;
}

std::shared_ptr<TickSubscription> LiveRunner::subscribe(std::size_t capacity) {
  auto sub = std::make_shared<TickSubscription>(capacity);
  std::lock_guard lk(mu_);
  subscribers_.push_back(sub);
  return sub;
}

PacingStats LiveRunner::pacing() const {
  std::lock_guard lk(mu_);
  return pacing_;
}

bool LiveRunner::wait_finished(std::chrono::milliseconds timeout) const {
  std::unique_lock lk(mu_);
  return cv_.wait_for(lk, timeout, [&] { return snapshot_.status == SessionStatus::kFinished; });
}

void LiveRunner::publish(const SyncTick* tick) {
  std::vector<std::shared_ptr<TickSubscription>> subs;
  {
    std::lock_guard lk(mu_);
    snapshot_ = session_.snapshot();
    if (tick) {
      std::erase_if(subscribers_, [](const auto& w) { return w.expired(); });
      for (auto& w : subscribers_) {
        if (auto s = w.lock()) subs.push_back(std::move(s));
      }
    }
  }
  cv_.notify_all();
  if (!tick) return;
  for (auto& l : listeners_) l(*tick);
  for (auto& s : subs) s->push(*tick);
}

void LiveRunner::loop() {
  using Clock = std::chrono::steady_clock;
  Clock::time_point anchor;
  std::size_t k = 0;
  bool anchored = false;

  std::unique_lock lk(mu_);
  while (!stop_) {
    while (!queue_.empty()) {
      Pending p = std::move(queue_.front());
      queue_.pop_front();
      const auto status_before = session_.status();
      const double speed_before = session_.speed();
      try {
        session_.apply(p.command);
        snapshot_ = session_.snapshot();
        p.done.set_value(snapshot_);
      } catch (...) {
        p.done.set_exception(std::current_exception());
      }
      if (session_.status() != status_before || session_.speed() != speed_before) anchored = false;
    }
    try {
      script_pos_ = apply_due_commands(session_, script_, script_pos_);
    } catch (const Error&) {
      ++script_pos_;  // a bad scripted command is skipped, not fatal
    }
    snapshot_ = session_.snapshot();
    cv_.notify_all();

    if (session_.status() != SessionStatus::kRunning) {
      anchored = false;
      cv_.wait(lk, [&] { return stop_ || !queue_.empty(); });
      continue;
    }

    Clock::time_point deadline{};
    const double speed = session_.speed();
    if (speed > 0.0) {
      if (!anchored) {
        anchor = Clock::now();
        k = 0;
        anchored = true;
        pacing_ = {};
      }
      const double period = session_.series().bucket_seconds / speed;
      deadline = anchor + std::chrono::duration_cast<Clock::duration>(
                              std::chrono::duration<double>(static_cast<double>(k) * period));
      if (cv_.wait_until(lk, deadline, [&] { return stop_ || !queue_.empty(); })) continue;
    }

    lk.unlock();
    SyncTick t = session_.tick();
    const auto emitted = Clock::now();
    if (speed > 0.0) {
      // Recorded before publish so anyone woken by this tick sees its pacing.
      std::lock_guard plk(mu_);
      const double lag = std::chrono::duration<double>(emitted - deadline).count();
      ++k;
      pacing_.ticks_since_anchor = k;
      pacing_.last_lag_seconds = lag;
      pacing_.max_lag_seconds = std::max(pacing_.max_lag_seconds, lag);
    }
    publish(&t);
    lk.lock();
  }
}

std::string tick_log_csv(std::span<const SyncTick> log) {
  std::string out = "step,t,actual,raw_pred,adjusted_pred,error_raw,error_adjusted,u_applied,pid_enabled,kp,ki,kd\n";
  char buf[32];
  auto num = [&](double v) {
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, ptr);
  };
  for (const auto& t : log) {
    out += std::to_string(t.step);
    for (double v : {t.t_seconds, t.actual, t.raw_pred, t.adjusted_pred, t.error_raw, t.error_adjusted, t.u_applied}) {
      out += ',';
      num(v);
    }
    out += t.pid.enabled ? ",1" : ",0";
    for (double v : {t.pid.kp, t.pid.ki, t.pid.kd}) {
      out += ',';
      num(v);
    }
    out += '\n';
  }
  return out;
}

}  // namespace ndtsync
