#include <cmath>
#include <thread>

#include <gtest/gtest.h>

#include "ndtsync/error.hpp"
#include "ndtsync/synchronizer.hpp"

using namespace ndtsync;
using namespace std::chrono_literals;

namespace {

std::shared_ptr<const TrafficSeries> constant_series(double value, std::size_t n, double bucket = 1.0) {
  auto s = std::make_shared<TrafficSeries>();
  s->values.assign(n, value);
  s->bucket_seconds = bucket;
  s->label = "constant";
  return s;
}

std::shared_ptr<const TrafficSeries> video_series(std::size_t n, double bucket = 1.0, std::uint64_t seed = 3) {
  auto s = std::make_shared<TrafficSeries>(generate(SyntheticProfile::defaults(ProfileKind::kVideo, seed), n));
  s->bucket_seconds = bucket;
  return s;
}

// Zero weights make every layer output zero, so the forecast is the head
// bias mapped back through the normalizer.
std::shared_ptr<const CnnModel> constant_model(double output_pps, std::size_t window = 8) {
  CnnConfig c;
  c.window_len = window;
  c.conv_layers = 1;
  c.channels_per_layer = {2};
  auto m = CnnModel::init(c, Normalizer(0, 1000));
  for (auto p : m.parameters())
    for (auto& x : p) x = 0.0;
  m.head.bias[0] = output_pps / 1000.0;
  return std::make_shared<const CnnModel>(std::move(m));
}

std::shared_ptr<const CnnModel> random_model(std::size_t window = 8, double lo = 0, double hi = 1500) {
  CnnConfig c;
  c.window_len = window;
  c.conv_layers = 2;
  c.channels_per_layer = {4, 4};
  c.seed = 19;
  return std::make_shared<const CnnModel>(CnnModel::init(c, Normalizer(lo, hi)));
}

SyncConfig config_with(PidGains g, double limit = 1e6) {
  SyncConfig c;
  c.initial_gains = g;
  c.integral_limit = limit;
  return c;
}

void expect_tick_invariants(const SyncTick& t) {
  EXPECT_EQ(t.adjusted_pred, std::max(0.0, t.raw_pred + t.u_applied));
  EXPECT_EQ(t.error_raw, t.actual - t.raw_pred);
  EXPECT_EQ(t.error_adjusted, t.actual - t.adjusted_pred);
  if (!t.pid.enabled) {
    EXPECT_EQ(t.u_applied, 0.0);
    EXPECT_EQ(t.error_adjusted, t.error_raw);
  }
}

}  // namespace

TEST(ReplaySession, PassThroughWhenDisabled) {
  const auto r = run_offline(video_series(200), random_model(), {}, std::nullopt);
  ASSERT_EQ(r.log.size(), 200u - 8u);
  for (const auto& t : r.log) {
    expect_tick_invariants(t);
    EXPECT_EQ(t.adjusted_pred, t.raw_pred);
  }
}

TEST(ReplaySession, PerfectTwin) {
  const auto r = run_offline(constant_series(250, 100), constant_model(250), {}, std::nullopt);
  for (const auto& t : r.log) {
    EXPECT_NEAR(t.error_raw, 0.0, 1e-9);
    EXPECT_NEAR(t.error_adjusted, 0.0, 1e-9);
  }
  EXPECT_NEAR(r.summary.overall.mae_raw, 0.0, 1e-9);
}

TEST(ReplaySession, RejectsConstantBias) {
  const double b = 10.0;
  const std::size_t s = 20;
  const auto r = run_offline(constant_series(100, 200), constant_model(100 - b), config_with({0.5, 0.5, 0}), s);
  bool settled = false;
  for (const auto& t : r.log) {
    expect_tick_invariants(t);
    EXPECT_NEAR(t.error_raw, b, 1e-6);
    if (t.step >= s && t.step <= s + 60 && std::abs(t.error_adjusted) < 0.1 * b) settled = true;
  }
  EXPECT_TRUE(settled);
  EXPECT_LT(std::abs(r.log.back().error_adjusted), 0.1 * b);
  EXPECT_EQ(r.summary.activation_step, s);
  EXPECT_LT(r.summary.post_activation.mae_adjusted, r.summary.post_activation.mae_raw);
}

TEST(ReplaySession, RawErrorInputLeavesLoopOpen) {
  auto cfg = config_with({0.5, 0.5, 0});
  cfg.correct_on_adjusted_error = false;
  cfg.output_limit = 1e6;
  const auto r = run_offline(constant_series(100, 60), constant_model(90), cfg, 10);
  // u = 0.5*10 + 0.5*10*n keeps growing; the error overshoots instead of settling.
  double pending = 0.0;
  for (const auto& t : r.log) {
    if (!t.pid.enabled) continue;
    EXPECT_NEAR(t.u_applied, pending, 1e-9);
    pending = 5.0 + 5.0 * static_cast<double>(t.step - 9);
  }
  EXPECT_GT(std::abs(r.log.back().error_adjusted), 100.0);
}

TEST(ReplaySession, UnstableGainsStayFinite) {
  // kd / dt = 50 on the adjusted error oscillates with growing amplitude;
  // the output clamp keeps every tick finite and bounded.
  auto cfg = config_with({1, 1, 0.1});
  cfg.output_limit = 400;
  auto s = std::make_shared<TrafficSeries>(*video_series(600));
  s->bucket_seconds = 0.002;
  const auto r = run_offline(s, random_model(), cfg, 20);
  bool saturated = false;
  for (const auto& t : r.log) {
    ASSERT_TRUE(std::isfinite(t.u_applied)) << t.step;
    ASSERT_TRUE(std::isfinite(t.error_adjusted)) << t.step;
    EXPECT_LE(std::abs(t.u_applied), 400.0);
    saturated |= std::abs(t.u_applied) == 400.0;
  }
  EXPECT_TRUE(saturated);
}

TEST(ReplaySession, OneTickLatencyOnEnable) {
  ReplaySession session(constant_series(100, 40), constant_model(90), config_with({1, 0, 0}));
  session.apply(cmd::Start{});
  for (int i = 0; i < 5; ++i) session.tick();
  session.apply(cmd::PidEnable{});
  const auto first = session.tick();
  EXPECT_TRUE(first.pid.enabled);
  EXPECT_EQ(first.u_applied, 0.0);
  EXPECT_EQ(first.adjusted_pred, first.raw_pred);
  const auto second = session.tick();
  EXPECT_NEAR(second.u_applied, 10.0, 1e-9);
  EXPECT_NEAR(second.error_adjusted, 0.0, 1e-9);
}

TEST(ReplaySession, DisableStopsCorrectionImmediately) {
  ReplaySession session(constant_series(100, 40), constant_model(90), config_with({1, 0, 0}));
  session.apply(cmd::Start{});
  session.apply(cmd::PidEnable{});
  session.tick();
  session.tick();
  session.apply(cmd::PidDisable{});
  const auto t = session.tick();
  EXPECT_FALSE(t.pid.enabled);
  EXPECT_EQ(t.u_applied, 0.0);
  // Re-enabling starts over with latency again.
  session.apply(cmd::PidEnable{});
  EXPECT_EQ(session.tick().u_applied, 0.0);
}

TEST(ReplaySession, ResetRestoresWarmupState) {
  ReplaySession session(video_series(100), random_model(), {});
  session.apply(cmd::Start{});
  session.apply(cmd::PidEnable{});
  for (int i = 0; i < 10; ++i) session.tick();
  session.apply(cmd::Reset{});
  EXPECT_EQ(session.cursor(), session.window_len());
  EXPECT_EQ(session.status(), SessionStatus::kIdle);
  EXPECT_FALSE(session.pid().enabled());
  const auto m = session.metrics();
  EXPECT_EQ(m.ticks, 0u);
  EXPECT_EQ(m.mae_raw, 0.0);
  EXPECT_EQ(m.rmse_adjusted, 0.0);
  EXPECT_TRUE(session.rolling().empty());
  EXPECT_FALSE(session.last_tick().has_value());
}

TEST(ReplaySession, ReplayAfterResetIsIdentical) {
  ReplaySession session(video_series(120), random_model(), {});
  auto run = [&] {
    std::vector<SyncTick> log;
    session.apply(cmd::Start{});
    session.apply(cmd::PidEnable{});
    while (session.status() == SessionStatus::kRunning) log.push_back(session.tick());
    return log;
  };
  const auto a = run();
  session.apply(cmd::Reset{});
  EXPECT_EQ(run(), a);
}

TEST(ReplaySession, StatusTransitionsAndErrors) {
  ReplaySession session(constant_series(5, 12), constant_model(5), {});
  EXPECT_EQ(session.status(), SessionStatus::kIdle);
  EXPECT_THROW(session.tick(), Error);
  session.apply(cmd::Pause{});
  EXPECT_EQ(session.status(), SessionStatus::kIdle);
  session.apply(cmd::Start{});
  session.tick();
  session.apply(cmd::Pause{});
  EXPECT_EQ(session.status(), SessionStatus::kPaused);
  session.apply(cmd::Start{});
  while (session.status() == SessionStatus::kRunning) session.tick();
  EXPECT_EQ(session.status(), SessionStatus::kFinished);
  EXPECT_EQ(session.cursor(), 12u);
  try {
    session.apply(cmd::Start{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kExhausted);
  }
  for (double bad : {-1.0, double(NAN), double(INFINITY)}) {
    try {
      session.apply(cmd::SetSpeed{bad});
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::kInvalidCommand);
    }
  }
  try {
    session.apply(cmd::PidSetGains{{-1, 0, 0}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kInvalidGains);
  }
  EXPECT_THROW(session.apply(cmd::PidSetGains{{11, 0, 0}}), Error);
}

TEST(ReplaySession, PartialUpdateIsAtomic) {
  ReplaySession session(constant_series(5, 20), constant_model(5), config_with({0.4, 0.05, 0}));
  session.apply(cmd::PidUpdate{true, std::nullopt, 0.2, std::nullopt});
  EXPECT_TRUE(session.pid().enabled());
  EXPECT_EQ(session.pid().gains(), (PidGains{0.4, 0.2, 0}));
  EXPECT_THROW(session.apply(cmd::PidUpdate{false, -3.0, std::nullopt, std::nullopt}), Error);
  EXPECT_TRUE(session.pid().enabled());
  EXPECT_EQ(session.pid().gains(), (PidGains{0.4, 0.2, 0}));
}

TEST(ReplaySession, Causality) {
  // Changing the actual value at step k must not change any u_applied at
  // steps <= k, and the first change must appear no earlier than k + 1.
  const auto base = video_series(150);
  auto bumped = std::make_shared<TrafficSeries>(*base);
  const std::size_t k = 60;
  bumped->values[k] += 500.0;
  const auto cfg = config_with({0.4, 0.3, 0.2});
  const auto model = random_model();
  const auto a = run_offline(base, model, cfg, 10);
  const auto b = run_offline(bumped, model, cfg, 10);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    if (a.log[i].step <= k) {
      EXPECT_EQ(a.log[i].u_applied, b.log[i].u_applied);
      EXPECT_EQ(a.log[i].raw_pred, b.log[i].raw_pred);
    }
    if (a.log[i].step == k + 1) EXPECT_NE(a.log[i].u_applied, b.log[i].u_applied);
  }
}

TEST(ReplaySession, UAppliedIsPreviousControllerOutput) {
  // Recompute u from the adjusted error log with a standalone controller.
  const auto cfg = config_with({0.4, 0.05, 0.1}, 500);
  const auto r = run_offline(video_series(200), random_model(), cfg, 30);
  PidController pid(cfg.initial_gains, 500);
  double pending = 0.0;
  for (const auto& t : r.log) {
    if (!t.pid.enabled) continue;
    if (!pid.enabled()) pid.activate();
    EXPECT_EQ(t.u_applied, pending);
    pending = pid.step(t.error_adjusted, 1.0);
    EXPECT_EQ(t.pid.integral, pid.integral());
  }
}

TEST(ReplaySession, MetricsMatchLog) {
  ReplaySession session(video_series(400), random_model(), config_with({0.4, 0.05, 0}));
  session.apply(cmd::Start{});
  std::vector<SyncTick> log;
  while (session.status() == SessionStatus::kRunning) {
    if (log.size() == 50) session.apply(cmd::PidEnable{});
    log.push_back(session.tick());
    if (log.size() % 37 == 0) {
      const auto inc = session.metrics();
      const auto re = metrics_from_log(log);
      EXPECT_EQ(inc.ticks, re.ticks);
      EXPECT_NEAR(inc.mae_raw, re.mae_raw, 1e-9);
      EXPECT_NEAR(inc.mae_adjusted, re.mae_adjusted, 1e-9);
      EXPECT_NEAR(inc.rmse_raw, re.rmse_raw, 1e-9);
      EXPECT_NEAR(inc.rmse_adjusted, re.rmse_adjusted, 1e-9);
    }
  }
  EXPECT_EQ(session.rolling().size(), 300u);
  EXPECT_EQ(session.rolling().back(), log.back());
}

TEST(ReplaySession, NoTickDuringWarmup) {
  const auto r = run_offline(video_series(100), random_model(12), {}, std::nullopt);
  EXPECT_EQ(r.log.front().step, 12u);
  for (std::size_t i = 1; i < r.log.size(); ++i) EXPECT_EQ(r.log[i].step, r.log[i - 1].step + 1);
  EXPECT_EQ(r.log.back().step, 99u);
}

TEST(ReplaySession, TimeAndDtFollowBucket) {
  ReplaySession session(constant_series(100, 30, 0.5), constant_model(90), config_with({0, 1, 0}));
  session.apply(cmd::Start{});
  session.apply(cmd::PidEnable{});
  const auto t = session.tick();
  EXPECT_DOUBLE_EQ(t.t_seconds, 8 * 0.5);
  EXPECT_DOUBLE_EQ(t.pid.integral, 10 * 0.5);
}

TEST(ReplaySession, DefaultIntegralLimitFromSeries) {
  const auto s = video_series(300);
  ReplaySession session(s, random_model(), {});
  EXPECT_DOUBLE_EQ(session.pid().integral_limit(), std::max(1.0, 10 * stddev(s->values)));
  ReplaySession flat(constant_series(5, 30), constant_model(5), {});
  EXPECT_EQ(flat.pid().integral_limit(), 1.0);
}

TEST(ReplaySession, AutotuneChangesGainsOnlyWhenEnabled) {
  auto cfg = config_with({0.4, 0.05, 0}, 1000);
  auto off = run_offline(video_series(300), random_model(), cfg, 10);
  EXPECT_EQ(off.log.back().pid.kp, 0.4);
  cfg.autotune.enabled = true;
  cfg.autotune.window = 20;
  auto on = run_offline(video_series(300), random_model(), cfg, 10);
  bool changed = false;
  for (const auto& t : on.log) {
    changed |= t.pid.kp != 0.4 || t.pid.ki != 0.05 || t.pid.kd != 0.0;
    EXPECT_LE(t.pid.kp, cfg.autotune.gain_max);
    EXPECT_GE(t.pid.kd, 0.0);
  }
  EXPECT_TRUE(changed);
}

TEST(RunOffline, NeverEnabledKeepsMetricsEqual) {
  const auto r = run_offline(video_series(300), random_model(), {}, std::nullopt);
  EXPECT_EQ(r.summary.overall.mae_raw, r.summary.overall.mae_adjusted);
  EXPECT_EQ(r.summary.overall.rmse_raw, r.summary.overall.rmse_adjusted);
  EXPECT_FALSE(r.summary.activation_step.has_value());
  EXPECT_EQ(r.summary.post_activation.ticks, 0u);
}

TEST(RunOffline, TooShort) {
  try {
    run_offline(constant_series(1, 10), constant_model(1), {}, std::nullopt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kTooShort);
  }
  EXPECT_NO_THROW(run_offline(constant_series(1, 11), constant_model(1), {}, std::nullopt));
}

TEST(RunOffline, Deterministic) {
  const auto cfg = config_with({0.4, 0.05, 0.1});
  const auto a = run_offline(video_series(300), random_model(), cfg, 30);
  const auto b = run_offline(video_series(300), random_model(), cfg, 30);
  EXPECT_EQ(a.log, b.log);
}

TEST(RunScript, GainChangeMidRun) {
  CommandScript script{{10, cmd::PidEnable{}}, {50, cmd::PidSetGains{{1, 0, 0}}}};
  const auto r = run_script(constant_series(100, 100), constant_model(90), config_with({0, 0, 0}), script);
  for (const auto& t : r.log) {
    if (t.step < 50) EXPECT_EQ(t.pid.kp, 0.0);
    if (t.step >= 50) EXPECT_EQ(t.pid.kp, 1.0);
    if (t.step == 50) EXPECT_EQ(t.u_applied, 0.0);
    if (t.step == 51) EXPECT_NEAR(t.u_applied, 10.0, 1e-9);
  }
}

TEST(RunScript, PauseInScriptStopsReplay) {
  CommandScript script{{20, cmd::Pause{}}};
  const auto r = run_script(constant_series(1, 100), constant_model(1), {}, script);
  EXPECT_EQ(r.log.back().step, 19u);
}

TEST(LiveRunner, MatchesOfflineScript) {
  const auto series = video_series(300, 0.002);
  const auto model = random_model();
  const auto cfg = config_with({0.4, 0.05, 0.1});
  CommandScript script{{30, cmd::PidEnable{}}, {120, cmd::PidSetGains{{0.8, 0.1, 0}}}, {200, cmd::PidDisable{}},
                       {240, cmd::PidEnable{}}};
  const auto offline = run_script(series, model, cfg, script);

  auto live_cfg = cfg;
  live_cfg.speed = 1.0;
  LiveRunner runner(ReplaySession(series, model, live_cfg), script);
  std::vector<SyncTick> log;
  runner.add_listener([&](const SyncTick& t) { log.push_back(t); });
  runner.start();
  runner.submit(cmd::Start{}).get();
  ASSERT_TRUE(runner.wait_finished(10s));
  runner.stop();
  EXPECT_EQ(log, offline.log);
}

TEST(LiveRunner, CommandsAreAcknowledgedWithSnapshot) {
  LiveRunner runner(ReplaySession(video_series(2000, 0.01), random_model(), config_with({0.4, 0.05, 0})));
  runner.start();
  auto snap = runner.submit(cmd::PidEnable{}).get();
  EXPECT_TRUE(snap.pid.enabled);
  snap = runner.submit(cmd::PidSetGains{{0.6, 0, 0}}).get();
  EXPECT_EQ(snap.pid.kp, 0.6);
  auto bad = runner.submit(cmd::PidSetGains{{-1, 0, 0}});
  EXPECT_THROW(bad.get(), Error);
  snap = runner.submit(cmd::Start{}).get();
  EXPECT_EQ(snap.status, SessionStatus::kRunning);
  std::this_thread::sleep_for(100ms);
  snap = runner.submit(cmd::Pause{}).get();
  EXPECT_EQ(snap.status, SessionStatus::kPaused);
  const auto cursor = snap.cursor;
  EXPECT_GT(cursor, 8u);
  std::this_thread::sleep_for(50ms);
  EXPECT_EQ(runner.snapshot().cursor, cursor);
  snap = runner.submit(cmd::Reset{}).get();
  EXPECT_EQ(snap.cursor, 8u);
  EXPECT_FALSE(snap.pid.enabled);
  runner.stop();
  EXPECT_THROW(runner.submit(cmd::Start{}).get(), Error);
}

TEST(LiveRunner, UnpacedRunIsFast) {
  auto cfg = SyncConfig{};
  cfg.speed = 0.0;
  LiveRunner runner(ReplaySession(video_series(1800), random_model(), cfg));
  runner.start();
  const auto t0 = std::chrono::steady_clock::now();
  runner.submit(cmd::Start{}).get();
  ASSERT_TRUE(runner.wait_finished(5s));
  EXPECT_LT(std::chrono::steady_clock::now() - t0, 5s);
  EXPECT_EQ(runner.snapshot().metrics.ticks, 1800u - 8u);
}

TEST(LiveRunner, PacingHasBoundedLag) {
  auto cfg = SyncConfig{};
  cfg.speed = 1.0;
  LiveRunner runner(ReplaySession(video_series(60, 0.02), random_model(), cfg));
  runner.start();
  const auto t0 = std::chrono::steady_clock::now();
  runner.submit(cmd::Start{}).get();
  ASSERT_TRUE(runner.wait_finished(10s));
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto p = runner.pacing();
  EXPECT_EQ(p.ticks_since_anchor, 52u);
  EXPECT_LT(p.max_lag_seconds, 0.1);
  EXPECT_NEAR(elapsed, 51 * 0.02, 0.1);
}

TEST(LiveRunner, SpeedChangeReanchors) {
  auto cfg = SyncConfig{};
  cfg.speed = 0.01;  // effectively stalled: 100 s per tick
  LiveRunner runner(ReplaySession(video_series(100, 1.0), random_model(), cfg));
  runner.start();
  runner.submit(cmd::Start{}).get();
  std::this_thread::sleep_for(50ms);
  EXPECT_LE(runner.snapshot().cursor, 9u);
  runner.submit(cmd::SetSpeed{0.0}).get();
  EXPECT_TRUE(runner.wait_finished(5s));
}

TEST(TickSubscription, DropsOldestWhenFull) {
  TickSubscription sub(3);
  for (std::size_t i = 0; i < 5; ++i) {
    SyncTick t;
    t.step = i;
    sub.push(t);
  }
  EXPECT_EQ(sub.dropped(), 2u);
  EXPECT_EQ(sub.next(0ms)->step, 2u);
  EXPECT_EQ(sub.next(0ms)->step, 3u);
  EXPECT_EQ(sub.next(0ms)->step, 4u);
  EXPECT_FALSE(sub.next(10ms).has_value());
  sub.close();
  EXPECT_TRUE(sub.closed());
  sub.push(SyncTick{});
  EXPECT_FALSE(sub.next(0ms).has_value());
}

TEST(TickSubscription, SlowConsumerDoesNotBlockLoop) {
  auto cfg = SyncConfig{};
  cfg.speed = 0.0;
  LiveRunner runner(ReplaySession(video_series(1000), random_model(), cfg));
  auto slow = runner.subscribe(4);
  auto fast = runner.subscribe(2000);
  runner.start();
  runner.submit(cmd::Start{}).get();
  ASSERT_TRUE(runner.wait_finished(5s));
  EXPECT_GT(slow->dropped(), 0u);
  std::size_t last = 0, count = 0;
  while (auto t = slow->next(0ms)) {
    EXPECT_GT(t->step, last);
    last = t->step;
    ++count;
  }
  EXPECT_EQ(count, 4u);
  EXPECT_EQ(last, 999u);
  EXPECT_EQ(fast->dropped(), 0u);
  runner.stop();
  EXPECT_TRUE(fast->closed());
}

TEST(TickLogCsv, HeaderAndRows) {
  SyncTick t;
  t.step = 31;
  t.t_seconds = 31;
  t.actual = 210.5;
  t.raw_pred = 200;
  t.adjusted_pred = 205.25;
  t.error_raw = 10.5;
  t.error_adjusted = 5.25;
  t.u_applied = 5.25;
  t.pid = {true, 0.4, 0.05, 0, 12};
  const std::vector<SyncTick> log{t};
  EXPECT_EQ(tick_log_csv(log),
            "step,t,actual,raw_pred,adjusted_pred,error_raw,error_adjusted,u_applied,pid_enabled,kp,ki,kd\n"
            "31,31,210.5,200,205.25,10.5,5.25,5.25,1,0.4,0.05,0\n");
}
