// ndtsync command-line front end: capture ingest, synthetic traces,
// training, offline evaluation and the live service.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "ndtsync/cnn.hpp"
#include "ndtsync/error.hpp"
#include "ndtsync/ingest.hpp"
#include "ndtsync/series.hpp"
#include "ndtsync/service.hpp"
#include "ndtsync/synchronizer.hpp"

namespace {

using namespace ndtsync;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string fmt(double v, int precision = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

PidGains parse_gains(const std::string& text) {
  PidGains g;
  std::stringstream ss(text);
  std::string part;
  std::size_t i = 0;
  while (std::getline(ss, part, ',')) {
    if (i >= 3) throw UsageError("--pid expects kp,ki,kd");
    try {
      std::size_t used = 0;
      g[i] = std::stod(part, &used);
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::logic_error&) {
      throw UsageError("--pid: '" + part + "' is not a number");
    }
    ++i;
  }
  if (i != 3) throw UsageError("--pid expects kp,ki,kd");
  return g;
}

std::shared_ptr<const TrafficSeries> sub_series(const TrafficSeries& full, const SplitResult& parts,
                                                const std::string& name) {
  if (name == "all") return std::make_shared<const TrafficSeries>(full);
  const TrafficSeries* part = name == "train" ? &parts.train
                              : name == "val" ? &parts.val
                              : name == "test" ? &parts.test
                                               : nullptr;
  if (!part) throw UsageError("unknown split '" + name + "'");
  auto out = std::make_shared<TrafficSeries>(*part);
  out->label = full.label + ":" + name;
  return out;
}

void print_metrics_table(std::ostream& os, const OfflineSummary& s) {
  os << "scope            ticks    mae_raw   mae_adj  rmse_raw  rmse_adj\n";
  auto row = [&](const char* name, const SessionMetrics& m) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-14s %7zu %10.3f %9.3f %9.3f %9.3f\n", name, m.ticks, m.mae_raw,
                  m.mae_adjusted, m.rmse_raw, m.rmse_adjusted);
    os << buf;
  };
  row("overall", s.overall);
  if (s.activation_step) row("post-activation", s.post_activation);
}

struct IngestArgs {
  std::string pcap, out, label;
  double bucket_ms = 1000.0;
};

int run_ingest(const IngestArgs& a) {
  const auto bytes = read_binary_file(a.pcap);
  const auto parsed = parse_pcap(bytes);
  if (parsed.truncated) {
    std::cerr << "warning: capture ends in a truncated record; kept " << parsed.records.size() << " packets\n";
  }
  auto series = bucketize(parsed.records, a.bucket_ms / 1000.0);
  series.label = a.label.empty() ? std::filesystem::path(a.pcap).stem().string() : a.label;
  series.generator = "pcap";
  write_csv_file(series, a.out);
  std::cout << "packets=" << parsed.records.size() << " buckets=" << series.size()
            << " bucket_seconds=" << series.bucket_seconds << " -> " << a.out << "\n";
  return kExitOk;
}

struct GenArgs {
  std::string profile = "video", out;
  std::size_t steps = 1800;
  std::uint64_t seed = 1;
};

int run_gen(const GenArgs& a) {
  const auto series = generate(SyntheticProfile::defaults(parse_profile_kind(a.profile), a.seed), a.steps);
  write_csv_file(series, a.out);
  std::cout << "profile=" << a.profile << " steps=" << series.size() << " mean=" << fmt(mean(series.values))
            << " std=" << fmt(stddev(series.values)) << " -> " << a.out << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string series, out;
  CnnConfig config;
  bool quiet = false;
};

int run_train(const TrainArgs& a) {
  const auto series = read_csv_file(a.series);
  const auto parts = split(series, SplitSpec{});
  const auto norm = fit_normalizer(parts.train);
  const auto w = a.config.window_len, h = a.config.horizon;
  const auto train_set = make_windows(parts.train, w, h, norm);
  const auto val_set = make_windows(parts.val, w, h, norm);
  const auto test_set = make_windows(parts.test, w, h, norm);
  std::cout << "split train=" << parts.train.size() << " val=" << parts.val.size() << " test=" << parts.test.size()
            << " params=" << CnnModel::init(a.config, norm).parameter_count() << "\n";

  const auto result = train(a.config, norm, train_set, val_set);
  if (!a.quiet) {
    for (const auto& e : result.trace) {
      std::cout << "epoch " << e.epoch << " loss=" << fmt(e.train_loss, 6) << " val_mae=" << fmt(e.val_mae)
                << " val_rmse=" << fmt(e.val_rmse) << "\n";
    }
  }
  const auto model_err = evaluate(result.model, test_set);
  const auto naive = persistence_baseline(test_set, norm);
  std::cout << "best_epoch=" << result.best_epoch << " test_mae=" << fmt(model_err.mae)
            << " test_rmse=" << fmt(model_err.rmse) << " persistence_mae=" << fmt(naive.mae)
            << " persistence_rmse=" << fmt(naive.rmse) << "\n";
  save_model_file(result.model, a.out);
  std::cout << "model " << result.model.config_hash() << " -> " << a.out << "\n";
  return kExitOk;
}

struct LoopArgs {
  std::string series, model, split = "test", pid_input = "adjusted";
  std::optional<double> integral_limit;
  std::optional<double> output_limit;
};

SyncConfig loop_config(const LoopArgs& a, const SplitResult& parts) {
  SyncConfig c;
  if (a.pid_input != "adjusted" && a.pid_input != "raw") throw UsageError("--pid-input must be adjusted or raw");
  c.correct_on_adjusted_error = a.pid_input == "adjusted";
  c.integral_limit = a.integral_limit.value_or(std::max(1.0, 10.0 * stddev(parts.train.values)));
  c.output_limit = a.output_limit;
  return c;
}

struct EvalArgs {
  LoopArgs loop;
  std::string pid = "0.4,0.05,0";
  std::size_t enable_at = 30;
  bool sweep = false;
  std::string sweep_split = "val";
  std::string log_out;
};

int run_eval(const EvalArgs& a) {
  const auto full = read_csv_file(a.loop.series);
  const auto model = std::make_shared<const CnnModel>(load_model_file(a.loop.model));
  const auto parts = split(full, SplitSpec{});
  const auto series = sub_series(full, parts, a.loop.split);
  SyncConfig config = loop_config(a.loop, parts);
  config.initial_gains = parse_gains(a.pid);
  const std::size_t enable_step = model->config.window_len + a.enable_at;

  if (a.sweep) {
    // By default gains are chosen on the validation split so the replayed
    // split stays unseen.
    const auto tuning = sub_series(full, parts, a.sweep_split);
    const auto sweep = sweep_gains(tuning, model, config, enable_step);
    const auto& best = sweep.entries[sweep.best];
    std::cout << "sweep on " << a.sweep_split << ": " << sweep.entries.size() << " grid points, best kp=" << best.gains.kp
              << " ki=" << best.gains.ki << " kd=" << best.gains.kd
              << " post-activation mae_adj=" << fmt(best.summary.post_activation.mae_adjusted)
              << " mae_raw=" << fmt(best.summary.post_activation.mae_raw) << "\n";
    config.initial_gains = best.gains;
  }

  const auto result = run_offline(series, model, config, enable_step);
  std::cout << "series=" << series->label << " ticks=" << result.log.size() << " gains=" << config.initial_gains.kp
            << "," << config.initial_gains.ki << "," << config.initial_gains.kd << " enable_at_step=" << enable_step
            << "\n";
  print_metrics_table(std::cout, result.summary);
  const auto& post = result.summary.post_activation;
  if (post.ticks > 0 && post.mae_raw > 0) {
    std::cout << "post-activation mae_adj/mae_raw=" << fmt(post.mae_adjusted / post.mae_raw, 4) << "\n";
  }
  if (!a.log_out.empty()) {
    std::ofstream out(a.log_out);
    if (!out) throw Error(Errc::kInvalidArgument, "cannot write " + a.log_out);
    out << tick_log_csv(result.log);
  }
  return kExitOk;
}

struct ServeArgs {
  LoopArgs loop;
  ServiceConfig service;
  double speed = 1.0;
  PidGains gains{0.4, 0.05, 0.0};
  bool autotune = false;
  std::string cors;
};

int run_serve(ServeArgs a) {
  const auto full = read_csv_file(a.loop.series);
  const auto model = std::make_shared<const CnnModel>(load_model_file(a.loop.model));
  const auto parts = split(full, SplitSpec{});
  const auto series = sub_series(full, parts, a.loop.split);
  SyncConfig config = loop_config(a.loop, parts);
  config.initial_gains = a.gains;
  config.speed = a.speed;
  config.autotune.enabled = a.autotune;
  config.gain_max = a.service.gain_max;
  if (!a.cors.empty()) {
    a.service.cors_allowlist.clear();
    std::stringstream ss(a.cors);
    for (std::string o; std::getline(ss, o, ',');) a.service.cors_allowlist.push_back(o);
  }

  SyncService service(a.service);
  service.load_session(ReplaySession(series, model, config));
  std::cout << "serving " << series->label << " (" << series->size() << " points, window "
            << model->config.window_len << ") on http://" << a.service.host << ":" << a.service.port << std::endl;
  if (!service.listen()) throw Error(Errc::kInvalidArgument, "cannot listen on port " + std::to_string(a.service.port));
  return kExitOk;
}

void add_loop_options(CLI::App* cmd, LoopArgs& a) {
  cmd->add_option("--series", a.series, "Series CSV (the whole trace; it is split internally)")->required();
  cmd->add_option("--model", a.model, "Model file from `train`")->required();
  cmd->add_option("--split", a.split, "Part of the series to replay")
      ->check(CLI::IsMember({"train", "val", "test", "all"}))
      ->capture_default_str();
  cmd->add_option("--integral-limit", a.integral_limit, "Anti-windup clamp in pps*s (default 10x train std)")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--output-limit", a.output_limit, "Clamp on |u| in pps (default 2x the replayed maximum)")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--pid-input", a.pid_input, "Controller input: adjusted or raw error")
      ->check(CLI::IsMember({"adjusted", "raw"}))
      ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Network digital twin traffic synchronizer"};
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* ingest_cmd = app.add_subcommand("ingest", "Bucketize a pcap capture into a pps series CSV");
  ingest_cmd->add_option("--pcap", ingest.pcap, "Capture file (classic pcap)")->required();
  ingest_cmd->add_option("--bucket-ms", ingest.bucket_ms, "Bucket width in milliseconds")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  ingest_cmd->add_option("--label", ingest.label, "Series label (default: file stem)");
  ingest_cmd->add_option("--out", ingest.out, "Output CSV")->required();

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic pps series");
  gen_cmd->add_option("--profile", gen.profile, "video, iperf, constant or sine")
      ->check(CLI::IsMember({"video", "iperf", "constant", "sine"}))
      ->capture_default_str();
  gen_cmd->add_option("--steps", gen.steps, "Number of one-second buckets")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "RNG seed")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output CSV")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train the CNN forecaster");
  train_cmd->add_option("--series", tr.series, "Series CSV")->required();
  train_cmd->add_option("--window", tr.config.window_len)->capture_default_str();
  train_cmd->add_option("--horizon", tr.config.horizon)->capture_default_str();
  train_cmd->add_option("--epochs", tr.config.epochs)->capture_default_str();
  train_cmd->add_option("--batch", tr.config.batch_size)->capture_default_str();
  train_cmd->add_option("--lr", tr.config.learning_rate)->capture_default_str();
  train_cmd->add_option("--seed", tr.config.seed)->capture_default_str();
  train_cmd->add_flag("--quiet", tr.quiet, "Skip the per-epoch trace");
  train_cmd->add_option("--out", tr.out, "Output model file")->required();

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Offline replay with PID correction and a metrics table");
  add_loop_options(eval_cmd, ev.loop);
  eval_cmd->add_option("--pid", ev.pid, "Gains kp,ki,kd")->capture_default_str();
  eval_cmd->add_option("--enable-at", ev.enable_at, "Ticks after warm-up before the PID is enabled")
      ->capture_default_str();
  eval_cmd->add_flag("--sweep", ev.sweep, "Pick gains by grid search on the validation split");
  eval_cmd->add_option("--sweep-split", ev.sweep_split, "Split the sweep scores gains on")
      ->check(CLI::IsMember({"train", "val", "test", "all"}))
      ->capture_default_str();
  eval_cmd->add_option("--log-out", ev.log_out, "Write the tick log CSV here");

  ServeArgs sv;
  auto* serve_cmd = app.add_subcommand("serve", "Run the live loop behind the HTTP API");
  add_loop_options(serve_cmd, sv.loop);
  serve_cmd->add_option("--host", sv.service.host)->capture_default_str();
  serve_cmd->add_option("--port", sv.service.port)->capture_default_str();
  serve_cmd->add_option("--speed", sv.speed, "1 = real time, 0 = unpaced")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  serve_cmd->add_option("--pid-kp", sv.gains.kp)->check(CLI::NonNegativeNumber)->capture_default_str();
  serve_cmd->add_option("--pid-ki", sv.gains.ki)->check(CLI::NonNegativeNumber)->capture_default_str();
  serve_cmd->add_option("--pid-kd", sv.gains.kd)->check(CLI::NonNegativeNumber)->capture_default_str();
  serve_cmd->add_flag("--autotune", sv.autotune, "Enable the hill-climbing gain tuner");
  serve_cmd->add_option("--retention", sv.service.retention, "Ticks kept for /api/log")->capture_default_str();
  serve_cmd->add_option("--gain-max", sv.service.gain_max)->check(CLI::PositiveNumber)->capture_default_str();
  serve_cmd->add_option("--cors", sv.cors, "Comma-separated allowed origins (default *)");
  serve_cmd->add_option("--static-dir", sv.service.static_dir, "Console build served at /")
      ->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*ingest_cmd) return run_ingest(ingest);
    if (*gen_cmd) return run_gen(gen);
    if (*train_cmd) return run_train(tr);
    if (*eval_cmd) return run_eval(ev);
    if (*serve_cmd) return run_serve(sv);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    if (e.code() == Errc::kNonFiniteLoss) return kExitNumeric;
    if (e.code() == Errc::kInvalidGains || e.code() == Errc::kInvalidCommand) return kExitUsage;
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
