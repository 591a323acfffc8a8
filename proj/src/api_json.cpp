#include "ndtsync/api_json.hpp"

#include "ndtsync/error.hpp"

namespace ndtsync {

using nlohmann::json;

json to_json(const SyncTick& t) {
  return {{"step", t.step},
          {"t", t.t_seconds},
          {"actual", t.actual},
          {"raw_pred", t.raw_pred},
          {"adjusted_pred", t.adjusted_pred},
          {"error_raw", t.error_raw},
          {"error_adjusted", t.error_adjusted},
          {"u_applied", t.u_applied},
          {"pid",
           {{"enabled", t.pid.enabled}, {"kp", t.pid.kp}, {"ki", t.pid.ki}, {"kd", t.pid.kd},
            {"integral", t.pid.integral}}}};
}

json to_json(const SessionMetrics& m) {
  return {{"ticks", m.ticks},
          {"mae_raw", m.mae_raw},
          {"mae_adjusted", m.mae_adjusted},
          {"rmse_raw", m.rmse_raw},
          {"rmse_adjusted", m.rmse_adjusted}};
}

json to_json(const SessionSnapshot& s) {
  return {{"status", to_string(s.status)},
          {"cursor", s.cursor},
          {"speed", s.speed},
          {"pid",
           {{"enabled", s.pid.enabled}, {"kp", s.pid.kp}, {"ki", s.pid.ki}, {"kd", s.pid.kd},
            {"integral", s.pid.integral}, {"integral_limit", s.integral_limit}}},
          {"metrics", to_json(s.metrics)},
          {"last_tick", s.last_tick ? to_json(*s.last_tick) : json(nullptr)},
          {"series", {{"label", s.series_label}, {"length", s.series_length}, {"bucket_seconds", s.bucket_seconds}}},
          {"model", {{"window", s.window_len}, {"horizon", s.horizon}, {"config_hash", s.config_hash}}}};
}

SessionStatus parse_status(std::string_view name) {
  for (auto s : {SessionStatus::kIdle, SessionStatus::kRunning, SessionStatus::kPaused, SessionStatus::kFinished}) {
    if (name == to_string(s)) return s;
  }
  throw Error(Errc::kInvalidArgument, "unknown session status '" + std::string(name) + "'");
}

SyncTick tick_from_json(const json& j) {
  SyncTick t;
  t.step = j.at("step").get<std::size_t>();
  t.t_seconds = j.at("t").get<double>();
  t.actual = j.at("actual").get<double>();
  t.raw_pred = j.at("raw_pred").get<double>();
  t.adjusted_pred = j.at("adjusted_pred").get<double>();
  t.error_raw = j.at("error_raw").get<double>();
  t.error_adjusted = j.at("error_adjusted").get<double>();
  t.u_applied = j.at("u_applied").get<double>();
  const auto& p = j.at("pid");
  t.pid = {p.at("enabled").get<bool>(), p.at("kp").get<double>(), p.at("ki").get<double>(),
           p.at("kd").get<double>(), p.at("integral").get<double>()};
  return t;
}

SessionSnapshot snapshot_from_json(const json& j) {
  SessionSnapshot s;
  s.status = parse_status(j.at("status").get<std::string>());
  s.cursor = j.at("cursor").get<std::size_t>();
  s.speed = j.at("speed").get<double>();
  const auto& p = j.at("pid");
  s.pid = {p.at("enabled").get<bool>(), p.at("kp").get<double>(), p.at("ki").get<double>(),
           p.at("kd").get<double>(), p.at("integral").get<double>()};
  s.integral_limit = p.at("integral_limit").get<double>();
  const auto& m = j.at("metrics");
  s.metrics = {m.at("ticks").get<std::size_t>(), m.at("mae_raw").get<double>(), m.at("mae_adjusted").get<double>(),
               m.at("rmse_raw").get<double>(), m.at("rmse_adjusted").get<double>()};
  if (!j.at("last_tick").is_null()) s.last_tick = tick_from_json(j.at("last_tick"));
  const auto& ser = j.at("series");
  s.series_label = ser.at("label").get<std::string>();
  s.series_length = ser.at("length").get<std::size_t>();
  s.bucket_seconds = ser.at("bucket_seconds").get<double>();
  const auto& mod = j.at("model");
  s.window_len = mod.at("window").get<std::size_t>();
  s.horizon = mod.at("horizon").get<std::size_t>();
  s.config_hash = mod.at("config_hash").get<std::string>();
  return s;
}

}  // namespace ndtsync
