#include "ndtsync/service.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <deque>
#include <mutex>
#include <thread>

#include <httplib.h>

#include "ndtsync/api_json.hpp"
#include "ndtsync/error.hpp"

namespace ndtsync {
namespace {

using nlohmann::json;

class TickLog {
 public:
  explicit TickLog(std::size_t capacity) : capacity_(std::max<std::size_t>(1, capacity)) {}

  void append(const SyncTick& t) {
    std::lock_guard lk(mu_);
    // A step that does not advance means the session was reset.
    if (!ticks_.empty() && t.step <= ticks_.back().step) ticks_.clear();
    ticks_.push_back(t);
    while (ticks_.size() > capacity_) ticks_.pop_front();
  }

  void clear() {
    std::lock_guard lk(mu_);
    ticks_.clear();
  }

  std::vector<SyncTick> since(std::size_t from) const {
    std::lock_guard lk(mu_);
    std::vector<SyncTick> out;
    for (const auto& t : ticks_) {
      if (t.step >= from) out.push_back(t);
    }
    return out;
  }

 private:
  mutable std::mutex mu_;
  std::deque<SyncTick> ticks_;
  std::size_t capacity_;
};

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& message, json extra = json::object()) {
  extra["error"] = message;
  reply(res, status, extra);
}

}  // namespace

struct SyncService::Impl {
  ServiceConfig config;
  httplib::Server server;
  std::thread server_thread;
  int bound_port = -1;

  std::mutex session_mu;
  std::shared_ptr<LiveRunner> runner;
  std::shared_ptr<TickLog> log;

  explicit Impl(ServiceConfig cfg) : config(std::move(cfg)) { install_routes(); }

  std::pair<std::shared_ptr<LiveRunner>, std::shared_ptr<TickLog>> current() {
    std::lock_guard lk(session_mu);
    return {runner, log};
  }

  // Submits commands in order and waits for each acknowledgement. Writes
  // the response and returns false on failure.
  bool run_commands(LiveRunner& r, const std::vector<Command>& commands, httplib::Response& res) {
    SessionSnapshot snap = r.snapshot();
    for (const auto& c : commands) {
      auto fut = r.submit(c);
      if (fut.wait_for(config.ack_timeout) != std::future_status::ready) {
        reply_error(res, 504, "command was not acknowledged in time");
        return false;
      }
      try {
        snap = fut.get();
      } catch (const Error& e) {
        switch (e.code()) {
          case Errc::kExhausted:
            reply_error(res, 409, e.what(), {{"status", to_string(r.snapshot().status)}});
            break;
          case Errc::kInvalidGains:
          case Errc::kInvalidCommand:
            reply_error(res, 422, e.what());
            break;
          default:
            reply_error(res, 500, e.what());
        }
        return false;
      }
    }
    reply(res, 200, to_json(snap));
    return true;
  }

  static std::optional<json> parse_object(const httplib::Request& req, httplib::Response& res) {
    json body = json::parse(req.body.empty() ? std::string("{}") : req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object()) {
      reply_error(res, 422, "request body must be a JSON object");
      return std::nullopt;
    }
    return body;
  }

  void install_routes() {
    server.set_post_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
      const auto origin = req.get_header_value("Origin");
      if (origin.empty()) return;
      const auto& allow = config.cors_allowlist;
      if (std::find(allow.begin(), allow.end(), "*") != allow.end()) {
        res.set_header("Access-Control-Allow-Origin", "*");
      } else if (std::find(allow.begin(), allow.end(), origin) != allow.end()) {
        res.set_header("Access-Control-Allow-Origin", origin);
        res.set_header("Vary", "Origin");
      }
    });
    server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.status = 204;
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
    });

    server.Get("/api/state", [this](const httplib::Request&, httplib::Response& res) {
      auto [r, log] = current();
      if (!r) return reply_error(res, 503, "no session loaded");
      reply(res, 200, to_json(r->snapshot()));
    });

    server.Post("/api/pid", [this](const httplib::Request& req, httplib::Response& res) {
      auto [r, log] = current();
      if (!r) return reply_error(res, 503, "no session loaded");
      auto body = parse_object(req, res);
      if (!body) return;
      cmd::PidUpdate update;
      if (body->contains("enabled")) {
        if (!(*body)["enabled"].is_boolean()) return reply_error(res, 422, "'enabled' must be a boolean");
        update.enabled = (*body)["enabled"].get<bool>();
      }
      for (const char* key : {"kp", "ki", "kd"}) {
        if (!body->contains(key)) continue;
        const auto& v = (*body)[key];
        if (!v.is_number()) return reply_error(res, 422, std::string("'") + key + "' must be a number");
        const double g = v.get<double>();
        if (!std::isfinite(g) || g < 0.0 || g > config.gain_max) {
          return reply_error(res, 422, std::string("'") + key + "' must lie in [0, " +
                                           std::to_string(config.gain_max) + "]");
        }
        (key[1] == 'p' ? update.kp : key[1] == 'i' ? update.ki : update.kd) = g;
      }
      run_commands(*r, {update}, res);
    });

    server.Post("/api/replay", [this](const httplib::Request& req, httplib::Response& res) {
      auto [r, log] = current();
      if (!r) return reply_error(res, 503, "no session loaded");
      auto body = parse_object(req, res);
      if (!body) return;
      std::vector<Command> commands;
      if (body->contains("speed")) {
        const auto& v = (*body)["speed"];
        if (!v.is_number() || !std::isfinite(v.get<double>()) || v.get<double>() < 0.0) {
          return reply_error(res, 422, "'speed' must be a finite number >= 0");
        }
        commands.push_back(cmd::SetSpeed{v.get<double>()});
      }
      const std::string action = body->value("action", std::string());
      if (action == "start") {
        commands.push_back(cmd::Start{});
      } else if (action == "pause") {
        commands.push_back(cmd::Pause{});
      } else if (action == "reset") {
        commands.push_back(cmd::Reset{});
      } else {
        return reply_error(res, 422, "unknown action '" + action + "'");
      }
      if (run_commands(*r, commands, res) && action == "reset") log->clear();
    });

    server.Get("/api/log", [this](const httplib::Request& req, httplib::Response& res) {
      auto [r, log] = current();
      if (!r) return reply_error(res, 503, "no session loaded");
      std::size_t from = 0;
      if (req.has_param("from")) {
        const auto s = req.get_param_value("from");
        const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), from);
        if (ec != std::errc{} || ptr != s.data() + s.size()) {
          return reply_error(res, 400, "'from' must be a non-negative integer");
        }
      }
      const auto snap = r->snapshot();
      if (from > snap.cursor) {
        return reply_error(res, 416, "'from' is beyond the live edge", {{"cursor", snap.cursor}});
      }
      json out = json::array();
      for (const auto& t : log->since(from)) out.push_back(to_json(t));
      reply(res, 200, out);
    });

    server.Get("/api/stream", [this](const httplib::Request&, httplib::Response& res) {
      auto [r, log] = current();
      if (!r) return reply_error(res, 503, "no session loaded");
      auto sub = r->subscribe(config.stream_buffer);
      res.set_header("Cache-Control", "no-cache");
      res.set_header("X-Accel-Buffering", "no");
      const auto heartbeat = config.heartbeat;
      const auto poll = std::min(heartbeat, std::chrono::milliseconds(250));
      auto last_write = std::chrono::steady_clock::now();
      std::optional<std::size_t> last_step;
      bool opened = false;
      res.set_chunked_content_provider(
          "text/event-stream",
          [sub, heartbeat, poll, last_write, last_step, opened](std::size_t, httplib::DataSink& sink) mutable {
            if (!opened) {
              opened = true;
              const std::string hello = "retry: 1000\n\n";
              return sink.write(hello.data(), hello.size());
            }
            if (sub->closed()) {
              sink.done();
              return true;
            }
            const auto now = std::chrono::steady_clock::now();
            if (auto t = sub->next(poll)) {
              if (last_step && t->step <= *last_step) {
                // Session was reset; end this stream so each connection
                // sees strictly increasing steps.
                const std::string ev = "event: reset\ndata: {}\n\n";
                sink.write(ev.data(), ev.size());
                sink.done();
                return true;
              }
              last_step = t->step;
              const std::string ev =
                  "id: " + std::to_string(t->step) + "\ndata: " + to_json(*t).dump() + "\n\n";
              last_write = std::chrono::steady_clock::now();
              return sink.write(ev.data(), ev.size());
            }
            if (now - last_write >= heartbeat) {
              last_write = now;
              const std::string beat = ": heartbeat\n\n";
              return sink.write(beat.data(), beat.size());
            }
            return true;
          },
          [sub](bool) { sub->close(); });
    });

    if (!config.static_dir.empty()) server.set_mount_point("/", config.static_dir);

    const std::size_t workers = std::max<std::size_t>(4, config.worker_threads);
    server.new_task_queue = [workers] { return new httplib::ThreadPool(workers); };
  }
};

SyncService::SyncService(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

SyncService::~SyncService() { stop(); }

void SyncService::load_session(ReplaySession session, CommandScript script) {
  auto log = std::make_shared<TickLog>(impl_->config.retention);
  auto runner = std::make_shared<LiveRunner>(std::move(session), std::move(script));
  runner->add_listener([log](const SyncTick& t) { log->append(t); });
  runner->start();
  std::shared_ptr<LiveRunner> old;
  {
    std::lock_guard lk(impl_->session_mu);
    old = std::exchange(impl_->runner, runner);
    impl_->log = log;
  }
  if (old) old->stop();
}

int SyncService::start() {
  impl_->bound_port = impl_->config.port == 0 ? impl_->server.bind_to_any_port(impl_->config.host)
                                              : (impl_->server.bind_to_port(impl_->config.host, impl_->config.port)
                                                     ? impl_->config.port
                                                     : -1);
  if (impl_->bound_port < 0) throw Error(Errc::kInvalidArgument, "cannot bind " + impl_->config.host);
  impl_->server_thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return impl_->bound_port;
}

bool SyncService::listen() {
  impl_->bound_port = impl_->config.port;
  return impl_->server.listen(impl_->config.host, impl_->config.port);
}

void SyncService::stop() {
  if (!impl_) return;
  std::shared_ptr<LiveRunner> r;
  {
    std::lock_guard lk(impl_->session_mu);
    r = impl_->runner;
  }
  if (r) r->stop();  // closes subscriptions so stream handlers return
  impl_->server.stop();
  if (impl_->server_thread.joinable()) impl_->server_thread.join();
}

int SyncService::port() const noexcept { return impl_->bound_port; }
const ServiceConfig& SyncService::config() const noexcept { return impl_->config; }

}  // namespace ndtsync
