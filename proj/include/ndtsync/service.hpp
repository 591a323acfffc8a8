#pragma once

#include <chrono>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "ndtsync/synchronizer.hpp"

namespace ndtsync {

struct ServiceConfig {
  std::string host = "0.0.0.0";
  int port = 8080;
  /// Ticks kept for GET /api/log; oldest evicted first.
  std::size_t retention = 10000;
  std::chrono::milliseconds heartbeat{15000};
  /// Per-subscriber stream buffer; a slow consumer loses the oldest ticks.
  std::size_t stream_buffer = 256;
  /// Origins echoed in Access-Control-Allow-Origin; "*" allows any.
  std::vector<std::string> cors_allowlist{"*"};
  double gain_max = 10.0;
  std::chrono::milliseconds ack_timeout{10000};
  /// Optional directory served at / (the browser console build).
  std::string static_dir;
  std::size_t worker_threads = 32;
};

/// HTTP front end for one live replay session.
///
///   GET  /api/state           snapshot
///   GET  /api/stream          text/event-stream, one `data:` event per tick
///   POST /api/pid             {enabled?, kp?, ki?, kd?}
///   POST /api/replay          {action: start|pause|reset, speed?}
///   GET  /api/log?from=<step> retained ticks with step >= from
///
/// Mutations go through the runner's command queue and respond once the
/// command has been applied between two ticks.
class SyncService {
 public:
  explicit SyncService(ServiceConfig config = {});
  ~SyncService();

  SyncService(const SyncService&) = delete;
  SyncService& operator=(const SyncService&) = delete;

  /// Installs and starts a session, replacing any previous one.
  void load_session(ReplaySession session, CommandScript script = {});

  /// Binds (port 0 picks a free port) and serves on a background thread.
  /// Returns the bound port.
  int start();
  /// Binds and serves on the calling thread until stop().
  bool listen();
  void stop();

  int port() const noexcept;
  const ServiceConfig& config() const noexcept;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace ndtsync
