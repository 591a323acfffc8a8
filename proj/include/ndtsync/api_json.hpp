#pragma once

#include <json.hpp>

#include "ndtsync/synchronizer.hpp"

namespace ndtsync {

/// Wire schema shared by the HTTP API, the stream and the tick log.
nlohmann::json to_json(const SyncTick& tick);
nlohmann::json to_json(const SessionMetrics& metrics);
nlohmann::json to_json(const SessionSnapshot& snapshot);

SyncTick tick_from_json(const nlohmann::json& j);
SessionSnapshot snapshot_from_json(const nlohmann::json& j);

SessionStatus parse_status(std::string_view name);

}  // namespace ndtsync
