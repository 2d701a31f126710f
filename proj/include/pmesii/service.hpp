#pragma once

#include "pmesii/harness.hpp"

#include <json.hpp>

#include <string>

namespace httplib {
class Server;
}

namespace pmesii {

/// JSON error body: {"error", "message", "fields": [{"field", "message"}]}.
nlohmann::json error_body(std::string_view kind, const std::string &message);

/// Register the session endpoints on `server`:
///
///   POST /sessions                              {scenario, mode, seed}
///   GET  /sessions/{id}/state
///   POST /sessions/{id}/phases/{n}/plans        {role, plan}
///   GET  /sessions/{id}/forecast
///   POST /sessions/{id}/assessment/adjustments  {adjustments}
///   POST /sessions/{id}/advance                 {boundary_week?}
///   GET  /sessions/{id}/ledger?kind=
///   POST /sessions/{id}/ledger                  {entry}
///   GET  /sessions/{id}/trace?var=&depth=
///
/// Validation failures answer 400, unknown sessions 404, out-of-turn input 409.
/// Mutations on one session run one at a time; reads share the session lock.
void mount_session_api(httplib::Server &server, SessionStore &store);

/// Blocking; returns false when the address cannot be bound.
bool serve_session_api(SessionStore &store, const std::string &host, int port);

} // namespace pmesii
