#include "pmesii/service.hpp"

#include "pmesii/errors.hpp"

#include <httplib.h>

#include <charconv>
#include <mutex>
#include <shared_mutex>

namespace pmesii {

using nlohmann::json;

json error_body(std::string_view kind, const std::string &message) {
  json fields = json::array();
  const auto colon = message.find(": ");
  if (colon != std::string::npos && colon > 0 &&
      message.substr(0, colon).find(' ') == std::string::npos)
    fields.push_back({{"field", message.substr(0, colon)}, {"message", message.substr(colon + 2)}});
  else
    fields.push_back({{"field", ""}, {"message", message}});
  return {{"error", kind}, {"message", message}, {"fields", fields}};
}

namespace {

constexpr const char *kJson = "application/json; charset=utf-8";

void reply(httplib::Response &res, int status, const json &body) {
  res.status = status;
  res.set_content(body.dump(), kJson);
}

template <typename F> httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request &req, httplib::Response &res) {
    try {
      f(req, res);
    } catch (const NotFoundError &e) {
      reply(res, 404, error_body("not_found", e.what()));
    } catch (const OutOfTurnError &e) {
      reply(res, 409, error_body("out_of_turn", e.what()));
    } catch (const ValidationError &e) {
      reply(res, 400, error_body("validation", e.what()));
    } catch (const json::exception &e) {
      reply(res, 400, error_body("validation", std::string("body: ") + e.what()));
    } catch (const std::exception &e) {
      reply(res, 500, error_body("internal", e.what()));
    }
  };
}

json body_of(const httplib::Request &req) {
  if (req.body.empty())
    return nullptr;
  try {
    return json::parse(req.body);
  } catch (const json::parse_error &e) {
    throw SchemaError(std::string("body: invalid JSON: ") + e.what());
  }
}

int int_param(const std::string &text, const char *name) {
  int value = 0;
  const auto *end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end)
    throw SchemaError(std::string(name) + ": expected an integer, got '" + text + "'");
  return value;
}

} // namespace

void mount_session_api(httplib::Server &server, SessionStore &store) {
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  server.Options(R"(.*)", [](const httplib::Request &, httplib::Response &res) { res.status = 204; });

  server.Get("/health", guarded([](const httplib::Request &, httplib::Response &res) {
    reply(res, 200, {{"status", "ok"}, {"version", version()}});
  }));

  server.Post("/sessions", guarded([&store](const httplib::Request &req, httplib::Response &res) {
    const json body = body_of(req);
    if (!body.is_object())
      throw SchemaError("body: expected a JSON object");
    auto session = store.create(body);
    std::shared_lock lock(session->mutex());
    reply(res, 201, {{"session_id", session->id()}, {"state", session->state()}});
  }));

  server.Get(R"(/sessions/([^/]+)/state)",
             guarded([&store](const httplib::Request &req, httplib::Response &res) {
               auto session = store.get(req.matches[1]);
               std::shared_lock lock(session->mutex());
               reply(res, 200, session->state());
             }));

  server.Get(R"(/sessions/([^/]+)/forecast)",
             guarded([&store](const httplib::Request &req, httplib::Response &res) {
               auto session = store.get(req.matches[1]);
               std::shared_lock lock(session->mutex());
               try {
                 reply(res, 200, session->forecast());
               } catch (const PreconditionError &e) {
                 reply(res, 409, error_body("out_of_turn", e.what()));
               }
             }));

  server.Get(R"(/sessions/([^/]+)/ledger)",
             guarded([&store](const httplib::Request &req, httplib::Response &res) {
               auto session = store.get(req.matches[1]);
               std::optional<LedgerKind> kind;
               if (req.has_param("kind") && !req.get_param_value("kind").empty()) {
                 const auto k = req.get_param_value("kind");
                 try {
                   kind = parse_ledger_kind(k);
                 } catch (const ValidationError &) {
                   throw SchemaError("kind: unknown ledger kind '" + k + "'");
                 }
               }
               std::shared_lock lock(session->mutex());
               reply(res, 200, session->ledger(kind));
             }));

  server.Get(R"(/sessions/([^/]+)/trace)",
             guarded([&store](const httplib::Request &req, httplib::Response &res) {
               auto session = store.get(req.matches[1]);
               if (!req.has_param("var") || req.get_param_value("var").empty())
                 throw SchemaError("var: required");
               const int depth =
                   req.has_param("depth") ? int_param(req.get_param_value("depth"), "depth") : 2;
               std::shared_lock lock(session->mutex());
               try {
                 reply(res, 200, session->trace(req.get_param_value("var"), depth));
               } catch (const UnknownVariableError &e) {
                 throw UnknownVariableError(std::string("var: ") + e.what());
               } catch (const PreconditionError &e) {
                 throw PreconditionError(std::string("depth: ") + e.what());
               }
             }));

  auto mutation = [&store](auto apply) {
    return guarded([&store, apply](const httplib::Request &req, httplib::Response &res) {
      auto session = store.get(req.matches[1]);
      const json body = body_of(req);
      std::unique_lock lock(session->mutex());
      const json response = apply(*session, req, body, store.now());
      store.persist(*session);
      reply(res, 200, response);
    });
  };

  server.Post(R"(/sessions/([^/]+)/phases/(\d+)/plans)",
              mutation([](Session &s, const httplib::Request &req, const json &body, std::int64_t now) {
                return s.submit_plan(int_param(req.matches[2], "phase"), body, now);
              }));
  server.Post(R"(/sessions/([^/]+)/assessment/adjustments)",
              mutation([](Session &s, const httplib::Request &, const json &body, std::int64_t now) {
                return s.adjust(body, now);
              }));
  server.Post(R"(/sessions/([^/]+)/advance)",
              mutation([](Session &s, const httplib::Request &, const json &body, std::int64_t now) {
                return s.advance(body, now);
              }));
  server.Post(R"(/sessions/([^/]+)/ledger)",
              mutation([](Session &s, const httplib::Request &, const json &body, std::int64_t now) {
                return s.record_ledger(body, now);
              }));
}

bool serve_session_api(SessionStore &store, const std::string &host, int port) {
  httplib::Server server;
  mount_session_api(server, store);
  return server.listen(host, port);
}

} // namespace pmesii
