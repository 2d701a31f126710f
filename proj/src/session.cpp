#include "pmesii/harness.hpp"

#include "pmesii/errors.hpp"
#include "pmesii/hash.hpp"
#include "pmesii/scenario_io.hpp"

#include "json_fields.hpp"

#include <cctype>
#include <sstream>

namespace pmesii {

using nlohmann::json;
using namespace detail;

namespace {

json values_json(const Vector &values, const Scenario &scenario) {
  json out = json::object();
  for (Index i = 0; i < values.size(); ++i)
    out[scenario.variables[static_cast<std::size_t>(i)].id] = values[i];
  return out;
}

json assessment_json(const Assessment &a, const Scenario &scenario) {
  json applied = json::array();
  for (const auto &x : a.applied) {
    json j = to_json(x.adjustment);
    j["clamped"] = x.clamped;
    applied.push_back(j);
  }
  return {{"values", to_json(a.values, scenario)}, {"applied", applied}};
}

json progress_json(const ProgressReport &p) {
  json ms = json::array();
  for (const auto &m : p.milestones)
    ms.push_back({{"id", m.id}, {"margin", m.margin}, {"satisfied", m.satisfied}});
  return {{"progress", p.progress}, {"milestones", ms}};
}

json window_json(const WindowRecord &w, const Scenario &scenario) {
  json alts = json::array();
  for (const auto &a : w.alternatives)
    alts.push_back({{"team_id", a.team_id},
                    {"assumption_id", a.assumption_id},
                    {"predicted_cost", a.predicted_cost},
                    {"feasibility", a.feasibility},
                    {"risk", a.risk}});
  return {{"milestone_id", w.milestone_id},
          {"start_month", w.start_month},
          {"target_month", w.target_month},
          {"progress_before", progress_json(w.progress_before)},
          {"progress_after", progress_json(w.progress_after)},
          {"alternatives", alts},
          {"selected", w.selected},
          {"directive", to_json(w.directive, scenario)}};
}

CellRole role_of(const json &j) {
  std::string r = text(j, "role");
  if (!r.empty())
    r[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(r[0])));
  try {
    return parse_role(r);
  } catch (const SchemaError &) {
    throw SchemaError("role: unknown cell role '" + text(j, "role") + "'");
  }
}

std::uint64_t seed_of(const json &j) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<long long>() >= 0))
    throw SchemaError("seed: expected a non-negative integer");
  return j.get<std::uint64_t>();
}

std::string run_digest(const RunLog &log, int week) {
  std::ostringstream out;
  write_run_csv(out, log);
  out << week;
  return sha256_hex(out.str());
}

} // namespace

Session::~Session() = default;

std::unique_ptr<Session> Session::create(const std::string &id, const json &request,
                                         std::int64_t now) {
  expect_object(request, "", {"scenario", "mode", "seed"}, {"options", "nonce"});
  const json &sj = request.at("scenario");
  Scenario scenario;
  if (sj.is_string()) {
    if (sj.get<std::string>() != "demo")
      throw SchemaError("scenario: expected a scenario object or \"demo\"");
    scenario = load_scenario("demo");
  } else if (sj.is_object()) {
    try {
      scenario = validate_scenario(sj);
    } catch (const ValidationError &e) {
      throw SchemaError(std::string("scenario.") + e.what());
    }
  } else {
    throw SchemaError("scenario: expected a scenario object or \"demo\"");
  }
  parse_session_mode(text(request.at("mode"), "mode"));
  json options = request.value("options", json::object());
  json event = {{"type", "create"},
                {"seq", 0},
                {"at", now},
                {"session_id", id},
                {"mode", request.at("mode")},
                {"seed", seed_of(request.at("seed"))},
                {"scenario", to_json(scenario)},
                {"options", options}};
  std::unique_ptr<Session> s(new Session());
  s->init(event);
  s->append(std::move(event));
  s->refresh();
  return s;
}

std::unique_ptr<Session> Session::replay(std::span<const json> events) {
  if (events.empty() || events[0].value("type", "") != "create")
    throw CorruptLogError("event log does not start with a create event");
  std::unique_ptr<Session> s(new Session());
  try {
    s->init(events[0]);
    s->append(events[0]);
    s->refresh();
    for (std::size_t i = 1; i < events.size(); ++i) {
      const json &e = events[i];
      if (e.value("seq", -1) != static_cast<int>(i))
        throw CorruptLogError("event " + std::to_string(i) + " is out of sequence");
      json response = s->execute(e);
      if (e.contains("nonce"))
        s->nonces_[e.at("nonce").dump()] = response;
      s->append(e);
      s->refresh();
    }
  } catch (const CorruptLogError &) {
    throw;
  } catch (const std::exception &e) {
    throw CorruptLogError(std::string("event log does not replay: ") + e.what());
  }
  return s;
}

void Session::init(const json &event) {
  id_ = text(event.at("session_id"), "session_id");
  mode_ = parse_session_mode(text(event.at("mode"), "mode"));
  seed_ = seed_of(event.at("seed"));
  scenario_json_ = event.at("scenario");
  scenario_ = validate_scenario(scenario_json_);
  const json &options = event.at("options");
  expect_object(options, "options", {}, {"replan_months", "mismatch"});
  std::optional<int> period;
  std::optional<double> mismatch;
  if (options.contains("replan_months")) {
    if (mode_ != SessionMode::ClosedLoop && mode_ != SessionMode::OpenLoop)
      throw SchemaError("options.replan_months: only closed_loop and open_loop sessions replan");
    period = static_cast<int>(integer(options.at("replan_months"), "options.replan_months"));
  }
  if (options.contains("mismatch")) {
    if (mode_ == SessionMode::NextState)
      throw SchemaError("options.mismatch: nextstate sessions take their variants from the scenario");
    mismatch = number(options.at("mismatch"), "options.mismatch");
    check_range(*mismatch, 0.0, 1.0, "options.mismatch");
  }

  switch (mode_) {
  case SessionMode::ClosedLoop:
  case SessionMode::OpenLoop: {
    RunSettings settings;
    settings.mode = mode_ == SessionMode::ClosedLoop ? LoopMode::Closed : LoopMode::Open;
    settings.replan_period_months = period;
    settings.mismatch_level = mismatch;
    try {
      loop_ = std::make_unique<RecedingHorizonRun>(scenario_, seed_, settings);
    } catch (const ValidationError &e) {
      throw SchemaError(std::string("options.replan_months: ") + e.what());
    }
    period_months_ = period.value_or(scenario_.control.replan_period_months);
    break;
  }
  case SessionMode::XGame: {
    XGameOptions opts;
    opts.mismatch_level = mismatch;
    xgame_ = std::make_unique<XGameSession>(scenario_, seed_, opts);
    break;
  }
  case SessionMode::NextState:
    planner_ = std::make_unique<NextStatePlanner>(scenario_, seed_);
    break;
  }
}

void Session::append(json event) {
  head_ = chain_hash(head_, event.dump());
  events_.push_back(std::move(event));
}

json Session::mutate(json event, std::int64_t now) {
  std::optional<std::string> nonce;
  if (event.contains("nonce")) {
    if (event.at("nonce").is_null())
      event.erase("nonce");
    else
      nonce = event.at("nonce").dump();
  }
  if (nonce) {
    if (auto it = nonces_.find(*nonce); it != nonces_.end())
      return it->second;
  }
  event["seq"] = events_.size();
  event["at"] = now;
  json response = execute(event);
  append(std::move(event));
  if (nonce)
    nonces_[*nonce] = response;
  refresh();
  return response;
}

json Session::submit_plan(int phase, const json &body, std::int64_t now) {
  expect_object(body, "", {"role", "plan"}, {"nonce"});
  json event = {{"type", "plan"}, {"phase", phase}, {"role", body.at("role")}, {"plan", body.at("plan")}};
  if (body.contains("nonce"))
    event["nonce"] = body.at("nonce");
  return mutate(std::move(event), now);
}

json Session::adjust(const json &body, std::int64_t now) {
  expect_object(body, "", {"adjustments"}, {"nonce"});
  array(body.at("adjustments"), "adjustments");
  json event = {{"type", "adjust"}, {"adjustments", body.at("adjustments")}};
  if (body.contains("nonce"))
    event["nonce"] = body.at("nonce");
  return mutate(std::move(event), now);
}

json Session::advance(const json &body, std::int64_t now) {
  const json b = body.is_null() ? json::object() : body;
  expect_object(b, "", {}, {"boundary_week", "nonce"});
  json event = {{"type", "advance"}};
  if (b.contains("boundary_week") && !b.at("boundary_week").is_null())
    event["boundary_week"] = integer(b.at("boundary_week"), "boundary_week");
  if (b.contains("nonce"))
    event["nonce"] = b.at("nonce");
  return mutate(std::move(event), now);
}

json Session::record_ledger(const json &body, std::int64_t now) {
  json event = {{"type", "ledger"}};
  if (body.is_object() && body.contains("entry")) {
    expect_object(body, "", {"entry"}, {"nonce"});
    event["entry"] = body.at("entry");
    if (body.contains("nonce"))
      event["nonce"] = body.at("nonce");
  } else {
    json entry = body;
    if (entry.is_object() && entry.contains("nonce")) {
      event["nonce"] = entry.at("nonce");
      entry.erase("nonce");
    }
    event["entry"] = entry;
  }
  return mutate(std::move(event), now);
}

json Session::execute(const json &event) {
  const std::string type = text(event.at("type"), "type");
  auto require_xgame = [&](const char *what) -> XGameSession & {
    if (!xgame_)
      throw OutOfTurnError(std::string(to_string(mode_)) + " sessions accept no " + what);
    return *xgame_;
  };

  if (type == "plan") {
    auto &game = require_xgame("cell plans");
    const int p = static_cast<int>(integer(event.at("phase"), "phase"));
    const CellRole role = role_of(event.at("role"));
    const json &plan = event.at("plan");
    try {
      switch (role) {
      case CellRole::Blue:
        game.submit_blue(p, plan_from_json(plan, scenario_));
        break;
      case CellRole::Red:
        game.submit_red(p, plan_from_json(plan, scenario_));
        break;
      case CellRole::Green:
        game.submit_green(p, green_from_json(plan, scenario_));
        break;
      default:
        throw SchemaError("role: the " + std::string(to_string(role)) + " cell submits no plan");
      }
    } catch (const SchemaError &e) {
      const std::string msg = e.what();
      if (msg.rfind("role:", 0) == 0 || msg.rfind("plan", 0) == 0)
        throw;
      if (msg.rfind("policy", 0) == 0)
        throw SchemaError("plan" + msg.substr(6));
      throw SchemaError("plan: " + msg);
    }
    json pending = json::array();
    for (auto r : game.pending_roles())
      pending.push_back(to_string(r));
    return {{"accepted", true}, {"phase", p}, {"role", to_string(role)}, {"pending_roles", pending}};
  }

  if (type == "adjust") {
    auto &game = require_xgame("assessment adjustments");
    std::vector<WhiteAdjustment> adjs;
    const json &list = array(event.at("adjustments"), "adjustments");
    for (std::size_t i = 0; i < list.size(); ++i) {
      try {
        adjs.push_back(adjustment_from_json(list[i]));
      } catch (const ValidationError &e) {
        throw SchemaError(index_path("adjustments", i) + ": " + e.what());
      }
    }
    return assessment_json(game.adjust(adjs), scenario_);
  }

  if (type == "advance") {
    std::optional<int> boundary;
    if (event.contains("boundary_week"))
      boundary = static_cast<int>(integer(event.at("boundary_week"), "boundary_week"));
    if (xgame_) {
      if (xgame_->finished())
        throw OutOfTurnError("the game has ended");
      return to_json(xgame_->advance(boundary), scenario_);
    }
    if (loop_) {
      if (loop_log_)
        throw OutOfTurnError("the run has finished");
      const int end = loop_->end_week();
      const int target =
          boundary.value_or(std::min(end, loop_->week() + period_months_ * kWeeksPerMonth));
      if (target <= loop_->week() || target > end)
        throw RangeError("boundary_week: " + std::to_string(target) + " is outside (" +
                         std::to_string(loop_->week()) + ", " + std::to_string(end) + "]");
      if (target == end)
        loop_log_ = loop_->finish();
      else
        loop_->run_until(target);
      const RunLog &log = loop_log_ ? *loop_log_ : loop_->log();
      json out = {{"week", loop_->week()},
                  {"episodes", log.episodes.size()},
                  {"finished", loop_log_.has_value()}};
      if (loop_log_)
        out["realized_cost"] = loop_log_->realized_cost;
      return out;
    }
    if (boundary)
      throw SchemaError("boundary_week: nextstate sessions advance one milestone window at a time");
    if (planner_->finished())
      throw OutOfTurnError("every milestone window has been executed");
    json out = window_json(planner_->step(), scenario_);
    if (planner_->finished()) {
      planner_log_ = planner_->finish().log;
      out["realized_cost"] = planner_log_->realized_cost;
    }
    return out;
  }

  if (type == "ledger") {
    auto &game = require_xgame("ledger entries");
    LedgerEntry entry;
    try {
      entry = ledger_entry_from_json(event.at("entry"));
    } catch (const ValidationError &e) {
      throw SchemaError(std::string("entry.") + e.what());
    }
    const std::size_t position = game.record(std::move(entry));
    return {{"position", position}, {"head", game.ledger().head()}};
  }

  throw SchemaError("type: unknown event type '" + type + "'");
}

const ModelParams &Session::model() const {
  if (xgame_)
    return xgame_->model();
  if (loop_)
    return loop_->model();
  return planner_->run().model();
}

int Session::week() const {
  if (xgame_)
    return xgame_->week();
  if (loop_)
    return loop_->week();
  return planner_->week();
}

int Session::phase() const {
  if (xgame_)
    return xgame_->phase();
  if (loop_)
    return static_cast<int>((loop_log_ ? *loop_log_ : loop_->log()).episodes.size());
  return static_cast<int>(planner_->windows().size());
}

bool Session::finished() const {
  if (xgame_)
    return xgame_->finished();
  if (loop_)
    return loop_log_.has_value();
  return planner_log_.has_value();
}

void Session::refresh() {
  json pending = json::array();
  json assessed;
  forecast_ = nullptr;
  if (xgame_) {
    for (auto r : xgame_->pending_roles())
      pending.push_back(to_string(r));
    const auto &est = xgame_->assessed_state();
    assessed = {{"week", est.week}, {"values", values_json(est.values, scenario_)}};
    if (!xgame_->finished() && pending.empty())
      forecast_ = to_json(xgame_->forecast(), scenario_);
  } else if (loop_) {
    if (loop_log_) {
      const auto &last = loop_log_->weeks.back();
      assessed = {{"week", last.week}, {"values", values_json(last.estimate, scenario_)}};
    } else {
      const auto &est = loop_->estimate();
      assessed = {{"week", est.week}, {"values", values_json(est.values, scenario_)}};
    }
    forecast_ = to_json(loop_->forecast(), scenario_);
  } else {
    if (planner_log_) {
      const auto &last = planner_log_->weeks.back();
      assessed = {{"week", last.week}, {"values", values_json(last.estimate, scenario_)}};
    } else {
      const auto &est = planner_->estimate();
      assessed = {{"week", est.week}, {"values", values_json(est.values, scenario_)}};
    }
    forecast_ = to_json(planner_->run().forecast(), scenario_);
  }
  state_ = {{"session_id", id_},
            {"mode", to_string(mode_)},
            {"seed", seed_},
            {"week", week()},
            {"phase", phase()},
            {"finished", finished()},
            {"pending_roles", pending},
            {"assessed_state", assessed},
            {"event_count", events_.size()},
            {"head", head_},
            {"created_at", events_.front().at("at")},
            {"updated_at", events_.back().at("at")}};
  if (xgame_) {
    state_["game_end"] = xgame_->game_end();
    state_["recalibration_pending"] = xgame_->recalibration_pending();
  } else if (loop_) {
    state_["end_week"] = loop_->end_week();
  } else {
    state_["windows"] = planner_->windows().size();
    if (!planner_log_)
      state_["progress"] = progress_json(planner_->progress());
  }
}

const json &Session::forecast() const {
  if (forecast_.is_null()) {
    if (xgame_ && xgame_->finished())
      throw PreconditionError("forecast: the game has ended");
    std::string missing;
    for (const auto &r : state_.at("pending_roles"))
      missing += (missing.empty() ? "" : ", ") + r.get<std::string>();
    throw PreconditionError("forecast: waiting for inputs from " + missing);
  }
  return forecast_;
}

json Session::ledger(std::optional<LedgerKind> kind) const {
  json entries = json::array();
  std::string head = kGenesisHash;
  if (xgame_) {
    const auto list = kind ? xgame_->ledger().by_kind(*kind) : xgame_->ledger().entries();
    for (const auto &e : list)
      entries.push_back(to_json(e));
    head = xgame_->ledger().head();
  }
  return {{"entries", entries}, {"head", head}};
}

json Session::trace(std::string_view variable, int depth) const {
  return to_json(trace_dependencies(model(), scenario_, variable, depth), scenario_);
}

std::string Session::digest() const {
  if (xgame_)
    return xgame_->digest();
  if (loop_)
    return run_digest(loop_log_ ? *loop_log_ : loop_->log(), loop_->week());
  std::string text;
  for (const auto &d : planner_->directives().directives())
    text += d.hash;
  return sha256_hex(text + run_digest(planner_log_ ? *planner_log_ : planner_->run().log(),
                                      planner_->week()));
}

SessionRecord Session::record() const {
  SessionRecord r;
  r.id = id_;
  r.scenario = scenario_json_;
  r.mode = mode_;
  r.seed = seed_;
  r.week = week();
  r.phase = phase();
  for (const auto &p : state_.at("pending_roles"))
    r.pending.push_back(p.get<std::string>());
  r.events = events_;
  r.created_at = events_.front().at("at").get<std::int64_t>();
  r.updated_at = events_.back().at("at").get<std::int64_t>();
  r.head = head_;
  r.digest = digest();
  return r;
}

} // namespace pmesii
