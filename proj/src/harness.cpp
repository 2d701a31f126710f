#include "pmesii/harness.hpp"

#include "pmesii/errors.hpp"
#include "pmesii/hash.hpp"
#include "pmesii/scenario_io.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <ostream>
#include <random>
#include <sstream>

#ifndef PMESII_VERSION
#define PMESII_VERSION "0.0.0"
#endif

namespace pmesii {

using nlohmann::json;

std::string_view version() { return PMESII_VERSION; }

std::string_view to_string(SweepDimension dimension) {
  switch (dimension) {
  case SweepDimension::ReplanPeriod:
    return "replan_period";
  case SweepDimension::Mismatch:
    return "mismatch";
  case SweepDimension::Noise:
    return "noise";
  }
  return "?";
}

SweepDimension parse_sweep_dimension(std::string_view text) {
  for (auto d : {SweepDimension::ReplanPeriod, SweepDimension::Mismatch, SweepDimension::Noise})
    if (to_string(d) == text)
      return d;
  throw SchemaError("dimension: unknown sweep dimension '" + std::string(text) + "'");
}

void validate(const ExperimentSpec &spec) {
  if (spec.values.empty())
    throw PreconditionError("values: sweep values must not be empty");
  if (spec.seeds < 1)
    throw PreconditionError("seeds: at least one seed per value is required");
  for (double v : spec.values) {
    const std::string where = "values: " + format_number(v);
    if (!std::isfinite(v))
      throw RangeError(where + " is not finite");
    switch (spec.dimension) {
    case SweepDimension::ReplanPeriod:
      if (v < 1.0 || v != std::floor(v) || v > spec.scenario.control.horizon_months)
        throw RangeError(where + " is not a whole number of months within the horizon");
      break;
    case SweepDimension::Mismatch:
      if (v < 0.0 || v > 1.0)
        throw RangeError(where + " is outside [0, 1]");
      break;
    case SweepDimension::Noise:
      if (v < 0.0)
        throw RangeError(where + " is negative");
      break;
    }
  }
}

namespace {

RunSettings settings_for(const ExperimentSpec &spec, double value) {
  RunSettings s = spec.settings;
  switch (spec.dimension) {
  case SweepDimension::ReplanPeriod:
    s.replan_period_months = static_cast<int>(value);
    break;
  case SweepDimension::Mismatch:
    s.mismatch_level = value;
    break;
  case SweepDimension::Noise:
    s.observation_noise_scale = value;
    break;
  }
  return s;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n == 0)
    return 0.0;
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string csv_quote(const std::string &text) {
  std::string out = "\"";
  for (char c : text) {
    if (c == '"')
      out += '"';
    out += (c == '\n' || c == '\r') ? ' ' : c;
  }
  return out + "\"";
}

} // namespace

SweepSummary summarize(double value, std::span<const SweepRow> rows) {
  SweepSummary s;
  s.value = value;
  std::vector<double> open, closed, diff;
  int wins = 0;
  for (const auto &r : rows) {
    open.push_back(r.open_cost);
    closed.push_back(r.closed_cost);
    diff.push_back(r.closed_minus_open());
    wins += r.closed_minus_open() < 0.0;
  }
  s.median_open = median(open);
  s.median_closed = median(closed);
  s.median_difference = median(diff);
  s.win_rate = rows.empty() ? 0.0 : static_cast<double>(wins) / static_cast<double>(rows.size());
  return s;
}

void write_sweep_header(std::ostream &out) {
  out << "sweep_value,seed,open_cost,closed_cost,closed_minus_open,win_rate\n";
}

void write_sweep_row(std::ostream &out, const SweepRow &row) {
  out << format_number(row.value) << ',' << row.seed << ',' << format_number(row.open_cost) << ','
      << format_number(row.closed_cost) << ',' << format_number(row.closed_minus_open()) << ",\n";
}

void write_sweep_summary(std::ostream &out, const SweepSummary &s) {
  out << format_number(s.value) << ",summary," << format_number(s.median_open) << ','
      << format_number(s.median_closed) << ',' << format_number(s.median_difference) << ','
      << format_number(s.win_rate) << '\n';
}

SweepResult experiment_sweep(const ExperimentSpec &spec, std::ostream *csv) {
  validate(spec);
  std::vector<std::ostream *> sinks;
  std::ofstream file;
  if (spec.output) {
    if (spec.output->has_parent_path())
      std::filesystem::create_directories(spec.output->parent_path());
    file.open(*spec.output, std::ios::binary | std::ios::trunc);
    if (!file)
      throw Error("cannot write " + spec.output->string());
    sinks.push_back(&file);
  }
  if (csv)
    sinks.push_back(csv);
  for (auto *s : sinks)
    write_sweep_header(*s);

  SweepResult result;
  // Open loop never replans, so its cost does not depend on the period.
  std::map<std::uint64_t, double> open_by_seed;
  try {
    for (double value : spec.values) {
      const RunSettings settings = settings_for(spec, value);
      const std::size_t first = result.rows.size();
      for (int i = 0; i < spec.seeds; ++i) {
        SweepRow row;
        row.value = value;
        row.seed = spec.first_seed + static_cast<std::uint64_t>(i);
        if (spec.dimension == SweepDimension::ReplanPeriod && open_by_seed.count(row.seed)) {
          row.open_cost = open_by_seed[row.seed];
        } else {
          row.open_cost = run_open_loop(spec.scenario, row.seed, settings).realized_cost;
          open_by_seed[row.seed] = row.open_cost;
        }
        row.closed_cost = run_closed_loop(spec.scenario, row.seed, settings).realized_cost;
        result.rows.push_back(row);
        for (auto *s : sinks)
          write_sweep_row(*s, row);
      }
      result.summaries.push_back(summarize(
          value, std::span(result.rows).subspan(first, result.rows.size() - first)));
      for (auto *s : sinks) {
        write_sweep_summary(*s, result.summaries.back());
        s->flush();
      }
      if (spec.dimension != SweepDimension::ReplanPeriod)
        open_by_seed.clear();
    }
  } catch (const std::exception &e) {
    for (auto *s : sinks) {
      *s << "FAILED," << csv_quote(e.what()) << ",,,,\n";
      s->flush();
    }
    throw;
  }
  return result;
}

// ---------------------------------------------------------------------------

std::string_view to_string(SessionMode mode) {
  switch (mode) {
  case SessionMode::ClosedLoop:
    return "closed_loop";
  case SessionMode::OpenLoop:
    return "open_loop";
  case SessionMode::XGame:
    return "xgame";
  case SessionMode::NextState:
    return "nextstate";
  }
  return "?";
}

SessionMode parse_session_mode(std::string_view text) {
  for (auto m : {SessionMode::ClosedLoop, SessionMode::OpenLoop, SessionMode::XGame,
                 SessionMode::NextState})
    if (to_string(m) == text)
      return m;
  throw SchemaError("mode: expected closed_loop, open_loop, xgame or nextstate, got '" +
                    std::string(text) + "'");
}

std::int64_t system_clock_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

json to_json(const SessionRecord &r) {
  return {{"session_id", r.id},
          {"mode", to_string(r.mode)},
          {"seed", r.seed},
          {"week", r.week},
          {"phase", r.phase},
          {"pending_roles", r.pending},
          {"event_count", r.events.size()},
          {"created_at", r.created_at},
          {"updated_at", r.updated_at},
          {"head", r.head},
          {"digest", r.digest}};
}

std::string chain_hash(const std::string &previous, const std::string &event_text) {
  return sha256_hex(previous + event_text);
}

// ---------------------------------------------------------------------------
// Event log

void append_event_log(const std::filesystem::path &path, std::string previous_head,
                      std::span<const json> events) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out)
    throw Error("cannot append to " + path.string());
  for (const auto &e : events) {
    const std::string text = e.dump();
    previous_head = chain_hash(previous_head, text);
    out << text.size() << ' ' << previous_head << '\n' << text << '\n';
  }
  out.flush();
  if (!out)
    throw Error("write failed: " + path.string());
}

std::vector<json> read_event_log(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw NotFoundError("no event log at " + path.string());
  std::vector<json> events;
  std::string head = kGenesisHash;
  std::string header;
  while (std::getline(in, header)) {
    const std::string where = path.string() + " record " + std::to_string(events.size());
    std::istringstream fields(header);
    std::size_t length = 0;
    std::string hash;
    if (!(fields >> length >> hash) || hash.size() != 64)
      throw CorruptLogError(where + ": malformed header");
    std::string text(length, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(length)) || in.get() != '\n')
      throw CorruptLogError(where + ": truncated");
    head = chain_hash(head, text);
    if (head != hash)
      throw CorruptLogError(where + ": hash chain broken");
    try {
      events.push_back(json::parse(text));
    } catch (const json::parse_error &e) {
      throw CorruptLogError(where + ": " + e.what());
    }
  }
  if (events.empty())
    throw CorruptLogError(path.string() + ": empty event log");
  return events;
}

// ---------------------------------------------------------------------------
// Store

SessionStore::SessionStore(std::filesystem::path root, Clock clock)
    : root_(std::move(root)), clock_(std::move(clock)) {
  std::filesystem::create_directories(root_);
}

std::string SessionStore::fresh_id() {
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  for (;;) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng()));
    std::string id(buf);
    if (!sessions_.count(id) && !std::filesystem::exists(root_ / id))
      return id;
  }
}

std::shared_ptr<Session> SessionStore::create(const json &request) {
  std::string id;
  {
    std::lock_guard lock(mutex_);
    id = fresh_id();
    std::filesystem::create_directories(root_ / id);
  }
  std::shared_ptr<Session> session;
  try {
    session = Session::create(id, request, clock_());
  } catch (...) {
    std::filesystem::remove_all(root_ / id);
    throw;
  }
  {
    std::unique_lock lock(session->mutex());
    persist(*session);
  }
  std::lock_guard lock(mutex_);
  sessions_[id] = session;
  return session;
}

std::shared_ptr<Session> SessionStore::get(const std::string &id) {
  std::lock_guard lock(mutex_);
  if (auto it = sessions_.find(id); it != sessions_.end())
    return it->second;
  const auto log = root_ / id / "events.log";
  if (id.empty() || id.find('/') != std::string::npos || id.find("..") != std::string::npos ||
      !std::filesystem::exists(log))
    throw NotFoundError("unknown session '" + id + "'");
  const auto events = read_event_log(log);
  std::shared_ptr<Session> session = Session::replay(events);
  sessions_[id] = session;
  persisted_[id] = events.size();
  return session;
}

void SessionStore::persist(Session &session) {
  const auto dir = root_ / session.id();
  std::size_t done = 0;
  {
    std::lock_guard lock(mutex_);
    done = persisted_[session.id()];
  }
  const auto &events = session.events();
  if (done < events.size()) {
    std::string previous = kGenesisHash;
    for (std::size_t i = 0; i < done; ++i)
      previous = chain_hash(previous, events[i].dump());
    append_event_log(dir / "events.log", previous,
                     std::span(events).subspan(done, events.size() - done));
  }
  const SessionRecord record = session.record();
  json manifest = to_json(record);
  manifest["scenario_hash"] = scenario_hash(session.scenario());
  manifest["version"] = version();
  const auto tmp = dir / "manifest.json.tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << manifest.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, dir / "manifest.json");
  std::lock_guard lock(mutex_);
  persisted_[session.id()] = events.size();
}

SessionRecord SessionStore::load(const std::string &id) const {
  const auto dir = root_ / id;
  if (id.empty() || !std::filesystem::exists(dir / "events.log"))
    throw NotFoundError("unknown session '" + id + "'");
  const auto events = read_event_log(dir / "events.log");
  const auto session = Session::replay(events);
  SessionRecord record = session->record();
  std::ifstream in(dir / "manifest.json");
  if (in) {
    json manifest;
    try {
      manifest = json::parse(in);
    } catch (const json::parse_error &e) {
      throw CorruptLogError(id + ": manifest: " + e.what());
    }
    if (manifest.value("head", std::string()) != record.head)
      throw CorruptLogError(id + ": manifest head does not match the event log");
  }
  return record;
}

} // namespace pmesii
