#pragma once

#include "pmesii/controller.hpp"
#include "pmesii/domain.hpp"
#include "pmesii/nextstate.hpp"
#include "pmesii/xgame.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

namespace pmesii {

std::string_view version();

// ---------------------------------------------------------------------------
// Experiment sweeps

enum class SweepDimension { ReplanPeriod, Mismatch, Noise };

std::string_view to_string(SweepDimension dimension);
/// "replan_period", "mismatch" or "noise". Throws SchemaError.
SweepDimension parse_sweep_dimension(std::string_view text);

struct ExperimentSpec {
  Scenario scenario;
  SweepDimension dimension = SweepDimension::ReplanPeriod;
  std::vector<double> values;
  int seeds = 1;
  std::uint64_t first_seed = 1;
  std::optional<std::filesystem::path> output;
  /// Base settings; the swept field is overwritten per value.
  RunSettings settings;
};

/// Throws PreconditionError for an empty value list or seeds < 1, RangeError
/// for values the dimension cannot take.
void validate(const ExperimentSpec &spec);

struct SweepRow {
  double value = 0.0;
  std::uint64_t seed = 0;
  double open_cost = 0.0;
  double closed_cost = 0.0;
  double closed_minus_open() const { return closed_cost - open_cost; }
};

struct SweepSummary {
  double value = 0.0;
  double median_open = 0.0;
  double median_closed = 0.0;
  double median_difference = 0.0;
  /// Fraction of seeds with closed_minus_open < 0.
  double win_rate = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<SweepSummary> summaries;
};

SweepSummary summarize(double value, std::span<const SweepRow> rows);

/// Paired open/closed runs for every value x seed. Rows stream to `csv` as
/// they complete (and to spec.output when set); on failure a FAILED row is
/// written after the partial results and the error propagates.
///
/// CSV: sweep_value,seed,open_cost,closed_cost,closed_minus_open,win_rate
/// Data rows leave win_rate empty; each value closes with a row whose seed
/// column is "summary" holding medians and the win rate.
SweepResult experiment_sweep(const ExperimentSpec &spec, std::ostream *csv = nullptr);

void write_sweep_header(std::ostream &out);
void write_sweep_row(std::ostream &out, const SweepRow &row);
void write_sweep_summary(std::ostream &out, const SweepSummary &summary);

// ---------------------------------------------------------------------------
// Sessions

enum class SessionMode { ClosedLoop, OpenLoop, XGame, NextState };

std::string_view to_string(SessionMode mode);
SessionMode parse_session_mode(std::string_view text);

using Clock = std::function<std::int64_t()>; // milliseconds since epoch

std::int64_t system_clock_ms();

struct SessionRecord {
  std::string id;
  nlohmann::json scenario;
  SessionMode mode = SessionMode::XGame;
  std::uint64_t seed = 0;
  int week = 0;
  int phase = 0;
  std::vector<std::string> pending;
  std::vector<nlohmann::json> events;
  std::int64_t created_at = 0;
  std::int64_t updated_at = 0;
  /// Head of the event hash chain.
  std::string head;
  /// Digest of the engine state the events produced.
  std::string digest;

  bool operator==(const SessionRecord &) const = default;
};

nlohmann::json to_json(const SessionRecord &record);

/// Link of the rolling event hash: sha256(previous + event text).
std::string chain_hash(const std::string &previous, const std::string &event_text);
inline const std::string kGenesisHash(64, '0');

/// One engine instance behind the session API. Every accepted mutation is
/// logged as a request event; replaying the events through the same entry
/// points rebuilds the session. Responses to requests carrying a nonce are
/// remembered, so a retried request returns the first response unchanged.
///
/// Not thread-safe; callers hold mutex() (shared for reads).
class Session {
public:
  /// Throws ValidationError for a malformed request:
  /// {scenario: object | "demo", mode, seed, options?: {replan_months, mismatch}}.
  static std::unique_ptr<Session> create(const std::string &id, const nlohmann::json &request,
                                         std::int64_t now);
  /// Rebuild from a full event log (first event is the create event).
  static std::unique_ptr<Session> replay(std::span<const nlohmann::json> events);

  ~Session();
  Session(const Session &) = delete;
  Session &operator=(const Session &) = delete;

  const std::string &id() const { return id_; }
  SessionMode mode() const { return mode_; }
  const Scenario &scenario() const { return scenario_; }
  std::shared_mutex &mutex() const { return mutex_; }

  // Reads: pure, computed from views refreshed after every mutation.
  const nlohmann::json &state() const { return state_; }
  /// Throws PreconditionError while no forecast exists (X-Game inputs pending).
  const nlohmann::json &forecast() const;
  nlohmann::json ledger(std::optional<LedgerKind> kind) const;
  nlohmann::json trace(std::string_view variable, int depth) const;
  SessionRecord record() const;
  const std::vector<nlohmann::json> &events() const { return events_; }
  const std::string &head() const { return head_; }
  std::string digest() const;

  // Mutations. Each returns the response body.
  nlohmann::json submit_plan(int phase, const nlohmann::json &body, std::int64_t now);
  nlohmann::json adjust(const nlohmann::json &body, std::int64_t now);
  nlohmann::json advance(const nlohmann::json &body, std::int64_t now);
  nlohmann::json record_ledger(const nlohmann::json &body, std::int64_t now);

  XGameSession *xgame() { return xgame_.get(); }
  const XGameSession *xgame() const { return xgame_.get(); }

private:
  Session() = default;
  void init(const nlohmann::json &create_event);
  nlohmann::json execute(const nlohmann::json &event);
  nlohmann::json mutate(nlohmann::json event, std::int64_t now);
  void append(nlohmann::json event);
  void refresh();
  const ModelParams &model() const;
  int week() const;
  int phase() const;
  bool finished() const;

  std::string id_;
  SessionMode mode_ = SessionMode::XGame;
  std::uint64_t seed_ = 0;
  Scenario scenario_;
  nlohmann::json scenario_json_;
  std::unique_ptr<XGameSession> xgame_;
  std::unique_ptr<RecedingHorizonRun> loop_;
  std::optional<RunLog> loop_log_;
  std::unique_ptr<NextStatePlanner> planner_;
  std::optional<RunLog> planner_log_;
  int period_months_ = 3;

  std::vector<nlohmann::json> events_;
  std::string head_ = kGenesisHash;
  std::map<std::string, nlohmann::json> nonces_;
  nlohmann::json state_;
  nlohmann::json forecast_;
  mutable std::shared_mutex mutex_;
};

/// Event log file: per event a header line "<byte length> <chain hash>"
/// followed by the event JSON and a newline.
void append_event_log(const std::filesystem::path &path, std::string previous_head,
                      std::span<const nlohmann::json> events);
/// Throws CorruptLogError on truncation, malformed records or a chain break.
std::vector<nlohmann::json> read_event_log(const std::filesystem::path &path);

/// Sessions persisted as state/{id}/events.log plus state/{id}/manifest.json.
class SessionStore {
public:
  explicit SessionStore(std::filesystem::path root, Clock clock = system_clock_ms);

  const std::filesystem::path &root() const { return root_; }
  std::int64_t now() const { return clock_(); }

  std::shared_ptr<Session> create(const nlohmann::json &request);
  /// Live session, loaded from disk on first use. Throws NotFoundError.
  std::shared_ptr<Session> get(const std::string &id);
  /// Append the session's unpersisted events and rewrite its manifest.
  void persist(Session &session);
  /// Replay the stored log into a fresh record. Throws NotFoundError, CorruptLogError.
  SessionRecord load(const std::string &id) const;

private:
  std::string fresh_id();

  std::filesystem::path root_;
  Clock clock_;
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::map<std::string, std::size_t> persisted_;
};

} // namespace pmesii
