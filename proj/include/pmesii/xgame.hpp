#pragma once

#include "pmesii/controller.hpp"
#include "pmesii/domain.hpp"
#include "pmesii/model.hpp"
#include "pmesii/observation.hpp"

#include <json.hpp>

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pmesii {

enum class CellRole { Blue, Red, Green, White, ModelingTeam };

std::string_view to_string(CellRole role);
CellRole parse_role(std::string_view text);

/// Bounded per-week drift modifiers on population-attitude variables.
struct GreenPolicy {
  struct Modifier {
    int variable = 0;
    double delta = 0.0; // index/week
    bool operator==(const Modifier &) const = default;
  };
  std::vector<Modifier> modifiers;

  Vector drift(Index n) const;
  bool operator==(const GreenPolicy &) const = default;
};

struct CellPlans {
  ActionPlan blue;
  ActionPlan red;
  GreenPolicy green;
};

struct WhiteAdjustment {
  enum class Mode { Replace, Delta };
  std::string variable;
  int first_week = 0;
  int last_week = 0; // inclusive
  Mode mode = Mode::Replace;
  double value = 0.0;
  std::string rationale;
  bool operator==(const WhiteAdjustment &) const = default;
};

struct AppliedAdjustment {
  WhiteAdjustment adjustment;
  bool clamped = false; // some entry saturated at 0 or 1
  bool operator==(const AppliedAdjustment &) const = default;
};

struct Assessment {
  Trajectory values;
  std::vector<AppliedAdjustment> applied;
};

/// Apply adjustments in order to a copy of `forecast`. Deltas saturate into
/// [0,1] and are flagged; replacement values outside [0,1] or weeks outside
/// the forecast throw RangeError. Unknown variables throw UnknownVariableError.
Assessment white_assess(const Trajectory &forecast, std::span<const WhiteAdjustment> adjustments,
                        const Scenario &scenario);

enum class BoundaryReason { Crisis, Threshold, MaxLength, GameEnd, Override };

std::string_view to_string(BoundaryReason reason);

struct BoundaryPolicy {
  double threshold = 0.2;
  int max_phase_weeks = 104;
  int game_end = 520;
  std::vector<int> crisis_weeks;
  Vector weights; // variables with positive weight are watched
};

struct Boundary {
  int week = 0;
  BoundaryReason reason = BoundaryReason::GameEnd;
  bool operator==(const Boundary &) const = default;
};

/// Earliest week after `from_week` at which a crisis lands, a watched variable
/// has moved by at least the threshold, or the phase cap elapses; the game end
/// caps all. Ties resolve crisis, threshold, cap, game end.
Boundary detect_phase_boundary(const Trajectory &assessment, int from_week,
                               const BoundaryPolicy &policy);

enum class LedgerKind {
  DetailAccepted,
  PersuadedByTrace,
  NovelEffect,
  AssumptionSurfaced,
  Counterposition
};

std::string_view to_string(LedgerKind kind);
LedgerKind parse_ledger_kind(std::string_view text);

struct LedgerEntry {
  LedgerKind kind = LedgerKind::DetailAccepted;
  std::vector<std::string> variables;
  std::string rationale;
  int phase = 0;
  std::optional<int> adjustment; // index into the phase's applied adjustments
  bool operator==(const LedgerEntry &) const = default;
};

/// Append-only reconciliation ledger with a SHA-256 hash chain.
class Ledger {
public:
  std::size_t append(LedgerEntry entry);
  const std::vector<LedgerEntry> &entries() const { return entries_; }
  std::vector<LedgerEntry> by_kind(LedgerKind kind) const;
  std::vector<LedgerEntry> by_phase(int phase) const;
  std::size_t count(LedgerKind kind) const;
  /// Chain head; the all-zero digest for an empty ledger.
  const std::string &head() const;
  /// Recompute the chain from the entries.
  bool verify() const;

private:
  std::vector<LedgerEntry> entries_;
  std::vector<std::string> chain_;
};

nlohmann::json to_json(const LedgerEntry &entry);
LedgerEntry ledger_entry_from_json(const nlohmann::json &document);
std::string ledger_entry_digest(const std::string &previous, const LedgerEntry &entry);

struct DependencyNode {
  int variable = 0;
  double coupling = 0.0; // parent row's entry for this variable (0 at the root)
  std::vector<DependencyNode> children;
};

/// Breadth-first expansion of the variables each row depends on, to `depth`
/// levels. A variable appears at most once in the tree.
/// Throws UnknownVariableError for an out-of-range root, PreconditionError for depth < 1.
DependencyNode trace_dependencies(const Matrix &coupling, int variable, int depth);
DependencyNode trace_dependencies(const ModelParams &model, const Scenario &scenario,
                                  std::string_view variable, int depth);

struct NovelEffect {
  int variable = 0;
  double change = 0.0;
  bool operator==(const NovelEffect &) const = default;
};

/// Unwatched variables whose net forecast change reaches `threshold`, largest first.
std::vector<NovelEffect> novel_effects(const Trajectory &forecast, std::span<const int> watchlist,
                                       double threshold);

struct PhaseRecord {
  int index = 0;
  int start_week = 0;
  int end_week = 0;
  CellPlans plans;
  State assessed_start;
  Trajectory forecast; // model forecast to game end
  Assessment assessment;
  BoundaryReason boundary_reason = BoundaryReason::GameEnd;
  bool recalibrated = false; // model recalibrated at the start of this phase
  double forecast_error = 0.0; // forecast vs realized over the phase
  std::size_t ledger_count = 0;
};

/// Plant coupling disparity applied at the start of a phase (model untouched).
struct RegimeShift {
  int phase = 1;
  int row = 0;
  int col = 0;
  double delta = 0.05;
};

struct XGameOptions {
  std::optional<RegimeShift> shift;
  std::optional<double> mismatch_level;
  OptimizerOptions optimizer;
};

/// One X-Game session. Every mutation is recorded as a JSON event so a session
/// can be rebuilt by replaying its events. Not thread-safe apart from
/// wait_for_inputs, which may block while another thread submits.
class XGameSession {
public:
  XGameSession(Scenario scenario, std::uint64_t seed, XGameOptions options = {});
  ~XGameSession();
  XGameSession(const XGameSession &) = delete;
  XGameSession &operator=(const XGameSession &) = delete;

  const Scenario &scenario() const { return scenario_; }
  std::uint64_t seed() const { return seed_; }
  const XGameOptions &options() const { return options_; }
  int phase() const { return static_cast<int>(phases_.size()); }
  int week() const { return week_; }
  int game_end() const { return scenario_.xgame.game_weeks; }
  bool finished() const { return week_ >= game_end(); }
  const ModelParams &model() const { return model_; }
  const Trajectory &truth() const { return truth_; }
  const std::vector<PhaseRecord> &phases() const { return phases_; }
  const Ledger &ledger() const { return ledger_; }
  const std::vector<nlohmann::json> &events() const { return events_; }

  /// Fused estimate at the current week (the state the cells plan from).
  const EstimatedState &assessed_state() const { return assessed_; }
  /// Blue, Red and Green inputs still missing for the open phase.
  std::vector<CellRole> pending_roles() const;
  bool recalibration_pending() const { return recalibrate_next_; }
  /// The three submitted inputs; PreconditionError while any is missing.
  CellPlans plans() const;

  /// Validate and record a cell's input for `phase`. Throws OutOfTurnError for
  /// any phase other than the open one, ConstraintError naming the cell.
  void submit_blue(int phase, const ActionPlan &plan);
  void submit_red(int phase, const ActionPlan &plan);
  void submit_green(int phase, const GreenPolicy &policy);
  /// Block until every cell has submitted; TimeoutError naming the missing cells.
  void wait_for_inputs(std::chrono::milliseconds deadline);

  /// Model forecast to game end under the combined cell inputs.
  /// Throws PreconditionError while inputs are pending.
  const Trajectory &forecast();
  /// Apply White adjustments on top of the forecast (cumulative within the phase).
  const Assessment &adjust(std::span<const WhiteAdjustment> adjustments);
  const Assessment &assessment();
  /// Boundary the policy would pick for the current assessment.
  Boundary proposed_boundary();
  /// Execute the plant to the boundary (or `boundary_week` when given) and open
  /// the next phase. Throws RangeError for an override outside the phase.
  const PhaseRecord &advance(std::optional<int> boundary_week = std::nullopt);

  std::size_t record(LedgerEntry entry);

  /// Log of the game so far as a run log (phase index as episode).
  RunLog run_log() const;
  /// Digest of everything the session has produced.
  std::string digest() const;

  /// Rebuild a session from its events.
  static std::unique_ptr<XGameSession> replay(const Scenario &scenario, std::uint64_t seed,
                                              const XGameOptions &options,
                                              std::span<const nlohmann::json> events);
  /// Apply one event (as produced by events()).
  void apply(const nlohmann::json &event);

private:
  void open_phase();
  void assess_now();
  Vector controls_at(int week) const;
  BoundaryPolicy boundary_policy() const;
  void notify();

  Scenario scenario_;
  std::uint64_t seed_;
  XGameOptions options_;
  PlantParams plant_;
  ModelParams model_;
  Matrix shocks_;
  Trajectory truth_;
  Matrix controls_; // m x weeks executed
  Matrix green_;    // n x weeks executed drift modifiers
  Matrix estimates_; // n x weeks fused estimates
  int week_ = 0;
  EstimatedState assessed_;
  std::optional<ActionPlan> blue_, red_;
  std::optional<GreenPolicy> green_policy_;
  std::optional<Trajectory> forecast_;
  std::optional<Assessment> assessment_;
  std::vector<WhiteAdjustment> adjustments_;
  bool recalibrate_next_ = false;
  bool recalibrated_now_ = false;
  std::vector<PhaseRecord> phases_;
  Ledger ledger_;
  std::vector<nlohmann::json> events_;

  struct Signal;
  std::unique_ptr<Signal> signal_;
};

/// Pluggable cell behavior. An empty function marks a live cell whose input
/// arrives through the session from elsewhere.
struct CellPolicies {
  std::function<ActionPlan(const XGameSession &)> blue;
  std::function<ActionPlan(const XGameSession &)> red;
  std::function<GreenPolicy(const XGameSession &)> green;
  std::function<std::vector<WhiteAdjustment>(const XGameSession &)> white;
  std::function<std::vector<LedgerEntry>(const XGameSession &)> ledger;
};

/// Deterministic cells for batch games: Blue optimizes with the current model,
/// Red replays its scripted pattern from the phase start, Green nudges social
/// attitudes toward the security situation, White accepts the forecast.
CellPolicies scripted_cells();

/// Gather the three cell inputs for `phase`, running scripted policies and
/// waiting up to `deadline` for live ones.
CellPlans collect_cell_plans(XGameSession &session, int phase, const CellPolicies &policies,
                             std::chrono::milliseconds deadline = std::chrono::seconds(0));

/// Model forecast from the assessed state to game end under `plans`.
Trajectory model_forecast_phase(const XGameSession &session, const CellPlans &plans);
Trajectory model_forecast(const ModelParams &model, const Scenario &scenario, const State &start,
                          const CellPlans &plans, int game_end);

struct XGameResult {
  std::vector<PhaseRecord> phases;
  RunLog log;
  std::vector<LedgerEntry> ledger;
  std::vector<nlohmann::json> events;
  std::string digest;
};

/// Scripted game to completion.
XGameResult run_xgame(const Scenario &scenario, std::uint64_t seed,
                      const CellPolicies &policies = scripted_cells(), XGameOptions options = {});

/// CSV: phase,start_week,end_week,boundary_reason,recalibrated,ledger_count
void write_phases_csv(std::ostream &out, std::span<const PhaseRecord> phases);

nlohmann::json to_json(const WhiteAdjustment &adjustment);
WhiteAdjustment adjustment_from_json(const nlohmann::json &document);
nlohmann::json to_json(const GreenPolicy &policy, const Scenario &scenario);
GreenPolicy green_from_json(const nlohmann::json &document, const Scenario &scenario);
nlohmann::json to_json(const DependencyNode &node, const Scenario &scenario);
nlohmann::json to_json(const Trajectory &trajectory, const Scenario &scenario);
nlohmann::json to_json(const PhaseRecord &phase, const Scenario &scenario);

} // namespace pmesii
