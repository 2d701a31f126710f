#pragma once

#include "pmesii/controller.hpp"
#include "pmesii/domain.hpp"
#include "pmesii/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pmesii {

/// Signed margin of one term: positive when satisfied.
double term_margin(const MilestoneTerm &term, const Vector &values);
/// Minimum term margin; the milestone holds when it is >= 0.
double milestone_margin(const MilestonePredicate &milestone, const Vector &values);

struct MilestoneProgress {
  std::string id;
  double margin = 0.0;
  bool satisfied = false;
};

struct ProgressReport {
  std::vector<MilestoneProgress> milestones;
  /// Satisfied milestones weighted by position (k-th milestone weighs k+1).
  double progress = 0.0;
};

ProgressReport assess_progress(const Vector &estimate, const EndStatePath &path);

/// First milestone whose target month lies after `month`, if any.
const MilestonePredicate *next_milestone(const EndStatePath &path, int month);

struct StrategyAlternative {
  int team_id = 0;
  std::string assumption_id;
  ActionPlan plan;
  Trajectory predicted;
  double predicted_cost = 0.0;
  double feasibility = 0.0;
  double risk = 0.0;
};

struct AlternativeOptions {
  OptimizerOptions optimizer;
  /// Budget for the window; the scenario budget when unset.
  std::optional<double> budget;
  /// Objective weight multiplier on the milestone's variables while planning.
  double milestone_emphasis = 4.0;
  /// Milestones already passed whose gains the plan should hold; their
  /// variables get the same emphasis.
  std::vector<MilestonePredicate> held;
};

/// One optimized plan per assumption set, from `start` (at month
/// `month_of_week(start.week)`) to the milestone's target month, each
/// forecast under its own model variant. Predicted costs use the scenario
/// objective so alternatives compare on one scale. Throws PreconditionError for fewer
/// than two assumption sets or a target not after the start month; appends a
/// warning when the window falls outside 3 to 5 months.
std::vector<StrategyAlternative> plan_alternatives(const Scenario &scenario, const State &start,
                                                   const MilestonePredicate &milestone,
                                                   std::span<const AssumptionSet> assumptions,
                                                   std::uint64_t seed,
                                                   std::vector<std::string> *warnings = nullptr,
                                                   const AlternativeOptions &options = {});

/// Seeded family of plants around the scenario's plant: each draw perturbs
/// every parameter multiplicatively by up to `perturbation` and carries its own
/// shock sequence.
struct PlantFamily {
  const Scenario *scenario = nullptr;
  double perturbation = 0.25;
  /// Draws with perturbation 0 and no shocks are all the nominal plant.
  bool deterministic() const;
};

struct RiskFeasibility {
  double feasibility = 0.0;
  double risk = 0.0;
  std::vector<double> margins; // worst margin per draw, draw order
};

/// Monte Carlo over `trials` plant draws executing the plan open loop from
/// `start` to the milestone's target month. Throws PreconditionError for trials < 1.
RiskFeasibility assess_risk_feasibility(const StrategyAlternative &alternative,
                                        const MilestonePredicate &milestone, const State &start,
                                        const PlantFamily &family, int trials, std::uint64_t seed);

/// Nearest-rank 90th percentile of the shortfalls max(0, -margin).
double shortfall_risk(std::span<const double> margins);

struct SelectionWeights {
  double cost = 0.01;
  double infeasibility = 1.0;
  double risk = 1.0;
};

double selection_score(const StrategyAlternative &alternative, const SelectionWeights &weights);

/// Index of the alternative minimizing the weighted score, ties to the lowest
/// team id. Throws EmptyInputError, PreconditionError for negative or all-zero weights.
std::size_t select_strategy(std::span<const StrategyAlternative> alternatives,
                            const SelectionWeights &weights);

struct Directive {
  int team_id = 0;
  std::string assumption_id;
  std::string milestone_id;
  int start_month = 0;
  int target_month = 0;
  ActionPlan plan;
  std::string hash; // SHA-256 of the content above

  bool operator==(const Directive &) const = default;
};

nlohmann::json to_json(const Directive &directive, const Scenario &scenario);
/// Throws CorruptLogError when the stored hash does not match the content.
Directive directive_from_json(const nlohmann::json &document, const Scenario &scenario);
std::string directive_hash(const Directive &directive, const Scenario &scenario);

/// Issued directives; at most one open window at a time.
class DirectiveLog {
public:
  explicit DirectiveLog(const Scenario &scenario) : scenario_(&scenario) {}

  /// Freeze the chosen plan for [month, milestone target). Throws
  /// ConstraintError while an earlier directive's window is still open or when
  /// the plan does not cover exactly that window.
  const Directive &issue(const StrategyAlternative &chosen, const MilestonePredicate &milestone,
                         int month);
  const Directive *active(int month) const;
  const std::vector<Directive> &directives() const { return directives_; }

private:
  const Scenario *scenario_;
  std::vector<Directive> directives_;
};

struct NextStateOptions {
  int trials = 200;
  SelectionWeights weights;
  AlternativeOptions alternatives;
};

struct WindowRecord {
  std::string milestone_id;
  int start_month = 0;
  int target_month = 0;
  ProgressReport progress_before;
  ProgressReport progress_after;
  std::vector<StrategyAlternative> alternatives;
  std::size_t selected = 0;
  Directive directive;
};

struct NextStateResult {
  std::vector<WindowRecord> windows;
  RunLog log;
  std::vector<std::string> warnings;
};

/// Walks the end-state path window by window: assess, plan alternatives,
/// score, select, issue, then execute the directive against the plant.
class NextStatePlanner {
public:
  /// Throws PreconditionError when the scenario has no next-state milestones.
  NextStatePlanner(const Scenario &scenario, std::uint64_t seed, NextStateOptions options = {});
  NextStatePlanner(const NextStatePlanner &) = delete;
  NextStatePlanner &operator=(const NextStatePlanner &) = delete;

  bool finished() const;
  int week() const { return run_.week(); }
  const Scenario &scenario() const { return scenario_; }
  const RecedingHorizonRun &run() const { return run_; }
  const std::vector<WindowRecord> &windows() const { return windows_; }
  const DirectiveLog &directives() const { return directives_; }
  const std::vector<std::string> &warnings() const { return warnings_; }
  const EstimatedState &estimate() { return run_.estimate(); }
  /// Progress against the path at the current estimate.
  ProgressReport progress();

  /// Plan, issue and execute the next window. Throws PreconditionError when finished.
  const WindowRecord &step();
  /// Run the remaining windows and close the run log.
  NextStateResult finish();

private:
  Scenario scenario_;
  std::uint64_t seed_;
  NextStateOptions options_;
  RecedingHorizonRun run_;
  DirectiveLog directives_;
  std::vector<WindowRecord> windows_;
  std::vector<std::string> warnings_;
  std::size_t next_ = 0;
  double spent_ = 0.0;
};

NextStateResult run_nextstate(const Scenario &scenario, std::uint64_t seed,
                              const NextStateOptions &options = {});

/// CSV: team_id,assumption_id,predicted_cost,feasibility,risk,selected
void write_alternatives_csv(std::ostream &out, std::span<const StrategyAlternative> alternatives,
                            std::size_t selected);

} // namespace pmesii
