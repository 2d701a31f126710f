#pragma once

#include "pmesii/domain.hpp"
#include "pmesii/model.hpp"
#include "pmesii/observation.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pmesii {

enum class ReplanReason { None, Periodic, Deviation, Crisis };

std::string_view to_string(ReplanReason reason);

struct ReplanPolicy {
  int period_months = 3;
  double deviation_tau = std::numeric_limits<double>::infinity();
  bool crisis_triggers = true;
};

struct ReplanDecision {
  bool replan = false;
  ReplanReason reason = ReplanReason::None;
  bool operator==(const ReplanDecision &) const = default;
};

/// Fixed priority CRISIS > DEVIATION > PERIODIC.
ReplanDecision should_replan(int week, int last_replan_week, double deviation, bool crisis_pending,
                             const ReplanPolicy &policy);

/// Everything the optimizer needs for one planning episode.
struct PlanningProblem {
  ModelParams model;
  State start;
  Objective objective;
  std::span<const Action> catalog;
  int start_month = 0;
  int horizon_months = 0;
  PlanConstraints constraints;
  /// Activations outside the controller's choice: scripted Red moves and
  /// committed Blue work. They drive the forecast but carry no cost.
  std::vector<Activation> exogenous;
  /// Forecast end (exclusive of further steps); defaults to the window end.
  std::optional<int> end_week;

  int forecast_weeks() const;
  ActionPlan empty_plan() const { return ActionPlan{start_month, horizon_months, {}}; }
};

ForecastTrajectory forecast_plan(const PlanningProblem &problem, const ActionPlan &plan);

/// Cost of `plan` on the deterministic forecast. Throws ConstraintError for an
/// infeasible plan.
double evaluate_plan(const PlanningProblem &problem, const ActionPlan &plan);

struct OptimizerOptions {
  int restarts = 4;
  /// A move must lower the cost by more than this fraction of max(1, |cost|).
  double improvement_tolerance = 1e-12;
  /// When set, the search is a single local descent from this plan.
  std::optional<ActionPlan> warm_start;
};

struct OptimizationResult {
  ActionPlan plan;
  double cost = 0.0;
  double empty_cost = 0.0;
  long evaluations = 0;
};

/// Seeded first-improvement local search over add / remove / shift moves,
/// seeded by greedy insertion from the empty plan. The result is feasible and
/// never costs more than the empty plan.
OptimizationResult optimize_plan(const PlanningProblem &problem, std::uint64_t seed,
                                 const OptimizerOptions &options = {});

enum class LoopMode { Closed, Open };

struct RunSettings {
  LoopMode mode = LoopMode::Closed;
  std::optional<int> replan_period_months;
  std::optional<double> mismatch_level;
  /// Scales every source's noise_std (noise sweeps).
  double observation_noise_scale = 1.0;
  OptimizerOptions optimizer;
};

struct WeekRecord {
  int week = 0;
  Vector truth;
  Vector estimate;
  Vector predicted;
  std::vector<int> active; // catalog indices active during this week's step
  bool replan = false;
  ReplanReason reason = ReplanReason::None;
  int episode = 0;
};

struct EpisodeRecord {
  int index = 0;
  int start_week = 0;
  ReplanReason reason = ReplanReason::None;
  ActionPlan plan;
  double predicted_cost = 0.0;
};

struct RunLog {
  std::vector<std::string> variable_ids;
  std::vector<std::string> action_ids;
  std::vector<WeekRecord> weeks;
  std::vector<EpisodeRecord> episodes;
  /// Blue activations as executed (prefixes never rewritten).
  std::vector<Activation> executed;
  double realized_cost = 0.0;
  int optimize_calls = 0;

  Trajectory truth() const;
};

/// Receding-horizon execution against the plant. Drives both the closed and
/// open loop and is reused by next-state planning to execute directives.
class RecedingHorizonRun {
public:
  RecedingHorizonRun(const Scenario &scenario, std::uint64_t seed, RunSettings settings = {});

  int week() const { return week_; }
  int end_week() const { return end_week_; }
  const ModelParams &model() const { return model_; }
  void set_model(ModelParams model) { model_ = std::move(model); }
  const Scenario &scenario() const { return scenario_; }

  /// Fused estimate for the current week, advanced to the current week with
  /// the model when the freshest report is stale.
  const EstimatedState &estimate();

  /// Planning problem for a new episode starting at the current week.
  PlanningProblem problem(int window_months) const;
  PlanningProblem problem() const;

  /// Optimize and adopt a new episode at the current week.
  const EpisodeRecord &replan(ReplanReason reason);
  /// Adopt an externally chosen plan as a new episode at the current week.
  /// Throws ConstraintError if the plan is infeasible here.
  const EpisodeRecord &adopt(const ActionPlan &plan, ReplanReason reason);

  /// Execute weeks until `week` (exclusive of its step). Replans fire at month
  /// boundaries per the policy when `allow_replans`.
  void run_until(int week, bool allow_replans = true);

  /// Log the final week and compute the realized cost.
  RunLog finish();

  const Trajectory &truth_so_far() const { return truth_; }
  /// Forecast of the episode in force.
  const Trajectory &forecast() const { return forecast_; }
  const RunLog &log() const { return log_; }

private:
  void ensure_observed();
  std::vector<Activation> committed_at(int month) const;
  double committed_cost(int month) const;
  const EpisodeRecord &install(ActionPlan plan, double predicted_cost, ReplanReason reason,
                               ForecastTrajectory forecast);
  Vector controls_at(int week) const;

  Scenario scenario_;
  std::uint64_t seed_;
  RunSettings settings_;
  ReplanPolicy policy_;
  ModelParams model_;
  Matrix shocks_;
  std::vector<Activation> scripted_;
  std::vector<Activation> in_force_; // Blue activations currently scheduled
  Trajectory truth_;
  Trajectory forecast_;
  int week_ = 0;
  int end_week_ = 0;
  int last_replan_week_ = 0;
  bool crisis_pending_ = false;
  std::optional<EstimatedState> estimate_;
  std::optional<EstimatedState> previous_estimate_;
  bool replanned_this_week_ = false;
  ReplanReason pending_reason_ = ReplanReason::None;
  RunLog log_;
};

RunLog run_closed_loop(const Scenario &scenario, std::uint64_t seed, RunSettings settings = {});
RunLog run_open_loop(const Scenario &scenario, std::uint64_t seed, RunSettings settings = {});

/// CSV: week,var_id,true_value,est_value,pred_value,replan_flag,replan_reason,episode,active_actions
void write_run_csv(std::ostream &out, const RunLog &log);

/// Shortest round-trip decimal form; byte-stable for equal doubles.
std::string format_number(double value);

} // namespace pmesii
