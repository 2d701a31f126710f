#pragma once

#include "pmesii/dynamics.hpp"
#include "pmesii/errors.hpp"
#include "pmesii/types.hpp"

#include <cmath>
#include <compare>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pmesii {

enum class Category { Political, Military, Economic, Social, Infrastructure, Information };

std::string_view to_string(Category category);
Category parse_category(std::string_view text);

struct Variable {
  std::string id;
  Category category = Category::Political;
  std::string label;
  double initial = 0.0; // normalized index in [0,1]

  bool operator==(const Variable &) const = default;
};

/// Snapshot of every variable at one week.
struct State {
  int week = 0;
  Vector values;

  bool operator==(const State &other) const {
    return week == other.week && values.size() == other.values.size() && values == other.values;
  }
};

/// Weekly series, one column per week starting at first_week.
struct Trajectory {
  int first_week = 0;
  Matrix values; // n x (T+1)

  Index weeks() const { return values.cols(); }
  int last_week() const { return first_week + static_cast<int>(values.cols()) - 1; }
  bool covers(int week) const { return week >= first_week && week <= last_week(); }
  auto at(int week) const { return values.col(week - first_week); }
  State state(int week) const { return State{week, values.col(week - first_week)}; }

  bool operator==(const Trajectory &other) const {
    return first_week == other.first_week && values.rows() == other.values.rows() &&
           values.cols() == other.values.cols() && values == other.values;
  }
};

enum class Actor { Blue, Red };

std::string_view to_string(Actor actor);
Actor parse_actor(std::string_view text);

/// Inclusive month range.
struct MonthRange {
  int start = 0;
  int end = 0;

  int months() const { return end - start + 1; }
  bool contains(int month) const { return month >= start && month <= end; }
  auto operator<=>(const MonthRange &) const = default;
};

struct Action {
  std::string id;
  Actor actor = Actor::Blue;
  Vector effect; // index/week while active
  double cost = 0.0;
  int min_duration_months = 1;
  std::string description;
  /// Scripted activations, used for Red actions (and any exogenous schedule).
  std::vector<MonthRange> schedule;

  bool operator==(const Action &other) const {
    return id == other.id && actor == other.actor && effect.size() == other.effect.size() &&
           effect == other.effect && cost == other.cost &&
           min_duration_months == other.min_duration_months &&
           description == other.description && schedule == other.schedule;
  }
};

/// One scheduled use of a catalog action. `action` indexes the catalog.
struct Activation {
  int action = 0;
  int start_month = 0;
  int end_month = 0; // inclusive

  int months() const { return end_month - start_month + 1; }
  bool active_in(int month) const { return month >= start_month && month <= end_month; }
  auto operator<=>(const Activation &) const = default;
};

struct ActionPlan {
  int start_month = 0;
  int horizon_months = 0;
  std::vector<Activation> activations;

  int end_month() const { return start_month + horizon_months; } // exclusive
  /// Sort activations into canonical (action, start, end) order.
  void canonicalize();
  bool operator==(const ActionPlan &) const = default;
};

struct Objective {
  Vector goal;
  Vector weights;
  double action_cost_weight = 0.0;
  double discount = 1.0;

  bool operator==(const Objective &other) const {
    return goal.size() == other.goal.size() && goal == other.goal &&
           weights.size() == other.weights.size() && weights == other.weights &&
           action_cost_weight == other.action_cost_weight && discount == other.discount;
  }
};

struct Crisis {
  std::string id;
  int week = 0;
  Vector shock;

  bool operator==(const Crisis &other) const {
    return id == other.id && week == other.week && shock.size() == other.shock.size() &&
           shock == other.shock;
  }
};

struct PlantParams {
  LinearDynamics<double> dynamics;
  Vector shock_std;
  std::vector<Crisis> crises;

  bool operator==(const PlantParams &other) const {
    return dynamics == other.dynamics && shock_std.size() == other.shock_std.size() &&
           shock_std == other.shock_std && crises == other.crises;
  }
};

struct MismatchSpec {
  double level = 0.0;
  std::uint64_t seed = 0;
  double prune_threshold = 0.0;
  bool operator==(const MismatchSpec &) const = default;
};

struct SourceSpec {
  std::string id;
  double bias = 0.0;
  double noise_std = 0.0;
  int delay_weeks = 0;
  double missing_prob = 0.0;
  double reliability = 1.0;
  bool operator==(const SourceSpec &) const = default;
};

struct ChannelSpec {
  std::vector<SourceSpec> sources;

  const SourceSpec *find(std::string_view id) const;
  bool operator==(const ChannelSpec &) const = default;
};

/// How the planning window moves at a replan.
enum class WindowMode {
  Remaining, // plan to the end of the run horizon (shrinking window)
  Rolling    // plan a full horizon ahead of the replan month
};

struct ControlSpec {
  int horizon_months = 18;
  int replan_period_months = 3;
  double deviation_tau = std::numeric_limits<double>::infinity();
  double budget = std::numeric_limits<double>::infinity();
  int concurrency_cap = 1;
  bool crisis_triggers = true;
  WindowMode window = WindowMode::Remaining;
  bool operator==(const ControlSpec &) const = default;
};

enum class Comparison { AtLeast, AtMost };

struct MilestoneTerm {
  int variable = 0;
  Comparison comparison = Comparison::AtLeast;
  double bound = 0.0;
  bool operator==(const MilestoneTerm &) const = default;
};

/// Conjunction of per-variable thresholds to hold at target_month.
struct MilestonePredicate {
  std::string id;
  std::string description;
  std::vector<MilestoneTerm> terms;
  int target_month = 0;
  bool operator==(const MilestonePredicate &) const = default;
};

struct EndStatePath {
  std::vector<MilestonePredicate> milestones;
  int horizon_months = 36;
  bool operator==(const EndStatePath &) const = default;
};

/// A planning team's assumption set: its own model variant and priorities.
struct AssumptionSet {
  std::string id;
  std::uint64_t mismatch_seed = 0;
  double mismatch_level = 0.0;
  std::optional<Vector> weights;

  bool operator==(const AssumptionSet &other) const {
    if (id != other.id || mismatch_seed != other.mismatch_seed ||
        mismatch_level != other.mismatch_level || weights.has_value() != other.weights.has_value())
      return false;
    return !weights || (weights->size() == other.weights->size() && *weights == *other.weights);
  }
};

struct XGameSpec {
  int game_weeks = 10 * kWeeksPerYear;
  double boundary_threshold = 0.2;
  int max_phase_weeks = 104;
  double recalibration_threshold = 0.05;
  double green_bound = 0.05;
  int blue_plan_months = 18;
  bool operator==(const XGameSpec &) const = default;
};

struct NextStateSpec {
  EndStatePath path;
  std::vector<AssumptionSet> assumptions;
  double plant_perturbation = 0.25;
  bool operator==(const NextStateSpec &) const = default;
};

struct Scenario {
  std::string name;
  std::vector<Variable> variables;
  PlantParams plant;
  std::vector<Action> actions;
  MismatchSpec mismatch;
  ChannelSpec observation;
  Objective objective;
  ControlSpec control;
  XGameSpec xgame;
  std::optional<NextStateSpec> nextstate;

  Index size() const { return static_cast<Index>(variables.size()); }
  int horizon_weeks() const { return control.horizon_months * kWeeksPerMonth; }
  State initial_state() const;
  /// Throws UnknownVariableError.
  int variable_index(std::string_view id) const;
  int action_index(std::string_view id) const;
  std::vector<int> blue_actions() const;

  bool operator==(const Scenario &) const = default;
};

/// sqrt(sum_i w_i (a_i - b_i)^2). Throws DimensionError on length mismatch.
template <typename DerivedA, typename DerivedB, typename DerivedW>
double weighted_distance(const Eigen::MatrixBase<DerivedA> &a, const Eigen::MatrixBase<DerivedB> &b,
                         const Eigen::MatrixBase<DerivedW> &weights) {
  if (a.size() != b.size() || a.size() != weights.size())
    throw DimensionError("weighted_distance: length mismatch");
  return std::sqrt((weights.array() * (a - b).array().square()).sum());
}

inline double weighted_distance(const State &a, const State &b, const Vector &weights) {
  return weighted_distance(a.values, b.values, weights);
}

/// Episode start months [0, p, 2p, ...]. Throws ScheduleError unless p divides horizon.
std::vector<int> horizon_schedule(int horizon_months, int replan_period_months);

/// Budget, concurrency and window limits an ActionPlan must respect.
struct PlanConstraints {
  double budget = std::numeric_limits<double>::infinity();
  int concurrency_cap = std::numeric_limits<int>::max();
  /// Activations already running (committed earlier). They count toward
  /// concurrency but their cost is already accounted in `budget`.
  std::vector<Activation> committed;
};

/// Blue action-cost of a set of activations: sum of months x per-month cost.
double activation_cost(std::span<const Activation> activations, std::span<const Action> catalog);

/// Throws ConstraintError naming the violated rule.
void check_plan(const ActionPlan &plan, std::span<const Action> catalog,
                const PlanConstraints &constraints);
bool is_feasible(const ActionPlan &plan, std::span<const Action> catalog,
                 const PlanConstraints &constraints);

/// Scripted (Red or exogenous) activations clipped to [first_month, end_month).
std::vector<Activation> scripted_activations(std::span<const Action> catalog, int first_month,
                                             int end_month);

/// Expand activations into an m x weeks matrix of 0/1 flags for the weeks
/// [first_week, first_week + weeks).
Matrix expand_controls(std::span<const Activation> activations, Index action_count, int first_week,
                       int weeks);

} // namespace pmesii
