#pragma once

#include "pmesii/domain.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace pmesii {

struct ModelProvenance {
  double mismatch_level = 0.0;
  std::uint64_t seed = 0;
  double prune_threshold = 0.0;
  int recalibrations = 0;
  bool operator==(const ModelProvenance &) const = default;
};

/// The planner's forecast model: same family as the plant, imperfect parameters.
struct ModelParams {
  LinearDynamics<double> dynamics;
  ModelProvenance provenance;
  bool operator==(const ModelParams &) const = default;
};

/// Multiplicative seeded perturbation A(1 + eps * eta), eta ~ U(-1, 1), of every
/// coupling, effect and drift entry, followed by pruning of entries whose
/// magnitude falls below `prune_threshold`. Pruning is part of the mismatch and
/// is skipped at eps = 0, so a zero-mismatch model equals the plant exactly.
/// Throws RangeError for eps outside [0, 1].
ModelParams derive_model(const LinearDynamics<double> &plant, double mismatch_level,
                         std::uint64_t seed, double prune_threshold);

/// Model rollout with zero shock (the expected path).
Trajectory rollout(const LinearDynamics<double> &dynamics, const State &start,
                   const Matrix &controls);

/// sum over t >= 1 of discount^week * sum_i w_i (x_i - goal_i)^2.
double state_cost(const Trajectory &trajectory, const Objective &objective);

struct ForecastTrajectory {
  Trajectory path;
  double cost = 0.0;
};

/// Deterministic forecast of `weeks` steps from `start` under `plan` plus any
/// exogenous activations (scripted Red moves, committed Blue work). The cost is
/// the state cost plus the action-cost weight times the plan's Blue action cost.
ForecastTrajectory forecast(const ModelParams &model, const State &start, const ActionPlan &plan,
                            std::span<const Activation> exogenous, std::span<const Action> catalog,
                            const Objective &objective, int weeks);

struct Transition {
  Vector state;
  Vector controls;
  Vector next;
};

/// Transitions of a realized trajectory under its control matrix.
std::vector<Transition> transitions_of(const Trajectory &trajectory, const Matrix &controls);

/// Mean squared one-step prediction error (per variable) over the history.
double one_step_error(const LinearDynamics<double> &dynamics, std::span<const Transition> history);

struct RecalibrationOptions {
  std::size_t min_transitions = 8;
  double ridge = 1e-3;
};

/// Row-wise ridge least squares on the unclamped transitions, shrinking toward
/// the current parameters. Entries that are zero in the current model stay
/// zero. The result never has a larger in-sample one-step error than `model`.
/// Throws InsufficientDataError.
ModelParams recalibrate(const ModelParams &model, std::span<const Transition> history,
                        const RecalibrationOptions &options = {});

/// Mean over weeks of the weighted distance between the two series.
double forecast_error(const Trajectory &predicted, const Trajectory &observed, const Vector &weights);

} // namespace pmesii
