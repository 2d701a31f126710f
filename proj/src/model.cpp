#include "pmesii/model.hpp"

#include "pmesii/rng.hpp"

#include <Eigen/Cholesky>

#include <random>

namespace pmesii {

namespace {

template <typename Derived>
void perturb(Eigen::MatrixBase<Derived> &m, double level, Rng &rng, double threshold) {
  std::uniform_real_distribution<double> eta(-1.0, 1.0);
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = 0; i < m.rows(); ++i) {
      const double e = eta(rng);
      if (level == 0.0)
        continue;
      m(i, j) *= 1.0 + level * e;
      if (std::abs(m(i, j)) < threshold)
        m(i, j) = 0.0;
    }
}

} // namespace

ModelParams derive_model(const LinearDynamics<double> &plant, double mismatch_level,
                         std::uint64_t seed, double prune_threshold) {
  if (!(mismatch_level >= 0.0 && mismatch_level <= 1.0))
    throw RangeError("mismatch level must lie in [0, 1]");
  ModelParams model;
  model.dynamics = plant;
  model.provenance = {mismatch_level, seed, prune_threshold, 0};
  Rng rng = make_rng({seed, 0xe7a11ULL});
  perturb(model.dynamics.coupling, mismatch_level, rng, prune_threshold);
  perturb(model.dynamics.effects, mismatch_level, rng, prune_threshold);
  perturb(model.dynamics.drift, mismatch_level, rng, prune_threshold);
  return model;
}

Trajectory rollout(const LinearDynamics<double> &dynamics, const State &start,
                   const Matrix &controls) {
  if (start.values.size() != dynamics.size() || controls.rows() != dynamics.action_count())
    throw DimensionError("rollout: state or control dimension mismatch");
  const Index weeks = controls.cols();
  Trajectory traj;
  traj.first_week = start.week;
  traj.values.resize(dynamics.size(), weeks + 1);
  traj.values.col(0) = start.values;
  const Vector zero = Vector::Zero(dynamics.size());
  for (Index t = 0; t < weeks; ++t)
    traj.values.col(t + 1) = propagate(dynamics, traj.values.col(t), controls.col(t), zero);
  return traj;
}

double state_cost(const Trajectory &trajectory, const Objective &objective) {
  if (trajectory.values.rows() != objective.goal.size())
    throw DimensionError("state_cost: objective dimension mismatch");
  double total = 0.0;
  double factor = std::pow(objective.discount, trajectory.first_week);
  for (Index t = 1; t < trajectory.weeks(); ++t) {
    factor *= objective.discount;
    total += factor * (objective.weights.array() *
                       (trajectory.values.col(t) - objective.goal).array().square())
                          .sum();
  }
  return total;
}

ForecastTrajectory forecast(const ModelParams &model, const State &start, const ActionPlan &plan,
                            std::span<const Activation> exogenous, std::span<const Action> catalog,
                            const Objective &objective, int weeks) {
  std::vector<Activation> all(plan.activations.begin(), plan.activations.end());
  all.insert(all.end(), exogenous.begin(), exogenous.end());
  const Matrix controls = expand_controls(all, model.dynamics.action_count(), start.week, weeks);
  ForecastTrajectory out;
  out.path = rollout(model.dynamics, start, controls);
  out.cost = state_cost(out.path, objective) +
             objective.action_cost_weight * activation_cost(plan.activations, catalog);
  return out;
}

std::vector<Transition> transitions_of(const Trajectory &trajectory, const Matrix &controls) {
  std::vector<Transition> out;
  const Index steps = trajectory.weeks() - 1;
  if (controls.cols() < steps)
    throw DimensionError("transitions_of: control matrix too short");
  out.reserve(static_cast<std::size_t>(std::max<Index>(steps, 0)));
  for (Index t = 0; t < steps; ++t)
    out.push_back({trajectory.values.col(t), controls.col(t), trajectory.values.col(t + 1)});
  return out;
}

double one_step_error(const LinearDynamics<double> &dynamics, std::span<const Transition> history) {
  if (history.empty())
    return 0.0;
  const Vector zero = Vector::Zero(dynamics.size());
  double total = 0.0;
  for (const auto &tr : history)
    total += (propagate(dynamics, tr.state, tr.controls, zero) - tr.next).squaredNorm();
  return total / (static_cast<double>(history.size()) * static_cast<double>(dynamics.size()));
}

ModelParams recalibrate(const ModelParams &model, std::span<const Transition> history,
                        const RecalibrationOptions &options) {
  if (history.size() < options.min_transitions)
    throw InsufficientDataError("recalibration needs at least " +
                                std::to_string(options.min_transitions) + " transitions, got " +
                                std::to_string(history.size()));
  const auto &dyn = model.dynamics;
  const Index n = dyn.size();
  const Index m = dyn.action_count();
  ModelParams fitted = model;

  for (Index i = 0; i < n; ++i) {
    // free parameters of row i: nonzero couplings, nonzero effects, nonzero drift
    std::vector<Index> a_cols, b_cols;
    for (Index j = 0; j < n; ++j)
      if (dyn.coupling(i, j) != 0.0)
        a_cols.push_back(j);
    for (Index k = 0; k < m; ++k)
      if (dyn.effects(i, k) != 0.0)
        b_cols.push_back(k);
    const bool has_drift = dyn.drift[i] != 0.0;
    const Index p = static_cast<Index>(a_cols.size() + b_cols.size()) + (has_drift ? 1 : 0);
    if (p == 0)
      continue;

    Vector prior(p);
    {
      Index q = 0;
      for (Index j : a_cols)
        prior[q++] = dyn.coupling(i, j);
      for (Index k : b_cols)
        prior[q++] = dyn.effects(i, k);
      if (has_drift)
        prior[q++] = dyn.drift[i];
    }

    Matrix gram = Matrix::Zero(p, p);
    Vector rhs = Vector::Zero(p);
    Index used = 0;
    Vector phi(p);
    for (const auto &tr : history) {
      const double next = tr.next[i];
      if (next <= 0.0 || next >= 1.0)
        continue; // clamp active: uninformative for the linear parameters
      Index q = 0;
      for (Index j : a_cols)
        phi[q++] = tr.state[j] - 0.5;
      for (Index k : b_cols)
        phi[q++] = tr.controls[k];
      if (has_drift)
        phi[q++] = 1.0;
      const double target = next - tr.state[i];
      gram.noalias() += phi * phi.transpose();
      rhs.noalias() += phi * target;
      ++used;
    }
    if (used == 0)
      continue;
    const double inv = 1.0 / static_cast<double>(used);
    Matrix lhs = gram * inv;
    lhs.diagonal().array() += options.ridge;
    const Vector theta = lhs.ldlt().solve(rhs * inv + options.ridge * prior);

    Index q = 0;
    for (Index j : a_cols)
      fitted.dynamics.coupling(i, j) = theta[q++];
    for (Index k : b_cols)
      fitted.dynamics.effects(i, k) = theta[q++];
    if (has_drift)
      fitted.dynamics.drift[i] = theta[q++];
  }

  if (one_step_error(fitted.dynamics, history) > one_step_error(model.dynamics, history))
    return model;
  fitted.provenance.recalibrations += 1;
  return fitted;
}

double forecast_error(const Trajectory &predicted, const Trajectory &observed, const Vector &weights) {
  if (predicted.values.rows() != observed.values.rows() ||
      predicted.values.cols() != observed.values.cols())
    throw DimensionError("forecast_error: trajectories differ in shape");
  if (predicted.weeks() == 0)
    return 0.0;
  double total = 0.0;
  for (Index t = 0; t < predicted.weeks(); ++t)
    total += weighted_distance(predicted.values.col(t), observed.values.col(t), weights);
  return total / static_cast<double>(predicted.weeks());
}

} // namespace pmesii
