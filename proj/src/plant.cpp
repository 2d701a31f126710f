#include "pmesii/plant.hpp"

#include "pmesii/rng.hpp"

namespace pmesii {

namespace {

void check_dims(const LinearDynamics<double> &dyn, Index state_size, Index control_size) {
  if (dyn.coupling.cols() != dyn.size() || dyn.drift.size() != dyn.size() ||
      dyn.effects.rows() != dyn.size())
    throw DimensionError("plant dynamics are not dimensionally consistent");
  if (state_size != dyn.size())
    throw DimensionError("state has " + std::to_string(state_size) + " variables, plant has " +
                         std::to_string(dyn.size()));
  if (control_size != dyn.action_count())
    throw DimensionError("control vector has " + std::to_string(control_size) +
                         " entries, plant has " + std::to_string(dyn.action_count()) + " actions");
}

} // namespace

State step_plant(const LinearDynamics<double> &dynamics, const State &state, const Vector &controls,
                 const Vector &shock) {
  check_dims(dynamics, state.values.size(), controls.size());
  if (shock.size() != dynamics.size())
    throw DimensionError("shock vector length mismatch");
  return State{state.week + 1, propagate(dynamics, state.values, controls, shock)};
}

Matrix draw_shocks(const PlantParams &plant, int first_week, int weeks, std::uint64_t seed) {
  const Index n = plant.shock_std.size();
  Matrix shocks(n, weeks);
  Rng rng = make_rng({seed, 0x5150c4ULL, static_cast<std::uint64_t>(first_week)});
  for (int t = 0; t < weeks; ++t)
    for (Index i = 0; i < n; ++i)
      shocks(i, t) = truncated_normal(rng, plant.shock_std[i]);
  for (const auto &c : plant.crises) {
    const int col = c.week - first_week - 1;
    if (col >= 0 && col < weeks)
      shocks.col(col) += c.shock;
  }
  return shocks;
}

Trajectory simulate_with_shocks(const LinearDynamics<double> &dynamics, const State &initial,
                                const Matrix &controls, const Matrix &shocks) {
  const int weeks = static_cast<int>(shocks.cols());
  check_dims(dynamics, initial.values.size(), controls.rows());
  if (controls.cols() < weeks)
    throw DimensionError("control schedule covers " + std::to_string(controls.cols()) +
                         " weeks, need " + std::to_string(weeks));
  if (shocks.rows() != dynamics.size())
    throw DimensionError("shock matrix row count mismatch");
  Trajectory traj;
  traj.first_week = initial.week;
  traj.values.resize(dynamics.size(), weeks + 1);
  traj.values.col(0) = initial.values;
  Vector shock(dynamics.size());
  for (int t = 0; t < weeks; ++t) {
    shock = shocks.col(t);
    traj.values.col(t + 1) = propagate(dynamics, traj.values.col(t), controls.col(t), shock);
  }
  return traj;
}

Trajectory simulate_plant(const PlantParams &plant, const State &initial, const Matrix &controls,
                          std::uint64_t seed, int weeks) {
  if (plant.shock_std.size() != plant.dynamics.size())
    throw DimensionError("shock_std length mismatch");
  return simulate_with_shocks(plant.dynamics, initial, controls,
                              draw_shocks(plant, initial.week, weeks, seed));
}

std::vector<std::pair<int, std::string>> crisis_flags(const Trajectory &trajectory,
                                                      std::span<const Crisis> crises) {
  std::vector<std::pair<int, std::string>> out;
  for (const auto &c : crises)
    if (c.week > trajectory.first_week && c.week <= trajectory.last_week())
      out.emplace_back(c.week, c.id);
  return out;
}

std::vector<std::pair<int, std::string>> crisis_flags(const Trajectory &trajectory,
                                                      const Scenario &scenario) {
  return crisis_flags(trajectory, scenario.plant.crises);
}

} // namespace pmesii
