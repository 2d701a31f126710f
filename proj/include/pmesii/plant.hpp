#pragma once

#include "pmesii/domain.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace pmesii {

/// One plant week: clamp01(x + A(x - 0.5) + B u + c + shock), week + 1.
/// Throws DimensionError.
State step_plant(const LinearDynamics<double> &dynamics, const State &state, const Vector &controls,
                 const Vector &shock);

/// n x weeks matrix of truncated Gaussian shocks (+/- 3 sigma), column t
/// applied on the step that produces week first_week + t + 1. Scripted crisis
/// shocks landing inside the span are added.
Matrix draw_shocks(const PlantParams &plant, int first_week, int weeks, std::uint64_t seed);

/// T+1 states from `initial` under the per-week control matrix (m x T).
Trajectory simulate_plant(const PlantParams &plant, const State &initial, const Matrix &controls,
                          std::uint64_t seed, int weeks);

/// Same as simulate_plant but with an explicit shock matrix (n x T).
Trajectory simulate_with_shocks(const LinearDynamics<double> &dynamics, const State &initial,
                                const Matrix &controls, const Matrix &shocks);

/// Scripted crises that have occurred within the trajectory span.
std::vector<std::pair<int, std::string>> crisis_flags(const Trajectory &trajectory,
                                                      const Scenario &scenario);
std::vector<std::pair<int, std::string>> crisis_flags(const Trajectory &trajectory,
                                                      std::span<const Crisis> crises);

} // namespace pmesii
