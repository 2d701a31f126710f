#pragma once

#include "pmesii/controller.hpp"
#include "pmesii/domain.hpp"

#include <limits>
#include <random>
#include <vector>

namespace pmesii::test {

/// Every set of pairwise disjoint activations of one action inside
/// [first, first + months) respecting the minimum duration.
inline void schedules_of_action(int action, int from, int end, int min_duration,
                                std::vector<Activation> &current,
                                std::vector<std::vector<Activation>> &out) {
  out.push_back(current);
  for (int s = from; s < end; ++s)
    for (int e = s + min_duration - 1; e < end; ++e) {
      current.push_back({action, s, e});
      schedules_of_action(action, e + 1, end, min_duration, current, out);
      current.pop_back();
    }
}

/// All feasible plans of the problem's Blue actions, found by brute force.
inline std::vector<ActionPlan> enumerate_plans(const PlanningProblem &problem) {
  std::vector<std::vector<std::vector<Activation>>> per_action;
  for (std::size_t a = 0; a < problem.catalog.size(); ++a) {
    if (problem.catalog[a].actor != Actor::Blue)
      continue;
    std::vector<Activation> current;
    std::vector<std::vector<Activation>> options;
    schedules_of_action(static_cast<int>(a), problem.start_month,
                        problem.start_month + problem.horizon_months,
                        problem.catalog[a].min_duration_months, current, options);
    per_action.push_back(std::move(options));
  }
  std::vector<ActionPlan> plans{problem.empty_plan()};
  for (const auto &options : per_action) {
    std::vector<ActionPlan> next;
    for (const auto &p : plans)
      for (const auto &o : options) {
        ActionPlan q = p;
        q.activations.insert(q.activations.end(), o.begin(), o.end());
        next.push_back(std::move(q));
      }
    plans = std::move(next);
  }
  std::vector<ActionPlan> feasible;
  for (auto &p : plans) {
    p.canonicalize();
    if (is_feasible(p, problem.catalog, problem.constraints))
      feasible.push_back(std::move(p));
  }
  return feasible;
}

struct Enumerated {
  double best = std::numeric_limits<double>::infinity();
  std::size_t count = 0;
};

inline Enumerated exhaustive_optimum(const PlanningProblem &problem) {
  Enumerated r;
  for (const auto &p : enumerate_plans(problem)) {
    r.best = std::min(r.best, evaluate_plan(problem, p));
    ++r.count;
  }
  return r;
}

/// Small random planning instance: three variables, weakly coupled, one or
/// two Blue actions over a short window. Move only; the problem views the catalog.
struct RandomInstance {
  std::vector<Action> catalog;
  PlanningProblem problem;
};

inline RandomInstance random_instance(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Index n = 3;
  const int actions = 1 + static_cast<int>(rng() % 2);
  const int months = 2 + static_cast<int>(rng() % 3);

  RandomInstance r;
  for (int a = 0; a < actions; ++a) {
    Action act;
    act.id = "a" + std::to_string(a);
    act.actor = Actor::Blue;
    act.effect = Vector(n);
    for (Index i = 0; i < n; ++i)
      act.effect[i] = 0.03 * (u(rng) - 0.4);
    act.cost = 0.5 + u(rng);
    act.min_duration_months = 1 + static_cast<int>(rng() % 2);
    r.catalog.push_back(act);
  }
  LinearDynamics<double> dyn{Matrix(n, n), Matrix(n, actions), Vector(n)};
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j)
      dyn.coupling(i, j) = 0.04 * (u(rng) - 0.5);
    dyn.drift[i] = 0.004 * (u(rng) - 0.5);
  }
  for (int a = 0; a < actions; ++a)
    dyn.effects.col(a) = r.catalog[static_cast<std::size_t>(a)].effect;

  auto &p = r.problem;
  p.model.dynamics = dyn;
  p.start = State{0, Vector(n)};
  for (Index i = 0; i < n; ++i)
    p.start.values[i] = 0.3 + 0.4 * u(rng);
  p.objective.goal = Vector(n);
  p.objective.weights = Vector(n);
  for (Index i = 0; i < n; ++i) {
    p.objective.goal[i] = 0.3 + 0.4 * u(rng);
    p.objective.weights[i] = 0.5 + u(rng);
  }
  p.objective.action_cost_weight = 0.02 * u(rng);
  p.objective.discount = 1.0;
  p.start_month = 0;
  p.horizon_months = months;
  p.constraints.concurrency_cap = 1 + static_cast<int>(rng() % 2);
  p.constraints.budget = std::numeric_limits<double>::infinity();
  p.catalog = r.catalog; // moved vectors keep their storage
  return r;
}

} // namespace pmesii::test
