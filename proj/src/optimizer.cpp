#include "pmesii/controller.hpp"

#include "pmesii/rng.hpp"

#include <algorithm>
#include <random>

namespace pmesii {

int PlanningProblem::forecast_weeks() const {
  const int last = end_week.value_or(first_week_of_month(start_month + horizon_months));
  return std::max(0, last - start.week);
}

ForecastTrajectory forecast_plan(const PlanningProblem &problem, const ActionPlan &plan) {
  return forecast(problem.model, problem.start, plan, problem.exogenous, problem.catalog,
                  problem.objective, problem.forecast_weeks());
}

double evaluate_plan(const PlanningProblem &problem, const ActionPlan &plan) {
  if (plan.start_month != problem.start_month || plan.horizon_months != problem.horizon_months)
    throw ConstraintError("plan window does not match the planning window");
  check_plan(plan, problem.catalog, problem.constraints);
  for (const auto &a : plan.activations)
    if (problem.catalog[static_cast<std::size_t>(a.action)].actor != Actor::Blue)
      throw ConstraintError("plan schedules non-Blue action '" +
                            problem.catalog[static_cast<std::size_t>(a.action)].id + "'");
  return forecast_plan(problem, plan).cost;
}

namespace {

/// Incremental feasibility bookkeeping plus cached cost evaluation.
class SearchSpace {
public:
  explicit SearchSpace(const PlanningProblem &problem) : problem_(problem) {
    const int months = problem.horizon_months;
    base_counts_.assign(static_cast<std::size_t>(months), 0);
    for (const auto &a : problem.constraints.committed)
      if (blue(a.action))
        for (int m = std::max(a.start_month, problem.start_month);
             m <= std::min(a.end_month, problem.start_month + months - 1); ++m)
          ++base_counts_[static_cast<std::size_t>(m - problem.start_month)];
    for (std::size_t k = 0; k < problem.catalog.size(); ++k) {
      if (!blue(static_cast<int>(k)))
        continue;
      const int min_len = problem.catalog[k].min_duration_months;
      for (int s = problem.start_month; s < problem.start_month + months; ++s)
        for (int e = s + min_len - 1; e < problem.start_month + months; ++e)
          candidates_.push_back({static_cast<int>(k), s, e});
    }
  }

  bool blue(int action) const {
    return problem_.catalog[static_cast<std::size_t>(action)].actor == Actor::Blue;
  }

  const std::vector<Activation> &candidates() const { return candidates_; }

  /// Feasible to hold `plan` with `extra` added (nothing else changes)?
  bool can_add(const std::vector<Activation> &plan, const Activation &extra,
               const Activation *skip = nullptr) const {
    if (extra.start_month < problem_.start_month ||
        extra.end_month >= problem_.start_month + problem_.horizon_months)
      return false;
    const auto &action = problem_.catalog[static_cast<std::size_t>(extra.action)];
    if (extra.months() < action.min_duration_months)
      return false;
    auto overlaps = [&](const Activation &a) {
      return a.action == extra.action && !(a.end_month < extra.start_month || a.start_month > extra.end_month);
    };
    double cost = extra.months() * action.cost;
    for (const auto &a : plan) {
      if (skip && a == *skip)
        continue;
      if (overlaps(a))
        return false;
      cost += a.months() * problem_.catalog[static_cast<std::size_t>(a.action)].cost;
    }
    for (const auto &a : problem_.constraints.committed)
      if (overlaps(a))
        return false;
    if (cost > problem_.constraints.budget * (1.0 + 1e-12))
      return false;
    for (int m = extra.start_month; m <= extra.end_month; ++m) {
      int count = base_counts_[static_cast<std::size_t>(m - problem_.start_month)] + 1;
      for (const auto &a : plan) {
        if (skip && a == *skip)
          continue;
        if (a.active_in(m))
          ++count;
      }
      if (count > problem_.constraints.concurrency_cap)
        return false;
    }
    return true;
  }

  double cost(const std::vector<Activation> &activations) {
    ++evaluations;
    ActionPlan plan{problem_.start_month, problem_.horizon_months, activations};
    return forecast_plan(problem_, plan).cost;
  }

  long evaluations = 0;

private:
  const PlanningProblem &problem_;
  std::vector<int> base_counts_;
  std::vector<Activation> candidates_;
};

struct Incumbent {
  std::vector<Activation> activations;
  double cost = 0.0;
};

bool improves(double candidate, double current, double tolerance) {
  return candidate < current - tolerance * std::max(1.0, std::abs(current));
}

void canonical(std::vector<Activation> &plan) { std::sort(plan.begin(), plan.end()); }

/// Best-improvement insertion until no single addition helps.
void greedy_insert(SearchSpace &space, Incumbent &inc, double tolerance) {
  for (;;) {
    std::optional<Incumbent> best;
    for (const auto &cand : space.candidates()) {
      if (!space.can_add(inc.activations, cand))
        continue;
      auto trial = inc.activations;
      trial.push_back(cand);
      canonical(trial);
      const double c = space.cost(trial);
      if (improves(c, best ? best->cost : inc.cost, tolerance))
        best = Incumbent{std::move(trial), c};
    }
    if (!best)
      return;
    inc = std::move(*best);
  }
}

/// First-improvement descent over add / remove / shift(+-1 month) moves, in a
/// seeded random order that is reshuffled after every accepted move.
void local_search(SearchSpace &space, Incumbent &inc, Rng &rng, double tolerance) {
  enum class Kind { Add, Remove, ShiftEarlier, ShiftLater };
  struct Move {
    Kind kind;
    std::size_t index; // candidate index for Add, plan index otherwise
  };
  std::vector<Move> moves;
  for (;;) {
    moves.clear();
    for (std::size_t i = 0; i < inc.activations.size(); ++i) {
      moves.push_back({Kind::Remove, i});
      moves.push_back({Kind::ShiftEarlier, i});
      moves.push_back({Kind::ShiftLater, i});
    }
    for (std::size_t c = 0; c < space.candidates().size(); ++c)
      moves.push_back({Kind::Add, c});
    std::shuffle(moves.begin(), moves.end(), rng);

    bool accepted = false;
    for (const auto &mv : moves) {
      std::vector<Activation> trial;
      switch (mv.kind) {
      case Kind::Add: {
        const auto &cand = space.candidates()[mv.index];
        if (!space.can_add(inc.activations, cand))
          continue;
        trial = inc.activations;
        trial.push_back(cand);
        break;
      }
      case Kind::Remove:
        trial = inc.activations;
        trial.erase(trial.begin() + static_cast<std::ptrdiff_t>(mv.index));
        break;
      case Kind::ShiftEarlier:
      case Kind::ShiftLater: {
        const auto &cur = inc.activations[mv.index];
        const int delta = mv.kind == Kind::ShiftLater ? 1 : -1;
        Activation moved{cur.action, cur.start_month + delta, cur.end_month + delta};
        if (!space.can_add(inc.activations, moved, &cur))
          continue;
        trial = inc.activations;
        trial[mv.index] = moved;
        break;
      }
      }
      canonical(trial);
      const double c = space.cost(trial);
      if (improves(c, inc.cost, tolerance)) {
        inc = Incumbent{std::move(trial), c};
        accepted = true;
        break;
      }
    }
    if (!accepted)
      return;
  }
}

} // namespace

OptimizationResult optimize_plan(const PlanningProblem &problem, std::uint64_t seed,
                                 const OptimizerOptions &options) {
  const ActionPlan empty = problem.empty_plan();
  check_plan(empty, problem.catalog, problem.constraints);

  SearchSpace space(problem);
  OptimizationResult result;
  result.empty_cost = space.cost({});
  Rng rng = make_rng({seed, 0x0b7ULL});
  const double tol = options.improvement_tolerance;

  std::optional<Incumbent> best;
  auto consider = [&](Incumbent inc) {
    if (!best || improves(inc.cost, best->cost, tol))
      best = std::move(inc);
  };

  if (options.warm_start) {
    ActionPlan warm = *options.warm_start;
    warm.start_month = problem.start_month;
    warm.horizon_months = problem.horizon_months;
    warm.canonicalize();
    Incumbent inc{warm.activations, 0.0};
    if (is_feasible(warm, problem.catalog, problem.constraints)) {
      inc.cost = space.cost(inc.activations);
    } else {
      inc = Incumbent{{}, result.empty_cost};
      greedy_insert(space, inc, tol);
    }
    local_search(space, inc, rng, tol);
    consider(std::move(inc));
  } else {
    const int restarts = std::max(1, options.restarts);
    for (int r = 0; r < restarts; ++r) {
      Incumbent inc{{}, result.empty_cost};
      if (r > 0) {
        // diversify: seed the restart with one random feasible activation
        const auto &cands = space.candidates();
        if (!cands.empty()) {
          std::uniform_int_distribution<std::size_t> pick(0, cands.size() - 1);
          for (int attempt = 0; attempt < 16; ++attempt) {
            const auto &cand = cands[pick(rng)];
            if (space.can_add(inc.activations, cand)) {
              inc.activations = {cand};
              inc.cost = space.cost(inc.activations);
              break;
            }
          }
        }
      }
      greedy_insert(space, inc, tol);
      local_search(space, inc, rng, tol);
      consider(std::move(inc));
    }
  }

  if (!best || best->cost > result.empty_cost)
    best = Incumbent{{}, result.empty_cost};
  result.plan = ActionPlan{problem.start_month, problem.horizon_months, best->activations};
  result.plan.canonicalize();
  result.cost = best->cost;
  result.evaluations = space.evaluations;
  return result;
}

} // namespace pmesii
