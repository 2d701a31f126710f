#include "pmesii/domain.hpp"

#include <algorithm>
#include <array>
#include <map>

namespace pmesii {

namespace {

constexpr std::array<std::string_view, 6> kCategoryNames = {
    "Political", "Military", "Economic", "Social", "Infrastructure", "Information"};

} // namespace

std::string_view to_string(Category category) {
  return kCategoryNames[static_cast<std::size_t>(category)];
}

Category parse_category(std::string_view text) {
  for (std::size_t i = 0; i < kCategoryNames.size(); ++i)
    if (kCategoryNames[i] == text)
      return static_cast<Category>(i);
  throw SchemaError("unknown PMESII category '" + std::string(text) + "'");
}

std::string_view to_string(Actor actor) { return actor == Actor::Blue ? "Blue" : "Red"; }

Actor parse_actor(std::string_view text) {
  if (text == "Blue")
    return Actor::Blue;
  if (text == "Red")
    return Actor::Red;
  throw SchemaError("unknown actor '" + std::string(text) + "'");
}

void ActionPlan::canonicalize() { std::sort(activations.begin(), activations.end()); }

const SourceSpec *ChannelSpec::find(std::string_view id) const {
  auto it = std::find_if(sources.begin(), sources.end(),
                         [&](const SourceSpec &s) { return s.id == id; });
  return it == sources.end() ? nullptr : &*it;
}

State Scenario::initial_state() const {
  State state;
  state.week = 0;
  state.values.resize(size());
  for (Index i = 0; i < size(); ++i)
    state.values[i] = variables[static_cast<std::size_t>(i)].initial;
  return state;
}

int Scenario::variable_index(std::string_view id) const {
  for (std::size_t i = 0; i < variables.size(); ++i)
    if (variables[i].id == id)
      return static_cast<int>(i);
  throw UnknownVariableError("unknown variable '" + std::string(id) + "'");
}

int Scenario::action_index(std::string_view id) const {
  for (std::size_t i = 0; i < actions.size(); ++i)
    if (actions[i].id == id)
      return static_cast<int>(i);
  throw ConstraintError("unknown action '" + std::string(id) + "'");
}

std::vector<int> Scenario::blue_actions() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < actions.size(); ++i)
    if (actions[i].actor == Actor::Blue)
      out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> horizon_schedule(int horizon_months, int replan_period_months) {
  if (horizon_months <= 0 || replan_period_months <= 0)
    throw ScheduleError("horizon and replan period must be positive");
  if (horizon_months % replan_period_months != 0)
    throw ScheduleError("horizon " + std::to_string(horizon_months) +
                        " is not divisible by replan period " +
                        std::to_string(replan_period_months));
  std::vector<int> starts;
  for (int m = 0; m < horizon_months; m += replan_period_months)
    starts.push_back(m);
  return starts;
}

double activation_cost(std::span<const Activation> activations, std::span<const Action> catalog) {
  double total = 0.0;
  for (const auto &a : activations) {
    const auto &action = catalog[static_cast<std::size_t>(a.action)];
    if (action.actor == Actor::Blue)
      total += a.months() * action.cost;
  }
  return total;
}

void check_plan(const ActionPlan &plan, std::span<const Action> catalog,
                const PlanConstraints &constraints) {
  if (plan.horizon_months <= 0)
    throw ConstraintError("plan horizon must be positive");
  // per action id: occupied months, to reject self-overlap
  std::map<int, std::vector<MonthRange>> per_action;
  for (const auto &a : plan.activations) {
    if (a.action < 0 || static_cast<std::size_t>(a.action) >= catalog.size())
      throw ConstraintError("activation references unknown action index " +
                            std::to_string(a.action));
    const auto &action = catalog[static_cast<std::size_t>(a.action)];
    if (a.end_month < a.start_month)
      throw ConstraintError("activation of '" + action.id + "' ends before it starts");
    if (a.start_month < plan.start_month || a.end_month >= plan.end_month())
      throw ConstraintError("activation of '" + action.id + "' months [" +
                            std::to_string(a.start_month) + "," + std::to_string(a.end_month) +
                            "] outside plan window [" + std::to_string(plan.start_month) + "," +
                            std::to_string(plan.end_month()) + ")");
    if (a.months() < action.min_duration_months)
      throw ConstraintError("activation of '" + action.id + "' shorter than minimum duration " +
                            std::to_string(action.min_duration_months));
    auto &ranges = per_action[a.action];
    for (const auto &r : ranges)
      if (!(a.end_month < r.start || a.start_month > r.end))
        throw ConstraintError("overlapping activations of '" + action.id + "'");
    ranges.push_back({a.start_month, a.end_month});
  }
  for (const auto &a : constraints.committed)
    for (const auto &r : per_action[a.action])
      if (!(a.end_month < r.start || a.start_month > r.end))
        throw ConstraintError("activation overlaps committed activation of '" +
                              catalog[static_cast<std::size_t>(a.action)].id + "'");

  const double cost = activation_cost(plan.activations, catalog);
  if (cost > constraints.budget * (1.0 + 1e-12))
    throw ConstraintError("plan cost " + std::to_string(cost) + " exceeds budget " +
                          std::to_string(constraints.budget));

  for (int month = plan.start_month; month < plan.end_month(); ++month) {
    int active = 0;
    auto count = [&](const Activation &a) {
      if (a.active_in(month) && catalog[static_cast<std::size_t>(a.action)].actor == Actor::Blue)
        ++active;
    };
    std::for_each(plan.activations.begin(), plan.activations.end(), count);
    std::for_each(constraints.committed.begin(), constraints.committed.end(), count);
    if (active > constraints.concurrency_cap)
      throw ConstraintError("month " + std::to_string(month) + " has " + std::to_string(active) +
                            " concurrent Blue actions, cap is " +
                            std::to_string(constraints.concurrency_cap));
  }
}

bool is_feasible(const ActionPlan &plan, std::span<const Action> catalog,
                 const PlanConstraints &constraints) {
  try {
    check_plan(plan, catalog, constraints);
    return true;
  } catch (const ConstraintError &) {
    return false;
  }
}

std::vector<Activation> scripted_activations(std::span<const Action> catalog, int first_month,
                                             int end_month) {
  std::vector<Activation> out;
  for (std::size_t k = 0; k < catalog.size(); ++k)
    for (const auto &r : catalog[k].schedule) {
      const int s = std::max(r.start, first_month);
      const int e = std::min(r.end, end_month - 1);
      if (s <= e)
        out.push_back({static_cast<int>(k), s, e});
    }
  return out;
}

Matrix expand_controls(std::span<const Activation> activations, Index action_count, int first_week,
                       int weeks) {
  Matrix u = Matrix::Zero(action_count, weeks);
  for (const auto &a : activations) {
    const int from = std::max(first_week_of_month(a.start_month), first_week);
    const int to = std::min(first_week_of_month(a.end_month + 1), first_week + weeks);
    for (int w = from; w < to; ++w)
      u(a.action, w - first_week) = 1.0;
  }
  return u;
}

} // namespace pmesii
