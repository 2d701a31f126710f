#include "pmesii/nextstate.hpp"

#include "pmesii/hash.hpp"
#include "pmesii/plant.hpp"
#include "pmesii/rng.hpp"
#include "pmesii/scenario_io.hpp"

#include "json_fields.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace pmesii {

using namespace detail;

double term_margin(const MilestoneTerm &term, const Vector &values) {
  const double x = values[term.variable];
  return term.comparison == Comparison::AtLeast ? x - term.bound : term.bound - x;
}

double milestone_margin(const MilestonePredicate &milestone, const Vector &values) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto &t : milestone.terms)
    m = std::min(m, term_margin(t, values));
  return m;
}

ProgressReport assess_progress(const Vector &estimate, const EndStatePath &path) {
  ProgressReport r;
  double total = 0.0, met = 0.0;
  for (std::size_t k = 0; k < path.milestones.size(); ++k) {
    const auto &ms = path.milestones[k];
    const double margin = milestone_margin(ms, estimate);
    r.milestones.push_back({ms.id, margin, margin >= 0.0});
    total += static_cast<double>(k + 1);
    if (margin >= 0.0)
      met += static_cast<double>(k + 1);
  }
  r.progress = total > 0.0 ? met / total : 1.0;
  return r;
}

const MilestonePredicate *next_milestone(const EndStatePath &path, int month) {
  for (const auto &m : path.milestones)
    if (m.target_month > month)
      return &m;
  return nullptr;
}

std::vector<StrategyAlternative> plan_alternatives(const Scenario &scenario, const State &start,
                                                   const MilestonePredicate &milestone,
                                                   std::span<const AssumptionSet> assumptions,
                                                   std::uint64_t seed,
                                                   std::vector<std::string> *warnings,
                                                   const AlternativeOptions &options) {
  if (assumptions.size() < 2)
    throw PreconditionError("at least two assumption sets are needed, got " +
                            std::to_string(assumptions.size()));
  const int month = month_of_week(start.week);
  const int window = milestone.target_month - month;
  if (window < 1)
    throw PreconditionError("milestone '" + milestone.id + "' targets month " +
                            std::to_string(milestone.target_month) + ", not after month " +
                            std::to_string(month));
  if (warnings && (window < 3 || window > 5))
    warnings->push_back("next-state window for '" + milestone.id + "' is " +
                        std::to_string(window) + " months (expected 3 to 5)");

  std::vector<StrategyAlternative> out;
  for (std::size_t j = 0; j < assumptions.size(); ++j) {
    const auto &a = assumptions[j];
    PlanningProblem p;
    p.model = derive_model(scenario.plant.dynamics, a.mismatch_level, a.mismatch_seed,
                           scenario.mismatch.prune_threshold);
    p.start = start;
    p.objective = scenario.objective;
    if (a.weights) {
      if (a.weights->size() != scenario.size())
        throw DimensionError("assumption '" + a.id + "': weights length mismatch");
      p.objective.weights = *a.weights;
    }
    std::vector<bool> emphasized(static_cast<std::size_t>(scenario.size()), false);
    for (const auto &t : milestone.terms)
      emphasized[static_cast<std::size_t>(t.variable)] = true;
    for (const auto &m : options.held)
      for (const auto &t : m.terms)
        emphasized[static_cast<std::size_t>(t.variable)] = true;
    for (Index i = 0; i < scenario.size(); ++i)
      if (emphasized[static_cast<std::size_t>(i)])
        p.objective.weights[i] *= options.milestone_emphasis;
    p.catalog = scenario.actions;
    p.start_month = month;
    p.horizon_months = window;
    p.constraints.budget = options.budget.value_or(scenario.control.budget);
    p.constraints.concurrency_cap = scenario.control.concurrency_cap;
    p.exogenous = scripted_activations(scenario.actions, month, milestone.target_month);
    const auto result = optimize_plan(p, seed, options.optimizer);
    StrategyAlternative alt;
    alt.team_id = static_cast<int>(j);
    alt.assumption_id = a.id;
    alt.plan = result.plan;
    alt.predicted = forecast_plan(p, result.plan).path;
    alt.predicted_cost = state_cost(alt.predicted, scenario.objective) +
                         scenario.objective.action_cost_weight *
                             activation_cost(result.plan.activations, scenario.actions);
    out.push_back(std::move(alt));
  }
  return out;
}

bool PlantFamily::deterministic() const {
  return perturbation == 0.0 && (!scenario || scenario->plant.shock_std.isZero(0.0));
}

double shortfall_risk(std::span<const double> margins) {
  if (margins.empty())
    return 0.0;
  std::vector<double> shortfall;
  shortfall.reserve(margins.size());
  for (double m : margins)
    shortfall.push_back(std::max(0.0, -m));
  std::sort(shortfall.begin(), shortfall.end());
  const auto rank = static_cast<std::size_t>(std::ceil(0.9 * static_cast<double>(shortfall.size())));
  return shortfall[std::max<std::size_t>(rank, 1) - 1];
}

RiskFeasibility assess_risk_feasibility(const StrategyAlternative &alternative,
                                        const MilestonePredicate &milestone, const State &start,
                                        const PlantFamily &family, int trials, std::uint64_t seed) {
  if (trials < 1)
    throw PreconditionError("at least one trial is needed");
  if (!family.scenario)
    throw PreconditionError("plant family has no scenario");
  const Scenario &sc = *family.scenario;
  const int month = month_of_week(start.week);
  const int target_week = first_week_of_month(milestone.target_month);
  const int weeks = std::max(0, target_week - start.week);

  std::vector<Activation> all = alternative.plan.activations;
  for (const auto &a : scripted_activations(sc.actions, month, milestone.target_month))
    all.push_back(a);
  const Matrix controls =
      expand_controls(all, static_cast<Index>(sc.actions.size()), start.week, weeks);

  RiskFeasibility out;
  out.margins.reserve(static_cast<std::size_t>(trials));
  int met = 0;
  for (int t = 0; t < trials; ++t) {
    const std::uint64_t draw = mix_seed(seed, static_cast<std::uint64_t>(t));
    const auto plant = derive_model(sc.plant.dynamics, family.perturbation, draw, 0.0);
    const Matrix shocks = draw_shocks(sc.plant, start.week, weeks, draw);
    const Trajectory path = simulate_with_shocks(plant.dynamics, start, controls, shocks);
    const double margin = milestone_margin(milestone, path.values.col(path.weeks() - 1));
    out.margins.push_back(margin);
    if (margin >= 0.0)
      ++met;
  }
  out.feasibility = static_cast<double>(met) / trials;
  out.risk = shortfall_risk(out.margins);
  return out;
}

double selection_score(const StrategyAlternative &a, const SelectionWeights &w) {
  return w.cost * a.predicted_cost + w.infeasibility * (1.0 - a.feasibility) + w.risk * a.risk;
}

std::size_t select_strategy(std::span<const StrategyAlternative> alternatives,
                            const SelectionWeights &weights) {
  if (alternatives.empty())
    throw EmptyInputError("no alternatives to select from");
  if (weights.cost < 0.0 || weights.infeasibility < 0.0 || weights.risk < 0.0 ||
      weights.cost + weights.infeasibility + weights.risk <= 0.0)
    throw PreconditionError("selection weights must be non-negative and not all zero");
  auto dominates = [](const StrategyAlternative &a, const StrategyAlternative &b) {
    return a.predicted_cost < b.predicted_cost && a.feasibility > b.feasibility && a.risk < b.risk;
  };
  double best = std::numeric_limits<double>::infinity();
  for (const auto &a : alternatives)
    best = std::min(best, selection_score(a, weights));
  std::optional<std::size_t> chosen;
  for (std::size_t i = 0; i < alternatives.size(); ++i) {
    if (selection_score(alternatives[i], weights) != best)
      continue;
    bool dominated = false;
    for (const auto &other : alternatives)
      dominated = dominated || dominates(other, alternatives[i]);
    if (dominated)
      continue;
    if (!chosen || alternatives[i].team_id < alternatives[*chosen].team_id)
      chosen = i;
  }
  if (!chosen) // every tied alternative dominated: fall back to the plain tie-break
    for (std::size_t i = 0; i < alternatives.size(); ++i)
      if (selection_score(alternatives[i], weights) == best &&
          (!chosen || alternatives[i].team_id < alternatives[*chosen].team_id))
        chosen = i;
  return *chosen;
}

namespace {

json directive_content(const Directive &d, const Scenario &scenario) {
  return json{{"team_id", d.team_id},
              {"assumption_id", d.assumption_id},
              {"milestone_id", d.milestone_id},
              {"start_month", d.start_month},
              {"target_month", d.target_month},
              {"plan", to_json(d.plan, scenario)}};
}

} // namespace

std::string directive_hash(const Directive &d, const Scenario &scenario) {
  return sha256_hex(directive_content(d, scenario).dump());
}

json to_json(const Directive &d, const Scenario &scenario) {
  json j = directive_content(d, scenario);
  j["hash"] = d.hash;
  return j;
}

Directive directive_from_json(const json &doc, const Scenario &scenario) {
  expect_object(doc, "directive",
                {"team_id", "assumption_id", "milestone_id", "start_month", "target_month", "plan",
                 "hash"});
  Directive d;
  d.team_id = static_cast<int>(integer(doc["team_id"], "directive.team_id"));
  d.assumption_id = text(doc["assumption_id"], "directive.assumption_id");
  d.milestone_id = text(doc["milestone_id"], "directive.milestone_id");
  d.start_month = static_cast<int>(integer(doc["start_month"], "directive.start_month"));
  d.target_month = static_cast<int>(integer(doc["target_month"], "directive.target_month"));
  d.plan = plan_from_json(doc["plan"], scenario);
  d.hash = text(doc["hash"], "directive.hash");
  if (directive_hash(d, scenario) != d.hash)
    throw CorruptLogError("directive hash does not match its content");
  return d;
}

const Directive &DirectiveLog::issue(const StrategyAlternative &chosen,
                                     const MilestonePredicate &milestone, int month) {
  if (const Directive *open = active(month))
    throw ConstraintError("directive for '" + open->milestone_id + "' is open until month " +
                          std::to_string(open->target_month));
  if (chosen.plan.start_month != month ||
      chosen.plan.end_month() != milestone.target_month)
    throw ConstraintError("plan must cover months " + std::to_string(month) + " to " +
                          std::to_string(milestone.target_month));
  for (const auto &a : chosen.plan.activations)
    if (scenario_->actions[static_cast<std::size_t>(a.action)].actor != Actor::Blue)
      throw ConstraintError("directive schedules a non-Blue action");
  check_plan(chosen.plan, scenario_->actions,
             PlanConstraints{scenario_->control.budget, scenario_->control.concurrency_cap, {}});
  Directive d;
  d.team_id = chosen.team_id;
  d.assumption_id = chosen.assumption_id;
  d.milestone_id = milestone.id;
  d.start_month = month;
  d.target_month = milestone.target_month;
  d.plan = chosen.plan;
  d.plan.canonicalize();
  d.hash = directive_hash(d, *scenario_);
  directives_.push_back(std::move(d));
  return directives_.back();
}

const Directive *DirectiveLog::active(int month) const {
  for (const auto &d : directives_)
    if (month >= d.start_month && month < d.target_month)
      return &d;
  return nullptr;
}

namespace {

Scenario path_scenario(const Scenario &scenario) {
  if (!scenario.nextstate || scenario.nextstate->path.milestones.empty())
    throw PreconditionError("scenario has no next-state milestones");
  Scenario sc = scenario;
  sc.control.horizon_months = scenario.nextstate->path.milestones.back().target_month;
  return sc;
}

} // namespace

NextStatePlanner::NextStatePlanner(const Scenario &scenario, std::uint64_t seed,
                                   NextStateOptions options)
    : scenario_(path_scenario(scenario)), seed_(seed), options_(std::move(options)),
      run_(scenario_, seed), directives_(scenario_) {}

bool NextStatePlanner::finished() const {
  const auto &ms = scenario_.nextstate->path.milestones;
  const int month = month_of_week(run_.week());
  for (std::size_t k = next_; k < ms.size(); ++k)
    if (ms[k].target_month > month)
      return false;
  return true;
}

ProgressReport NextStatePlanner::progress() {
  return assess_progress(run_.estimate().values, scenario_.nextstate->path);
}

const WindowRecord &NextStatePlanner::step() {
  if (finished())
    throw PreconditionError("every milestone window has been executed");
  const auto &ns = *scenario_.nextstate;
  const int month = month_of_week(run_.week());
  while (ns.path.milestones[next_].target_month <= month)
    ++next_;
  const std::size_t k = next_++;
  const auto &milestone = ns.path.milestones[k];
  const EstimatedState est = run_.estimate();

  WindowRecord w;
  w.milestone_id = milestone.id;
  w.start_month = month;
  w.target_month = milestone.target_month;
  w.progress_before = assess_progress(est.values, ns.path);

  AlternativeOptions alt_opts = options_.alternatives;
  alt_opts.budget = std::max(0.0, scenario_.control.budget - spent_);
  alt_opts.held.assign(ns.path.milestones.begin(), ns.path.milestones.begin() + static_cast<std::ptrdiff_t>(k));
  w.alternatives = plan_alternatives(scenario_, est.state(), milestone, ns.assumptions,
                                     mix_seed(seed_, k), &warnings_, alt_opts);
  const PlantFamily family{&scenario_, ns.plant_perturbation};
  const std::uint64_t trial_seed = mix_seed(seed_, 0x7e570000ULL + k);
  for (auto &alt : w.alternatives) {
    const auto rf =
        assess_risk_feasibility(alt, milestone, est.state(), family, options_.trials, trial_seed);
    alt.feasibility = rf.feasibility;
    alt.risk = rf.risk;
  }
  w.selected = select_strategy(w.alternatives, options_.weights);
  w.directive = directives_.issue(w.alternatives[w.selected], milestone, month);
  spent_ += activation_cost(w.directive.plan.activations, scenario_.actions);
  run_.adopt(w.directive.plan, ReplanReason::Periodic);
  run_.run_until(first_week_of_month(milestone.target_month), false);
  w.progress_after = assess_progress(run_.estimate().values, ns.path);
  windows_.push_back(std::move(w));
  return windows_.back();
}

NextStateResult NextStatePlanner::finish() {
  while (!finished())
    step();
  NextStateResult r;
  r.windows = windows_;
  r.warnings = warnings_;
  r.log = run_.finish();
  return r;
}

NextStateResult run_nextstate(const Scenario &scenario, std::uint64_t seed,
                              const NextStateOptions &options) {
  NextStatePlanner planner(scenario, seed, options);
  return planner.finish();
}

void write_alternatives_csv(std::ostream &out, std::span<const StrategyAlternative> alternatives,
                            std::size_t selected) {
  out << "team_id,assumption_id,predicted_cost,feasibility,risk,selected\n";
  for (std::size_t i = 0; i < alternatives.size(); ++i) {
    const auto &a = alternatives[i];
    out << a.team_id << ',' << a.assumption_id << ',' << format_number(a.predicted_cost) << ','
        << format_number(a.feasibility) << ',' << format_number(a.risk) << ','
        << (i == selected ? 1 : 0) << '\n';
  }
}

} // namespace pmesii
