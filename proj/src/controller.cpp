#include "pmesii/controller.hpp"

#include "pmesii/plant.hpp"
#include "pmesii/rng.hpp"

#include <algorithm>
#include <charconv>
#include <ostream>

namespace pmesii {

std::string_view to_string(ReplanReason reason) {
  switch (reason) {
  case ReplanReason::Periodic:
    return "PERIODIC";
  case ReplanReason::Deviation:
    return "DEVIATION";
  case ReplanReason::Crisis:
    return "CRISIS";
  case ReplanReason::None:
    break;
  }
  return "NONE";
}

ReplanDecision should_replan(int week, int last_replan_week, double deviation, bool crisis_pending,
                             const ReplanPolicy &policy) {
  if (crisis_pending && policy.crisis_triggers)
    return {true, ReplanReason::Crisis};
  if (deviation > policy.deviation_tau)
    return {true, ReplanReason::Deviation};
  if (week - last_replan_week >= kWeeksPerMonth * policy.period_months)
    return {true, ReplanReason::Periodic};
  return {false, ReplanReason::None};
}

Trajectory RunLog::truth() const {
  Trajectory t;
  if (weeks.empty())
    return t;
  t.first_week = weeks.front().week;
  t.values.resize(weeks.front().truth.size(), static_cast<Index>(weeks.size()));
  for (std::size_t i = 0; i < weeks.size(); ++i)
    t.values.col(static_cast<Index>(i)) = weeks[i].truth;
  return t;
}

namespace {

constexpr std::uint64_t kObservationStream = 0x0b5e7ULL;

} // namespace

RecedingHorizonRun::RecedingHorizonRun(const Scenario &scenario, std::uint64_t seed,
                                       RunSettings settings)
    : scenario_(scenario), seed_(seed), settings_(std::move(settings)) {
  if (settings_.replan_period_months) {
    horizon_schedule(scenario_.control.horizon_months, *settings_.replan_period_months);
    scenario_.control.replan_period_months = *settings_.replan_period_months;
  }
  if (settings_.mismatch_level)
    scenario_.mismatch.level = *settings_.mismatch_level;
  if (settings_.observation_noise_scale != 1.0)
    for (auto &src : scenario_.observation.sources)
      src.noise_std *= settings_.observation_noise_scale;

  policy_ = {scenario_.control.replan_period_months, scenario_.control.deviation_tau,
             scenario_.control.crisis_triggers};
  model_ = derive_model(scenario_.plant.dynamics, scenario_.mismatch.level,
                        mix_seed(scenario_.mismatch.seed, seed), scenario_.mismatch.prune_threshold);
  end_week_ = scenario_.horizon_weeks();
  shocks_ = draw_shocks(scenario_.plant, 0, end_week_, seed);
  scripted_ = scripted_activations(scenario_.actions, 0, scenario_.control.horizon_months);

  const State initial = scenario_.initial_state();
  truth_.first_week = 0;
  truth_.values.resize(scenario_.size(), 1);
  truth_.values.col(0) = initial.values;

  for (const auto &v : scenario_.variables)
    log_.variable_ids.push_back(v.id);
  for (const auto &a : scenario_.actions)
    log_.action_ids.push_back(a.id);
}

void RecedingHorizonRun::ensure_observed() {
  if (estimate_ && estimate_->week == week_)
    return;
  const auto reports = observe_all(truth_, scenario_.observation, week_,
                                   mix_seed(seed_, kObservationStream));
  EstimatedState fused = fuse(reports, scenario_.size(), previous_estimate_ ? &*previous_estimate_ : nullptr);
  if (fused.week < week_) {
    // stale reports: carry the fused picture forward under the executed controls
    Matrix u(scenario_.actions.size(), week_ - fused.week);
    for (int w = fused.week; w < week_; ++w)
      u.col(w - fused.week) = controls_at(w);
    const Trajectory ahead = rollout(model_.dynamics, fused.state(), u);
    fused.values = ahead.values.col(ahead.weeks() - 1);
    fused.week = week_;
  }
  estimate_ = fused;
  previous_estimate_ = fused;
}

const EstimatedState &RecedingHorizonRun::estimate() {
  ensure_observed();
  return *estimate_;
}

Vector RecedingHorizonRun::controls_at(int week) const {
  Vector u = Vector::Zero(static_cast<Index>(scenario_.actions.size()));
  const int month = month_of_week(week);
  for (const auto &a : in_force_)
    if (a.active_in(month))
      u[a.action] = 1.0;
  for (const auto &a : scripted_)
    if (a.active_in(month))
      u[a.action] = 1.0;
  return u;
}

std::vector<Activation> RecedingHorizonRun::committed_at(int month) const {
  std::vector<Activation> out;
  for (const auto &a : in_force_)
    if (a.start_month < month && a.end_month >= month)
      out.push_back(a);
  return out;
}

double RecedingHorizonRun::committed_cost(int month) const {
  std::vector<Activation> before;
  for (const auto &a : in_force_)
    if (a.start_month < month)
      before.push_back(a);
  return activation_cost(before, scenario_.actions);
}

PlanningProblem RecedingHorizonRun::problem(int window_months) const {
  const int month = month_of_week(week_);
  PlanningProblem p;
  p.model = model_;
  p.start = estimate_ ? estimate_->state() : State{week_, truth_.at(week_)};
  p.objective = scenario_.objective;
  p.catalog = scenario_.actions;
  p.start_month = month;
  p.horizon_months = window_months;
  p.constraints.budget = std::max(0.0, scenario_.control.budget - committed_cost(month));
  p.constraints.concurrency_cap = scenario_.control.concurrency_cap;
  p.constraints.committed = committed_at(month);
  p.exogenous = p.constraints.committed;
  for (const auto &a : scripted_activations(scenario_.actions, month, month + window_months))
    p.exogenous.push_back(a);
  return p;
}

PlanningProblem RecedingHorizonRun::problem() const {
  const int month = month_of_week(week_);
  const int window = scenario_.control.window == WindowMode::Rolling
                         ? scenario_.control.horizon_months
                         : scenario_.control.horizon_months - month;
  return problem(std::max(1, window));
}

const EpisodeRecord &RecedingHorizonRun::install(ActionPlan plan, double predicted_cost,
                                                 ReplanReason reason, ForecastTrajectory forecast) {
  const int month = month_of_week(week_);
  std::vector<Activation> kept;
  for (const auto &a : in_force_)
    if (a.start_month < month)
      kept.push_back(a);
  for (const auto &a : plan.activations)
    kept.push_back(a);
  std::sort(kept.begin(), kept.end());
  in_force_ = std::move(kept);
  forecast_ = std::move(forecast.path);

  EpisodeRecord rec;
  rec.index = static_cast<int>(log_.episodes.size());
  rec.start_week = week_;
  rec.reason = reason;
  rec.plan = std::move(plan);
  rec.predicted_cost = predicted_cost;
  log_.episodes.push_back(std::move(rec));
  last_replan_week_ = week_;
  crisis_pending_ = false;
  replanned_this_week_ = true;
  pending_reason_ = reason;
  return log_.episodes.back();
}

const EpisodeRecord &RecedingHorizonRun::replan(ReplanReason reason) {
  ensure_observed();
  const PlanningProblem p = problem();
  OptimizerOptions opts = settings_.optimizer;
  if (!log_.episodes.empty()) {
    ActionPlan warm{p.start_month, p.horizon_months, {}};
    for (const auto &a : in_force_)
      if (a.start_month >= p.start_month && a.end_month < p.start_month + p.horizon_months)
        warm.activations.push_back(a);
    opts.warm_start = warm;
  }
  const auto result =
      optimize_plan(p, mix_seed(seed_, static_cast<std::uint64_t>(week_) + 0x9a11ULL), opts);
  ++log_.optimize_calls;
  return install(result.plan, result.cost, reason, forecast_plan(p, result.plan));
}

const EpisodeRecord &RecedingHorizonRun::adopt(const ActionPlan &plan, ReplanReason reason) {
  ensure_observed();
  PlanningProblem p = problem(plan.horizon_months);
  if (plan.start_month != p.start_month)
    throw ConstraintError("plan must start at the current month " + std::to_string(p.start_month));
  const double cost = evaluate_plan(p, plan);
  return install(plan, cost, reason, forecast_plan(p, plan));
}

void RecedingHorizonRun::run_until(int until, bool allow_replans) {
  until = std::min(until, end_week_);
  while (week_ < until) {
    ensure_observed();
    for (const auto &c : scenario_.plant.crises)
      if (c.week == week_)
        crisis_pending_ = true;

    if (allow_replans && !replanned_this_week_ && week_ % kWeeksPerMonth == 0) {
      if (log_.episodes.empty()) {
        replan(ReplanReason::Periodic);
      } else if (settings_.mode == LoopMode::Closed) {
        double deviation = 0.0;
        if (forecast_.covers(week_))
          deviation = weighted_distance(estimate_->values, forecast_.at(week_),
                                        scenario_.objective.weights);
        const auto decision =
            should_replan(week_, last_replan_week_, deviation, crisis_pending_, policy_);
        if (decision.replan)
          replan(decision.reason);
      }
    }
    if (log_.episodes.empty())
      throw PreconditionError("no plan adopted before executing week " + std::to_string(week_));

    WeekRecord rec;
    rec.week = week_;
    rec.truth = truth_.at(week_);
    rec.estimate = estimate_->values;
    rec.predicted = forecast_.covers(week_) ? Vector(forecast_.at(week_))
                                            : Vector::Constant(scenario_.size(), std::nan(""));
    const Vector u = controls_at(week_);
    for (Index k = 0; k < u.size(); ++k)
      if (u[k] != 0.0)
        rec.active.push_back(static_cast<int>(k));
    rec.replan = replanned_this_week_;
    rec.reason = replanned_this_week_ ? pending_reason_ : ReplanReason::None;
    rec.episode = static_cast<int>(log_.episodes.size()) - 1;
    log_.weeks.push_back(std::move(rec));

    const Vector shock = shocks_.col(week_);
    const Vector next = propagate(scenario_.plant.dynamics, truth_.at(week_), u, shock);
    truth_.values.conservativeResize(Eigen::NoChange, truth_.values.cols() + 1);
    truth_.values.col(truth_.values.cols() - 1) = next;
    ++week_;
    replanned_this_week_ = false;
  }
}

RunLog RecedingHorizonRun::finish() {
  run_until(end_week_);
  ensure_observed();
  WeekRecord rec;
  rec.week = week_;
  rec.truth = truth_.at(week_);
  rec.estimate = estimate_->values;
  rec.predicted = forecast_.covers(week_) ? Vector(forecast_.at(week_))
                                          : Vector::Constant(scenario_.size(), std::nan(""));
  rec.episode = static_cast<int>(log_.episodes.size()) - 1;
  log_.weeks.push_back(std::move(rec));

  const int horizon = scenario_.control.horizon_months;
  log_.executed.clear();
  for (const auto &a : in_force_)
    if (a.start_month < horizon)
      log_.executed.push_back({a.action, a.start_month, std::min(a.end_month, horizon - 1)});
  log_.realized_cost = state_cost(truth_, scenario_.objective) +
                       scenario_.objective.action_cost_weight *
                           activation_cost(log_.executed, scenario_.actions);
  return log_;
}

RunLog run_closed_loop(const Scenario &scenario, std::uint64_t seed, RunSettings settings) {
  settings.mode = LoopMode::Closed;
  RecedingHorizonRun run(scenario, seed, std::move(settings));
  return run.finish();
}

RunLog run_open_loop(const Scenario &scenario, std::uint64_t seed, RunSettings settings) {
  settings.mode = LoopMode::Open;
  RecedingHorizonRun run(scenario, seed, std::move(settings));
  return run.finish();
}

std::string format_number(double value) {
  if (std::isnan(value))
    return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

void write_run_csv(std::ostream &out, const RunLog &log) {
  out << "week,var_id,true_value,est_value,pred_value,replan_flag,replan_reason,episode,active_actions\n";
  for (const auto &w : log.weeks) {
    std::string active;
    for (std::size_t i = 0; i < w.active.size(); ++i) {
      if (i)
        active += ';';
      active += log.action_ids[static_cast<std::size_t>(w.active[i])];
    }
    for (std::size_t i = 0; i < log.variable_ids.size(); ++i) {
      const auto k = static_cast<Index>(i);
      out << w.week << ',' << log.variable_ids[i] << ',' << format_number(w.truth[k]) << ','
          << format_number(w.estimate[k]) << ',' << format_number(w.predicted[k]) << ','
          << (w.replan ? 1 : 0) << ',' << to_string(w.reason) << ',' << w.episode << ',' << active
          << '\n';
    }
  }
}

} // namespace pmesii
