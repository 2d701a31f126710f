#include "pmesii/xgame.hpp"

#include "pmesii/hash.hpp"
#include "pmesii/plant.hpp"
#include "pmesii/rng.hpp"
#include "pmesii/scenario_io.hpp"

#include "json_fields.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <ostream>

namespace pmesii {

using namespace detail;

std::string_view to_string(CellRole role) {
  switch (role) {
  case CellRole::Blue:
    return "Blue";
  case CellRole::Red:
    return "Red";
  case CellRole::Green:
    return "Green";
  case CellRole::White:
    return "White";
  case CellRole::ModelingTeam:
    return "ModelingTeam";
  }
  return "Blue";
}

CellRole parse_role(std::string_view text) {
  for (auto r : {CellRole::Blue, CellRole::Red, CellRole::Green, CellRole::White,
                 CellRole::ModelingTeam})
    if (to_string(r) == text)
      return r;
  throw SchemaError("unknown cell role '" + std::string(text) + "'");
}

std::string_view to_string(BoundaryReason reason) {
  switch (reason) {
  case BoundaryReason::Crisis:
    return "CRISIS";
  case BoundaryReason::Threshold:
    return "THRESHOLD";
  case BoundaryReason::MaxLength:
    return "MAX_LENGTH";
  case BoundaryReason::GameEnd:
    return "GAME_END";
  case BoundaryReason::Override:
    return "OVERRIDE";
  }
  return "GAME_END";
}

std::string_view to_string(LedgerKind kind) {
  switch (kind) {
  case LedgerKind::DetailAccepted:
    return "DETAIL_ACCEPTED";
  case LedgerKind::PersuadedByTrace:
    return "PERSUADED_BY_TRACE";
  case LedgerKind::NovelEffect:
    return "NOVEL_EFFECT";
  case LedgerKind::AssumptionSurfaced:
    return "ASSUMPTION_SURFACED";
  case LedgerKind::Counterposition:
    return "COUNTERPOSITION";
  }
  return "DETAIL_ACCEPTED";
}

LedgerKind parse_ledger_kind(std::string_view text) {
  for (auto k : {LedgerKind::DetailAccepted, LedgerKind::PersuadedByTrace, LedgerKind::NovelEffect,
                 LedgerKind::AssumptionSurfaced, LedgerKind::Counterposition})
    if (to_string(k) == text)
      return k;
  throw SchemaError("unknown ledger kind '" + std::string(text) + "'");
}

Vector GreenPolicy::drift(Index n) const {
  Vector d = Vector::Zero(n);
  for (const auto &m : modifiers)
    d[m.variable] += m.delta;
  return d;
}

Assessment white_assess(const Trajectory &forecast, std::span<const WhiteAdjustment> adjustments,
                        const Scenario &scenario) {
  Assessment out{forecast, {}};
  for (const auto &adj : adjustments) {
    const int v = scenario.variable_index(adj.variable);
    if (adj.last_week < adj.first_week || !forecast.covers(adj.first_week) ||
        !forecast.covers(adj.last_week))
      throw RangeError("adjustment weeks " + std::to_string(adj.first_week) + ".." +
                       std::to_string(adj.last_week) + " outside the forecast");
    if (!std::isfinite(adj.value))
      throw RangeError("adjustment value must be finite");
    if (adj.mode == WhiteAdjustment::Mode::Replace && (adj.value < 0.0 || adj.value > 1.0))
      throw RangeError("replacement value for '" + adj.variable + "' outside [0, 1]");
    AppliedAdjustment applied{adj, false};
    for (int w = adj.first_week; w <= adj.last_week; ++w) {
      double &x = out.values.values(v, w - forecast.first_week);
      if (adj.mode == WhiteAdjustment::Mode::Replace) {
        x = adj.value;
      } else {
        const double raw = x + adj.value;
        x = std::clamp(raw, 0.0, 1.0);
        applied.clamped = applied.clamped || x != raw;
      }
    }
    out.applied.push_back(std::move(applied));
  }
  return out;
}

Boundary detect_phase_boundary(const Trajectory &assessment, int from_week,
                               const BoundaryPolicy &policy) {
  if (!assessment.covers(from_week))
    throw PreconditionError("boundary search must start inside the assessment");
  if (policy.max_phase_weeks < 1)
    throw PreconditionError("max phase length must be at least one week");
  const int cap = from_week + policy.max_phase_weeks;
  const int limit = std::min({cap, policy.game_end, assessment.last_week()});
  const auto base = assessment.at(from_week);
  for (int w = from_week + 1; w <= limit; ++w) {
    if (std::find(policy.crisis_weeks.begin(), policy.crisis_weeks.end(), w) !=
        policy.crisis_weeks.end())
      return {w, BoundaryReason::Crisis};
    const auto x = assessment.at(w);
    for (Index i = 0; i < x.size(); ++i)
      if (policy.weights.size() == x.size() && policy.weights[i] > 0.0 &&
          std::abs(x[i] - base[i]) >= policy.threshold)
        return {w, BoundaryReason::Threshold};
  }
  return {limit, limit == cap ? BoundaryReason::MaxLength : BoundaryReason::GameEnd};
}

json to_json(const LedgerEntry &entry) {
  json j{{"kind", to_string(entry.kind)},
         {"variables", entry.variables},
         {"rationale", entry.rationale},
         {"phase", entry.phase}};
  j["adjustment"] = entry.adjustment ? json(*entry.adjustment) : json(nullptr);
  return j;
}

LedgerEntry ledger_entry_from_json(const json &doc) {
  expect_object(doc, "entry", {"kind", "variables"}, {"rationale", "phase", "adjustment"});
  LedgerEntry e;
  e.kind = parse_ledger_kind(text(doc["kind"], "entry.kind"));
  const auto &vars = array(doc["variables"], "entry.variables");
  for (std::size_t i = 0; i < vars.size(); ++i)
    e.variables.push_back(text(vars[i], index_path("entry.variables", i)));
  if (doc.contains("rationale"))
    e.rationale = text(doc["rationale"], "entry.rationale");
  if (doc.contains("phase"))
    e.phase = static_cast<int>(integer(doc["phase"], "entry.phase"));
  if (doc.contains("adjustment") && !doc["adjustment"].is_null())
    e.adjustment = static_cast<int>(integer(doc["adjustment"], "entry.adjustment"));
  return e;
}

std::string ledger_entry_digest(const std::string &previous, const LedgerEntry &entry) {
  return sha256_hex(previous + to_json(entry).dump());
}

namespace {

const std::string kGenesis(64, '0');

} // namespace

std::size_t Ledger::append(LedgerEntry entry) {
  chain_.push_back(ledger_entry_digest(head(), entry));
  entries_.push_back(std::move(entry));
  return entries_.size() - 1;
}

std::vector<LedgerEntry> Ledger::by_kind(LedgerKind kind) const {
  std::vector<LedgerEntry> out;
  for (const auto &e : entries_)
    if (e.kind == kind)
      out.push_back(e);
  return out;
}

std::vector<LedgerEntry> Ledger::by_phase(int phase) const {
  std::vector<LedgerEntry> out;
  for (const auto &e : entries_)
    if (e.phase == phase)
      out.push_back(e);
  return out;
}

std::size_t Ledger::count(LedgerKind kind) const {
  return static_cast<std::size_t>(
      std::count_if(entries_.begin(), entries_.end(), [&](const auto &e) { return e.kind == kind; }));
}

const std::string &Ledger::head() const { return chain_.empty() ? kGenesis : chain_.back(); }

bool Ledger::verify() const {
  if (chain_.size() != entries_.size())
    return false;
  std::string prev = kGenesis;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    prev = ledger_entry_digest(prev, entries_[i]);
    if (prev != chain_[i])
      return false;
  }
  return true;
}

DependencyNode trace_dependencies(const Matrix &coupling, int variable, int depth) {
  const Index n = coupling.rows();
  if (variable < 0 || variable >= n)
    throw UnknownVariableError("no variable with index " + std::to_string(variable));
  if (depth < 1)
    throw PreconditionError("trace depth must be at least 1");
  DependencyNode root{variable, 0.0, {}};
  std::vector<bool> visited(static_cast<std::size_t>(n), false);
  visited[static_cast<std::size_t>(variable)] = true;
  std::deque<std::pair<DependencyNode *, int>> queue{{&root, 0}};
  while (!queue.empty()) {
    auto [node, level] = queue.front();
    queue.pop_front();
    if (level >= depth)
      continue;
    for (Index j = 0; j < n; ++j) {
      const double a = coupling(node->variable, j);
      if (a != 0.0 && !visited[static_cast<std::size_t>(j)]) {
        visited[static_cast<std::size_t>(j)] = true;
        node->children.push_back({static_cast<int>(j), a, {}});
      }
    }
    for (auto &child : node->children)
      queue.push_back({&child, level + 1});
  }
  return root;
}

DependencyNode trace_dependencies(const ModelParams &model, const Scenario &scenario,
                                  std::string_view variable, int depth) {
  return trace_dependencies(model.dynamics.coupling, scenario.variable_index(variable), depth);
}

std::vector<NovelEffect> novel_effects(const Trajectory &forecast, std::span<const int> watchlist,
                                       double threshold) {
  if (!(threshold > 0.0))
    throw PreconditionError("novel-effect threshold must be positive");
  std::vector<NovelEffect> out;
  if (forecast.weeks() == 0)
    return out;
  const Vector change = forecast.values.col(forecast.weeks() - 1) - forecast.values.col(0);
  for (Index i = 0; i < change.size(); ++i) {
    if (std::find(watchlist.begin(), watchlist.end(), static_cast<int>(i)) != watchlist.end())
      continue;
    if (std::abs(change[i]) >= threshold)
      out.push_back({static_cast<int>(i), change[i]});
  }
  std::stable_sort(out.begin(), out.end(), [](const auto &a, const auto &b) {
    return std::abs(a.change) > std::abs(b.change);
  });
  return out;
}

json to_json(const WhiteAdjustment &adj) {
  return json{{"variable", adj.variable},
              {"first_week", adj.first_week},
              {"last_week", adj.last_week},
              {"mode", adj.mode == WhiteAdjustment::Mode::Replace ? "replace" : "delta"},
              {"value", adj.value},
              {"rationale", adj.rationale}};
}

WhiteAdjustment adjustment_from_json(const json &doc) {
  expect_object(doc, "adjustment", {"variable", "first_week", "last_week", "mode", "value"},
                {"rationale"});
  WhiteAdjustment a;
  a.variable = text(doc["variable"], "adjustment.variable");
  a.first_week = static_cast<int>(integer(doc["first_week"], "adjustment.first_week"));
  a.last_week = static_cast<int>(integer(doc["last_week"], "adjustment.last_week"));
  const auto mode = text(doc["mode"], "adjustment.mode");
  if (mode == "replace")
    a.mode = WhiteAdjustment::Mode::Replace;
  else if (mode == "delta")
    a.mode = WhiteAdjustment::Mode::Delta;
  else
    throw SchemaError("adjustment.mode: expected 'replace' or 'delta'");
  a.value = number(doc["value"], "adjustment.value");
  if (doc.contains("rationale"))
    a.rationale = text(doc["rationale"], "adjustment.rationale");
  return a;
}

json to_json(const GreenPolicy &policy, const Scenario &scenario) {
  json mods = json::array();
  for (const auto &m : policy.modifiers)
    mods.push_back({{"variable", scenario.variables[static_cast<std::size_t>(m.variable)].id},
                    {"delta", m.delta}});
  return json{{"modifiers", mods}};
}

GreenPolicy green_from_json(const json &doc, const Scenario &scenario) {
  expect_object(doc, "policy", {"modifiers"});
  GreenPolicy g;
  const auto &mods = array(doc["modifiers"], "policy.modifiers");
  for (std::size_t i = 0; i < mods.size(); ++i) {
    const auto p = index_path("policy.modifiers", i);
    expect_object(mods[i], p, {"variable", "delta"});
    g.modifiers.push_back({scenario.variable_index(text(mods[i]["variable"], p + ".variable")),
                           number(mods[i]["delta"], p + ".delta")});
  }
  return g;
}

json to_json(const DependencyNode &node, const Scenario &scenario) {
  json children = json::array();
  for (const auto &c : node.children)
    children.push_back(to_json(c, scenario));
  return json{{"variable", scenario.variables[static_cast<std::size_t>(node.variable)].id},
              {"coupling", node.coupling},
              {"children", children}};
}

json to_json(const Trajectory &trajectory, const Scenario &scenario) {
  json series = json::object();
  for (Index i = 0; i < trajectory.values.rows(); ++i)
    series[scenario.variables[static_cast<std::size_t>(i)].id] =
        to_array(trajectory.values.row(i).transpose());
  return json{{"first_week", trajectory.first_week}, {"series", series}};
}

json to_json(const PhaseRecord &phase, const Scenario &scenario) {
  json adjustments = json::array();
  for (const auto &a : phase.assessment.applied) {
    json j = to_json(a.adjustment);
    j["clamped"] = a.clamped;
    adjustments.push_back(j);
  }
  return json{{"phase", phase.index},
              {"start_week", phase.start_week},
              {"end_week", phase.end_week},
              {"boundary_reason", to_string(phase.boundary_reason)},
              {"recalibrated", phase.recalibrated},
              {"forecast_error", phase.forecast_error},
              {"ledger_count", phase.ledger_count},
              {"blue", to_json(phase.plans.blue, scenario)},
              {"red", to_json(phase.plans.red, scenario)},
              {"green", to_json(phase.plans.green, scenario)},
              {"adjustments", adjustments},
              {"forecast", to_json(phase.forecast, scenario)}};
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::uint64_t kObservationStream = 0x0b5e7ULL;

Matrix append_col(const Matrix &m, const Vector &v) {
  Matrix out(v.size(), m.cols() + 1);
  if (m.cols() > 0)
    out.leftCols(m.cols()) = m;
  out.col(m.cols()) = v;
  return out;
}

} // namespace

struct XGameSession::Signal {
  std::mutex mutex;
  std::condition_variable changed;
};

XGameSession::XGameSession(Scenario scenario, std::uint64_t seed, XGameOptions options)
    : scenario_(std::move(scenario)), seed_(seed), options_(std::move(options)),
      signal_(std::make_unique<Signal>()) {
  if (options_.mismatch_level)
    scenario_.mismatch.level = *options_.mismatch_level;
  if (scenario_.xgame.game_weeks < 1)
    throw RangeError("game length must be at least one week");
  const Index n = scenario_.size();
  if (options_.shift && (options_.shift->row < 0 || options_.shift->row >= n ||
                         options_.shift->col < 0 || options_.shift->col >= n))
    throw RangeError("regime shift names a coupling entry outside the model");
  plant_ = scenario_.plant;
  model_ = derive_model(plant_.dynamics, scenario_.mismatch.level,
                        mix_seed(scenario_.mismatch.seed, seed_), scenario_.mismatch.prune_threshold);
  shocks_ = draw_shocks(plant_, 0, game_end(), seed_);
  truth_.first_week = 0;
  truth_.values = scenario_.initial_state().values;
  controls_.resize(static_cast<Index>(scenario_.actions.size()), 0);
  green_.resize(n, 0);
  estimates_.resize(n, 0);
  open_phase();
}

XGameSession::~XGameSession() = default;

void XGameSession::notify() { signal_->changed.notify_all(); }

void XGameSession::assess_now() {
  if (estimates_.cols() > week_)
    return;
  const auto reports =
      observe_all(truth_, scenario_.observation, week_, mix_seed(seed_, kObservationStream));
  const bool have_previous = estimates_.cols() > 0;
  EstimatedState fused = fuse(reports, scenario_.size(), have_previous ? &assessed_ : nullptr);
  if (fused.week < week_) {
    const Vector zero = Vector::Zero(scenario_.size());
    Vector x = fused.values;
    for (int w = fused.week; w < week_; ++w) {
      LinearDynamics<double> d = model_.dynamics;
      d.drift += green_.col(w);
      x = propagate(d, x, Vector(controls_.col(w)), zero);
    }
    fused.values = x;
    fused.week = week_;
  }
  assessed_ = std::move(fused);
  estimates_ = append_col(estimates_, assessed_.values);
}

void XGameSession::open_phase() {
  const int index = phase();
  if (options_.shift && options_.shift->phase == index)
    plant_.dynamics.coupling(options_.shift->row, options_.shift->col) += options_.shift->delta;
  recalibrated_now_ = false;
  if (recalibrate_next_) {
    auto history = transitions_of(truth_, controls_);
    for (std::size_t t = 0; t < history.size(); ++t)
      history[t].next -= green_.col(static_cast<Index>(t));
    try {
      model_ = recalibrate(model_, history);
    } catch (const InsufficientDataError &) {
    }
    recalibrated_now_ = true;
    recalibrate_next_ = false;
  }
  assess_now();
  blue_.reset();
  red_.reset();
  green_policy_.reset();
  forecast_.reset();
  assessment_.reset();
  adjustments_.clear();
}

std::vector<CellRole> XGameSession::pending_roles() const {
  std::vector<CellRole> out;
  if (finished())
    return out;
  if (!blue_)
    out.push_back(CellRole::Blue);
  if (!red_)
    out.push_back(CellRole::Red);
  if (!green_policy_)
    out.push_back(CellRole::Green);
  return out;
}

CellPlans XGameSession::plans() const {
  if (!blue_ || !red_ || !green_policy_)
    throw PreconditionError("cell inputs pending for phase " + std::to_string(phase()));
  return CellPlans{*blue_, *red_, *green_policy_};
}

namespace {

void check_turn(const XGameSession &s, int phase) {
  if (s.finished())
    throw OutOfTurnError("the game has finished");
  if (phase != s.phase())
    throw OutOfTurnError("phase " + std::to_string(phase) + " is not open (open phase is " +
                         std::to_string(s.phase()) + ")");
}

void check_cell_plan(const ActionPlan &plan, const Scenario &scenario, int month, Actor actor,
                     const PlanConstraints &constraints) {
  const std::string cell(to_string(actor));
  if (plan.start_month != month)
    throw ConstraintError(cell + ": plan must start at month " + std::to_string(month));
  for (const auto &a : plan.activations) {
    if (a.action < 0 || a.action >= static_cast<int>(scenario.actions.size()))
      throw ConstraintError(cell + ": unknown action index " + std::to_string(a.action));
    if (scenario.actions[static_cast<std::size_t>(a.action)].actor != actor)
      throw ConstraintError(cell + ": action '" + scenario.actions[static_cast<std::size_t>(a.action)].id +
                            "' is not a " + cell + " action");
  }
  try {
    check_plan(plan, scenario.actions, constraints);
  } catch (const ConstraintError &e) {
    throw ConstraintError(cell + ": " + e.what());
  }
}

} // namespace

void XGameSession::submit_blue(int phase, const ActionPlan &plan) {
  std::lock_guard lock(signal_->mutex);
  check_turn(*this, phase);
  check_cell_plan(plan, scenario_, month_of_week(week_), Actor::Blue,
                  PlanConstraints{scenario_.control.budget, scenario_.control.concurrency_cap, {}});
  blue_ = plan;
  blue_->canonicalize();
  forecast_.reset();
  assessment_.reset();
  adjustments_.clear();
  events_.push_back({{"type", "plan"}, {"role", "Blue"}, {"phase", phase},
                     {"plan", to_json(*blue_, scenario_)}});
  notify();
}

void XGameSession::submit_red(int phase, const ActionPlan &plan) {
  std::lock_guard lock(signal_->mutex);
  check_turn(*this, phase);
  check_cell_plan(plan, scenario_, month_of_week(week_), Actor::Red, PlanConstraints{});
  red_ = plan;
  red_->canonicalize();
  forecast_.reset();
  assessment_.reset();
  adjustments_.clear();
  events_.push_back({{"type", "plan"}, {"role", "Red"}, {"phase", phase},
                     {"plan", to_json(*red_, scenario_)}});
  notify();
}

void XGameSession::submit_green(int phase, const GreenPolicy &policy) {
  std::lock_guard lock(signal_->mutex);
  check_turn(*this, phase);
  std::vector<int> seen;
  for (const auto &m : policy.modifiers) {
    if (m.variable < 0 || m.variable >= static_cast<int>(scenario_.size()))
      throw UnknownVariableError("Green: no variable with index " + std::to_string(m.variable));
    const auto &var = scenario_.variables[static_cast<std::size_t>(m.variable)];
    if (var.category != Category::Social)
      throw ConstraintError("Green: '" + var.id + "' is not a Social variable");
    if (!std::isfinite(m.delta) || std::abs(m.delta) > scenario_.xgame.green_bound)
      throw ConstraintError("Green: modifier on '" + var.id + "' exceeds the bound of " +
                            format_number(scenario_.xgame.green_bound) + " per week");
    if (std::find(seen.begin(), seen.end(), m.variable) != seen.end())
      throw ConstraintError("Green: '" + var.id + "' modified twice");
    seen.push_back(m.variable);
  }
  green_policy_ = policy;
  forecast_.reset();
  assessment_.reset();
  adjustments_.clear();
  events_.push_back({{"type", "plan"}, {"role", "Green"}, {"phase", phase},
                     {"policy", to_json(policy, scenario_)}});
  notify();
}

void XGameSession::wait_for_inputs(std::chrono::milliseconds deadline) {
  std::unique_lock lock(signal_->mutex);
  if (!signal_->changed.wait_for(lock, deadline, [&] { return pending_roles().empty(); })) {
    std::string missing;
    for (auto r : pending_roles())
      missing += (missing.empty() ? "" : ", ") + std::string(to_string(r));
    throw TimeoutError("no input from " + missing + " before the deadline");
  }
}

const Trajectory &XGameSession::forecast() {
  if (finished())
    throw OutOfTurnError("the game has finished");
  if (!pending_roles().empty())
    throw PreconditionError("cell inputs pending for phase " + std::to_string(phase()));
  if (!forecast_)
    forecast_ = model_forecast(model_, scenario_, assessed_.state(),
                               CellPlans{*blue_, *red_, *green_policy_}, game_end());
  return *forecast_;
}

const Assessment &XGameSession::adjust(std::span<const WhiteAdjustment> adjustments) {
  const Trajectory &f = forecast();
  std::vector<WhiteAdjustment> all = adjustments_;
  all.insert(all.end(), adjustments.begin(), adjustments.end());
  Assessment next = white_assess(f, all, scenario_);
  adjustments_ = std::move(all);
  assessment_ = std::move(next);
  json list = json::array();
  for (const auto &a : adjustments)
    list.push_back(to_json(a));
  events_.push_back({{"type", "adjust"}, {"phase", phase()}, {"adjustments", list}});
  return *assessment_;
}

const Assessment &XGameSession::assessment() {
  if (!assessment_)
    assessment_ = white_assess(forecast(), adjustments_, scenario_);
  return *assessment_;
}

BoundaryPolicy XGameSession::boundary_policy() const {
  BoundaryPolicy p;
  p.threshold = scenario_.xgame.boundary_threshold;
  p.max_phase_weeks = scenario_.xgame.max_phase_weeks;
  p.game_end = game_end();
  for (const auto &c : plant_.crises)
    p.crisis_weeks.push_back(c.week);
  p.weights = scenario_.objective.weights;
  return p;
}

Boundary XGameSession::proposed_boundary() {
  return detect_phase_boundary(assessment().values, week_, boundary_policy());
}

Vector XGameSession::controls_at(int week) const {
  Vector u = Vector::Zero(static_cast<Index>(scenario_.actions.size()));
  const int month = month_of_week(week);
  for (const auto *plan : {&*blue_, &*red_})
    for (const auto &a : plan->activations)
      if (a.active_in(month))
        u[a.action] = 1.0;
  return u;
}

const PhaseRecord &XGameSession::advance(std::optional<int> boundary_week) {
  if (finished())
    throw OutOfTurnError("the game has finished");
  assessment();
  Boundary b = proposed_boundary();
  if (boundary_week) {
    if (*boundary_week <= week_ || *boundary_week > game_end())
      throw RangeError("boundary week " + std::to_string(*boundary_week) + " outside (" +
                       std::to_string(week_) + ", " + std::to_string(game_end()) + "]");
    b = {*boundary_week, BoundaryReason::Override};
  }
  events_.push_back({{"type", "advance"},
                     {"phase", phase()},
                     {"boundary_week", boundary_week ? json(*boundary_week) : json(nullptr)}});

  PhaseRecord rec;
  rec.index = phase();
  rec.start_week = week_;
  rec.end_week = b.week;
  rec.plans = CellPlans{*blue_, *red_, *green_policy_};
  rec.assessed_start = assessed_.state();
  rec.forecast = *forecast_;
  rec.assessment = *assessment_;
  rec.boundary_reason = b.reason;
  rec.recalibrated = recalibrated_now_;

  LinearDynamics<double> dyn = plant_.dynamics;
  const Vector green = green_policy_->drift(scenario_.size());
  dyn.drift += green;
  const Index start_col = truth_.values.cols();
  truth_.values.conservativeResize(Eigen::NoChange, start_col + (b.week - week_));
  for (int w = week_; w < b.week; ++w) {
    const Vector u = controls_at(w);
    truth_.values.col(w + 1) = propagate(dyn, Vector(truth_.values.col(w)), u, Vector(shocks_.col(w)));
    controls_ = append_col(controls_, u);
    green_ = append_col(green_, green);
    week_ = w + 1;
    assess_now();
  }

  const int span = rec.end_week - rec.start_week + 1;
  const Trajectory predicted{rec.start_week, rec.forecast.values.leftCols(span)};
  const Trajectory realized{rec.start_week, truth_.values.middleCols(rec.start_week, span)};
  rec.forecast_error = forecast_error(predicted, realized, scenario_.objective.weights);
  recalibrate_next_ = rec.forecast_error > scenario_.xgame.recalibration_threshold;
  rec.ledger_count = ledger_.by_phase(rec.index).size();
  phases_.push_back(std::move(rec));
  if (!finished())
    open_phase();
  return phases_.back();
}

std::size_t XGameSession::record(LedgerEntry entry) {
  if (finished())
    throw OutOfTurnError("the game has finished");
  if (entry.phase != phase())
    throw OutOfTurnError("ledger entries are recorded against the open phase " +
                         std::to_string(phase()));
  if (entry.variables.empty())
    throw SchemaError("entry.variables: at least one subject variable required");
  for (const auto &v : entry.variables)
    scenario_.variable_index(v);
  if (entry.adjustment &&
      (*entry.adjustment < 0 || *entry.adjustment >= static_cast<int>(adjustments_.size())))
    throw RangeError("entry.adjustment: no adjustment " + std::to_string(*entry.adjustment) +
                     " in this phase");
  events_.push_back({{"type", "ledger"}, {"entry", to_json(entry)}});
  return ledger_.append(std::move(entry));
}

void XGameSession::apply(const json &event) {
  expect_object(event, "event", {"type"},
                {"role", "phase", "plan", "policy", "adjustments", "boundary_week", "entry"});
  const auto type = text(event["type"], "event.type");
  if (type == "plan") {
    const int p = static_cast<int>(integer(event.at("phase"), "event.phase"));
    const auto role = parse_role(text(event.at("role"), "event.role"));
    if (role == CellRole::Blue)
      submit_blue(p, plan_from_json(event.at("plan"), scenario_));
    else if (role == CellRole::Red)
      submit_red(p, plan_from_json(event.at("plan"), scenario_));
    else if (role == CellRole::Green)
      submit_green(p, green_from_json(event.at("policy"), scenario_));
    else
      throw SchemaError("event.role: only Blue, Red and Green submit plans");
  } else if (type == "adjust") {
    const int p = static_cast<int>(integer(event.at("phase"), "event.phase"));
    if (p != phase())
      throw OutOfTurnError("adjustment for a closed phase");
    std::vector<WhiteAdjustment> adj;
    for (const auto &a : array(event.at("adjustments"), "event.adjustments"))
      adj.push_back(adjustment_from_json(a));
    adjust(adj);
  } else if (type == "advance") {
    const int p = static_cast<int>(integer(event.at("phase"), "event.phase"));
    if (p != phase())
      throw OutOfTurnError("advance for a closed phase");
    std::optional<int> week;
    if (event.contains("boundary_week") && !event["boundary_week"].is_null())
      week = static_cast<int>(integer(event["boundary_week"], "event.boundary_week"));
    advance(week);
  } else if (type == "ledger") {
    record(ledger_entry_from_json(event.at("entry")));
  } else {
    throw SchemaError("event.type: unknown event '" + type + "'");
  }
}

std::unique_ptr<XGameSession> XGameSession::replay(const Scenario &scenario, std::uint64_t seed,
                                                   const XGameOptions &options,
                                                   std::span<const json> events) {
  auto s = std::make_unique<XGameSession>(scenario, seed, options);
  for (const auto &e : events)
    s->apply(e);
  return s;
}

RunLog XGameSession::run_log() const {
  RunLog log;
  for (const auto &v : scenario_.variables)
    log.variable_ids.push_back(v.id);
  for (const auto &a : scenario_.actions)
    log.action_ids.push_back(a.id);
  const Index n = scenario_.size();
  auto phase_of = [&](int w) {
    for (const auto &p : phases_)
      if (w >= p.start_week && w < p.end_week)
        return p.index;
    return phase();
  };
  for (int w = 0; w <= week_; ++w) {
    WeekRecord rec;
    rec.week = w;
    rec.truth = truth_.at(w);
    rec.estimate = estimates_.col(w);
    rec.episode = phase_of(w);
    const Trajectory *f = nullptr;
    if (rec.episode < static_cast<int>(phases_.size()))
      f = &phases_[static_cast<std::size_t>(rec.episode)].forecast;
    else if (forecast_)
      f = &*forecast_;
    rec.predicted = f && f->covers(w) ? Vector(f->at(w)) : Vector::Constant(n, std::nan(""));
    if (w < week_)
      for (Index k = 0; k < controls_.rows(); ++k)
        if (controls_(k, w) != 0.0)
          rec.active.push_back(static_cast<int>(k));
    for (const auto &p : phases_) {
      if (p.start_week != w)
        continue;
      rec.replan = true;
      rec.reason = ReplanReason::Periodic;
      if (p.index > 0) {
        const auto why = phases_[static_cast<std::size_t>(p.index - 1)].boundary_reason;
        rec.reason = why == BoundaryReason::Crisis      ? ReplanReason::Crisis
                     : why == BoundaryReason::Threshold ? ReplanReason::Deviation
                                                        : ReplanReason::Periodic;
      }
    }
    log.weeks.push_back(std::move(rec));
  }
  for (const auto &p : phases_)
    log.episodes.push_back({p.index, p.start_week,
                            log.weeks[static_cast<std::size_t>(p.start_week)].reason,
                            p.plans.blue, 0.0});

  // executed Blue work as maximal runs of active months
  const int months = (week_ + kWeeksPerMonth - 1) / kWeeksPerMonth;
  for (Index k = 0; k < controls_.rows(); ++k) {
    if (scenario_.actions[static_cast<std::size_t>(k)].actor != Actor::Blue)
      continue;
    int run_start = -1;
    for (int m = 0; m <= months; ++m) {
      bool on = false;
      for (int w = first_week_of_month(m); m < months && w < std::min(week_, first_week_of_month(m + 1)); ++w)
        on = on || controls_(k, w) != 0.0;
      if (on && run_start < 0)
        run_start = m;
      if (!on && run_start >= 0) {
        log.executed.push_back({static_cast<int>(k), run_start, m - 1});
        run_start = -1;
      }
    }
  }
  std::sort(log.executed.begin(), log.executed.end());
  log.realized_cost = state_cost(truth_, scenario_.objective) +
                      scenario_.objective.action_cost_weight *
                          activation_cost(log.executed, scenario_.actions);
  return log;
}

std::string XGameSession::digest() const {
  json phases = json::array();
  for (const auto &p : phases_) {
    json j = to_json(p, scenario_);
    j["forecast"] = to_rows(p.forecast.values);
    j["assessment"] = to_rows(p.assessment.values.values);
    j["assessed_start"] = to_array(p.assessed_start.values);
    phases.push_back(j);
  }
  json doc{{"week", week_},
           {"truth", to_rows(truth_.values)},
           {"estimates", to_rows(estimates_)},
           {"phases", phases},
           {"ledger", ledger_.head()},
           {"coupling", to_rows(model_.dynamics.coupling)},
           {"effects", to_rows(model_.dynamics.effects)},
           {"drift", to_array(model_.dynamics.drift)},
           {"events", events_}};
  return sha256_hex(doc.dump());
}

// ---------------------------------------------------------------------------

Trajectory model_forecast(const ModelParams &model, const Scenario &scenario, const State &start,
                          const CellPlans &plans, int game_end) {
  ModelParams m = model;
  m.dynamics.drift += plans.green.drift(scenario.size());
  return forecast(m, start, plans.blue, plans.red.activations, scenario.actions, scenario.objective,
                  std::max(0, game_end - start.week))
      .path;
}

Trajectory model_forecast_phase(const XGameSession &session, const CellPlans &plans) {
  return model_forecast(session.model(), session.scenario(), session.assessed_state().state(), plans,
                        session.game_end());
}

CellPlans collect_cell_plans(XGameSession &session, int phase, const CellPolicies &policies,
                             std::chrono::milliseconds deadline) {
  if (session.finished() || phase != session.phase())
    throw OutOfTurnError("phase " + std::to_string(phase) + " is not open");
  if (policies.red)
    session.submit_red(phase, policies.red(session));
  if (policies.green)
    session.submit_green(phase, policies.green(session));
  if (policies.blue)
    session.submit_blue(phase, policies.blue(session));
  if (!session.pending_roles().empty())
    session.wait_for_inputs(deadline);
  return session.plans();
}

namespace {

/// Red's scripted pattern replayed from the start of the window.
ActionPlan scripted_red(const Scenario &scenario, int month, int horizon) {
  ActionPlan plan{month, horizon, {}};
  for (std::size_t k = 0; k < scenario.actions.size(); ++k) {
    const auto &a = scenario.actions[k];
    if (a.actor != Actor::Red)
      continue;
    for (const auto &r : a.schedule) {
      const int s = month + r.start;
      const int e = std::min(month + r.end, month + horizon - 1);
      if (s <= e)
        plan.activations.push_back({static_cast<int>(k), s, e});
    }
  }
  plan.canonicalize();
  return plan;
}

int plan_horizon(const XGameSession &s) {
  const int month = month_of_week(s.week());
  const int game_months = (s.game_end() + kWeeksPerMonth - 1) / kWeeksPerMonth;
  return std::max(1, std::min(s.scenario().xgame.blue_plan_months, game_months - month));
}

std::vector<int> blue_targets(const Scenario &scenario) {
  std::vector<int> out;
  for (const auto &a : scenario.actions)
    if (a.actor == Actor::Blue)
      for (Index i = 0; i < a.effect.size(); ++i)
        if (a.effect[i] != 0.0 && std::find(out.begin(), out.end(), i) == out.end())
          out.push_back(static_cast<int>(i));
  std::sort(out.begin(), out.end());
  return out;
}

} // namespace

CellPolicies scripted_cells() {
  CellPolicies p;
  p.red = [](const XGameSession &s) {
    return scripted_red(s.scenario(), month_of_week(s.week()), plan_horizon(s));
  };
  p.green = [](const XGameSession &s) {
    const auto &sc = s.scenario();
    const Vector &x = s.assessed_state().values;
    double gap = 0.0, weight = 0.0;
    for (Index i = 0; i < sc.size(); ++i) {
      if (sc.variables[static_cast<std::size_t>(i)].category == Category::Social)
        continue;
      gap += sc.objective.weights[i] * std::abs(x[i] - sc.objective.goal[i]);
      weight += sc.objective.weights[i];
    }
    const double pressure = weight > 0.0 ? gap / weight : 0.0;
    const double delta = std::clamp(0.004 * (0.25 - pressure), -sc.xgame.green_bound,
                                    sc.xgame.green_bound);
    GreenPolicy g;
    for (Index i = 0; i < sc.size(); ++i)
      if (sc.variables[static_cast<std::size_t>(i)].category == Category::Social)
        g.modifiers.push_back({static_cast<int>(i), delta});
    return g;
  };
  p.blue = [](const XGameSession &s) {
    const auto &sc = s.scenario();
    PlanningProblem prob;
    prob.model = s.model();
    prob.start = s.assessed_state().state();
    prob.objective = sc.objective;
    prob.catalog = sc.actions;
    prob.start_month = month_of_week(s.week());
    prob.horizon_months = plan_horizon(s);
    prob.constraints.budget = sc.control.budget;
    prob.constraints.concurrency_cap = sc.control.concurrency_cap;
    prob.exogenous = scripted_red(sc, prob.start_month, prob.horizon_months).activations;
    prob.end_week = std::min(s.game_end(), first_week_of_month(prob.start_month + prob.horizon_months));
    return optimize_plan(prob, mix_seed(s.seed(), 0xb10e0000ULL + static_cast<std::uint64_t>(s.phase())),
                         s.options().optimizer)
        .plan;
  };
  p.ledger = [](const XGameSession &s) {
    std::vector<LedgerEntry> out;
    const auto &sc = s.scenario();
    auto &session = const_cast<XGameSession &>(s);
    const auto watch = blue_targets(sc);
    for (const auto &e : novel_effects(session.forecast(), watch, 0.15))
      out.push_back({LedgerKind::NovelEffect,
                     {sc.variables[static_cast<std::size_t>(e.variable)].id},
                     "forecast moves an unwatched variable by " + format_number(e.change),
                     s.phase(),
                     std::nullopt});
    if (!watch.empty() && session.assessment().applied.empty())
      out.push_back({LedgerKind::DetailAccepted,
                     {sc.variables[static_cast<std::size_t>(watch.front())].id},
                     "assessment follows the model forecast",
                     s.phase(),
                     std::nullopt});
    return out;
  };
  return p;
}

XGameResult run_xgame(const Scenario &scenario, std::uint64_t seed, const CellPolicies &policies,
                      XGameOptions options) {
  XGameSession s(scenario, seed, std::move(options));
  while (!s.finished()) {
    const int p = s.phase();
    collect_cell_plans(s, p, policies);
    s.forecast();
    if (policies.white) {
      const auto adjustments = policies.white(s);
      if (!adjustments.empty())
        s.adjust(adjustments);
    }
    if (policies.ledger)
      for (auto &e : policies.ledger(s))
        s.record(std::move(e));
    s.advance();
  }
  return XGameResult{s.phases(), s.run_log(), s.ledger().entries(), s.events(), s.digest()};
}

void write_phases_csv(std::ostream &out, std::span<const PhaseRecord> phases) {
  out << "phase,start_week,end_week,boundary_reason,recalibrated,ledger_count\n";
  for (const auto &p : phases)
    out << p.index << ',' << p.start_week << ',' << p.end_week << ',' << to_string(p.boundary_reason)
        << ',' << (p.recalibrated ? 1 : 0) << ',' << p.ledger_count << '\n';
}

} // namespace pmesii
