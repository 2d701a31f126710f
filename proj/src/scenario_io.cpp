#include "pmesii/scenario_io.hpp"

#include "pmesii/hash.hpp"
#include "json_fields.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

namespace pmesii {

extern const char *const kDemoScenarioJson;

namespace {

using namespace detail;

std::vector<MonthRange> parse_schedule(const json &j, const std::string &path) {
  std::vector<MonthRange> out;
  array(j, path);
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto p = index_path(path, i);
    array(j[i], p);
    if (j[i].size() != 2)
      throw SchemaError(p + ": expected [start_month, end_month]");
    MonthRange r{static_cast<int>(integer(j[i][0], p + "[0]")),
                 static_cast<int>(integer(j[i][1], p + "[1]"))};
    if (r.start < 0 || r.end < r.start)
      throw RangeError(p + ": invalid month range");
    out.push_back(r);
  }
  return out;
}

Comparison parse_comparison(const json &j, const std::string &path) {
  const auto op = text(j, path);
  if (op == ">=")
    return Comparison::AtLeast;
  if (op == "<=")
    return Comparison::AtMost;
  throw SchemaError(path + ": expected \">=\" or \"<=\"");
}

} // namespace

Scenario validate_scenario(const json &doc, std::vector<std::string> *warnings) {
  expect_object(doc, "",
                {"variables", "plant", "mismatch", "observation", "actions", "objective", "control",
                 "crises"},
                {"name", "xgame", "nextstate"});
  Scenario s;
  if (doc.contains("name"))
    s.name = text(doc["name"], "name");

  // variables
  const auto &vars = array(doc["variables"], "variables");
  if (vars.empty())
    throw SchemaError("variables: at least one variable required");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < vars.size(); ++i) {
    const auto p = index_path("variables", i);
    expect_object(vars[i], p, {"id", "category", "label", "initial"});
    Variable v;
    v.id = text(vars[i]["id"], p + ".id");
    if (v.id.empty() || !ids.insert(v.id).second)
      throw SchemaError(p + ".id: empty or duplicate id '" + v.id + "'");
    v.category = parse_category(text(vars[i]["category"], p + ".category"));
    v.label = text(vars[i]["label"], p + ".label");
    v.initial = number(vars[i]["initial"], p + ".initial");
    check_range(v.initial, 0.0, 1.0, p + ".initial");
    s.variables.push_back(std::move(v));
  }
  const Index n = s.size();

  // actions (their effect vectors form the columns of the plant's effect matrix)
  const auto &acts = array(doc["actions"], "actions");
  std::set<std::string> action_ids;
  for (std::size_t i = 0; i < acts.size(); ++i) {
    const auto p = index_path("actions", i);
    expect_object(acts[i], p, {"id", "actor", "effect", "cost", "min_duration_months"},
                  {"description", "schedule"});
    Action a;
    a.id = text(acts[i]["id"], p + ".id");
    if (a.id.empty() || !action_ids.insert(a.id).second)
      throw SchemaError(p + ".id: empty or duplicate id '" + a.id + "'");
    a.actor = parse_actor(text(acts[i]["actor"], p + ".actor"));
    a.effect = vector_of(acts[i]["effect"], n, p + ".effect");
    a.cost = number(acts[i]["cost"], p + ".cost");
    if (a.cost < 0)
      throw RangeError(p + ".cost: must be non-negative");
    a.min_duration_months = static_cast<int>(integer(acts[i]["min_duration_months"], p + ".min_duration_months"));
    if (a.min_duration_months < 1)
      throw RangeError(p + ".min_duration_months: must be at least 1");
    if (acts[i].contains("description"))
      a.description = text(acts[i]["description"], p + ".description");
    if (acts[i].contains("schedule"))
      a.schedule = parse_schedule(acts[i]["schedule"], p + ".schedule");
    s.actions.push_back(std::move(a));
  }

  // plant
  const auto &plant = doc["plant"];
  expect_object(plant, "plant", {"coupling", "drift", "shock_std"});
  s.plant.dynamics.coupling = square_of(plant["coupling"], n, "plant.coupling");
  s.plant.dynamics.drift = vector_of(plant["drift"], n, "plant.drift");
  s.plant.shock_std = vector_of(plant["shock_std"], n, "plant.shock_std");
  check_range(s.plant.shock_std, 0.0, 1.0, "plant.shock_std");
  s.plant.dynamics.effects.resize(n, static_cast<Index>(s.actions.size()));
  for (std::size_t k = 0; k < s.actions.size(); ++k)
    s.plant.dynamics.effects.col(static_cast<Index>(k)) = s.actions[k].effect;
  const double row_norm = coupling_row_norm(s.plant.dynamics);
  if (row_norm > 0.5)
    throw RangeError("plant.coupling: max absolute row sum " + std::to_string(row_norm) +
                     " exceeds 0.5");
  if (row_norm > 0.2 && warnings)
    warnings->push_back("plant.coupling: max absolute row sum " + std::to_string(row_norm) +
                        " above recommended 0.2");

  // crises
  const auto &crises = array(doc["crises"], "crises");
  std::set<std::string> crisis_ids;
  for (std::size_t i = 0; i < crises.size(); ++i) {
    const auto p = index_path("crises", i);
    expect_object(crises[i], p, {"id", "week", "shock"});
    Crisis c;
    c.id = text(crises[i]["id"], p + ".id");
    if (c.id.empty() || !crisis_ids.insert(c.id).second)
      throw SchemaError(p + ".id: empty or duplicate id '" + c.id + "'");
    c.week = static_cast<int>(integer(crises[i]["week"], p + ".week"));
    if (c.week < 1)
      throw RangeError(p + ".week: must be at least 1");
    c.shock = vector_of(crises[i]["shock"], n, p + ".shock");
    check_range(c.shock, -1.0, 1.0, p + ".shock");
    s.plant.crises.push_back(std::move(c));
  }
  std::stable_sort(s.plant.crises.begin(), s.plant.crises.end(),
                   [](const Crisis &a, const Crisis &b) { return a.week < b.week; });

  // mismatch
  const auto &mm = doc["mismatch"];
  expect_object(mm, "mismatch", {"level", "seed", "prune_threshold"});
  s.mismatch.level = number(mm["level"], "mismatch.level");
  check_range(s.mismatch.level, 0.0, 1.0, "mismatch.level");
  const auto seed = integer(mm["seed"], "mismatch.seed");
  if (seed < 0)
    throw RangeError("mismatch.seed: must be non-negative");
  s.mismatch.seed = static_cast<std::uint64_t>(seed);
  s.mismatch.prune_threshold = number(mm["prune_threshold"], "mismatch.prune_threshold");
  if (s.mismatch.prune_threshold < 0)
    throw RangeError("mismatch.prune_threshold: must be non-negative");

  // observation channel
  const auto &obs = doc["observation"];
  expect_object(obs, "observation", {"sources"});
  const auto &sources = array(obs["sources"], "observation.sources");
  if (sources.empty())
    throw SchemaError("observation.sources: at least one source required");
  std::set<std::string> source_ids;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const auto p = index_path("observation.sources", i);
    expect_object(sources[i], p,
                  {"id", "bias", "noise_std", "delay_weeks", "missing_prob", "reliability"});
    SourceSpec src;
    src.id = text(sources[i]["id"], p + ".id");
    if (src.id.empty() || !source_ids.insert(src.id).second)
      throw SchemaError(p + ".id: empty or duplicate id '" + src.id + "'");
    src.bias = number(sources[i]["bias"], p + ".bias");
    check_range(src.bias, -1.0, 1.0, p + ".bias");
    src.noise_std = number(sources[i]["noise_std"], p + ".noise_std");
    check_range(src.noise_std, 0.0, 1.0, p + ".noise_std");
    src.delay_weeks = static_cast<int>(integer(sources[i]["delay_weeks"], p + ".delay_weeks"));
    if (src.delay_weeks < 0)
      throw RangeError(p + ".delay_weeks: must be non-negative");
    src.missing_prob = number(sources[i]["missing_prob"], p + ".missing_prob");
    check_range(src.missing_prob, 0.0, 1.0, p + ".missing_prob");
    src.reliability = number(sources[i]["reliability"], p + ".reliability");
    if (!(src.reliability > 0.0 && src.reliability <= 1.0))
      throw RangeError(p + ".reliability: must lie in (0, 1]");
    s.observation.sources.push_back(std::move(src));
  }

  // objective
  const auto &obj = doc["objective"];
  expect_object(obj, "objective", {"goal", "weights", "action_cost_weight", "discount"});
  s.objective.goal = vector_of(obj["goal"], n, "objective.goal");
  check_range(s.objective.goal, 0.0, 1.0, "objective.goal");
  s.objective.weights = vector_of(obj["weights"], n, "objective.weights");
  if ((s.objective.weights.array() < 0.0).any())
    throw RangeError("objective.weights: must be non-negative");
  if (!(s.objective.weights.array() > 0.0).any())
    throw RangeError("objective.weights: at least one weight must be positive");
  s.objective.action_cost_weight = number(obj["action_cost_weight"], "objective.action_cost_weight");
  if (s.objective.action_cost_weight < 0)
    throw RangeError("objective.action_cost_weight: must be non-negative");
  s.objective.discount = number(obj["discount"], "objective.discount");
  if (!(s.objective.discount > 0.0 && s.objective.discount <= 1.0))
    throw RangeError("objective.discount: must lie in (0, 1]");

  // control
  const auto &ctl = doc["control"];
  expect_object(ctl, "control",
                {"horizon_months", "replan_period_months", "deviation_tau", "budget",
                 "concurrency_cap"},
                {"crisis_triggers", "window"});
  s.control.horizon_months = static_cast<int>(integer(ctl["horizon_months"], "control.horizon_months"));
  s.control.replan_period_months =
      static_cast<int>(integer(ctl["replan_period_months"], "control.replan_period_months"));
  if (s.control.horizon_months < 1 || s.control.replan_period_months < 1)
    throw RangeError("control: horizon and replan period must be at least 1 month");
  horizon_schedule(s.control.horizon_months, s.control.replan_period_months);
  if (ctl["deviation_tau"].is_null()) {
    s.control.deviation_tau = std::numeric_limits<double>::infinity();
  } else {
    s.control.deviation_tau = number(ctl["deviation_tau"], "control.deviation_tau");
    if (s.control.deviation_tau < 0)
      throw RangeError("control.deviation_tau: must be non-negative");
  }
  if (ctl["budget"].is_null()) {
    s.control.budget = std::numeric_limits<double>::infinity();
  } else {
    s.control.budget = number(ctl["budget"], "control.budget");
    if (s.control.budget < 0)
      throw RangeError("control.budget: must be non-negative");
  }
  s.control.concurrency_cap = static_cast<int>(integer(ctl["concurrency_cap"], "control.concurrency_cap"));
  if (s.control.concurrency_cap < 1)
    throw RangeError("control.concurrency_cap: must be at least 1");
  if (ctl.contains("crisis_triggers"))
    s.control.crisis_triggers = boolean(ctl["crisis_triggers"], "control.crisis_triggers");
  if (ctl.contains("window")) {
    const auto mode = text(ctl["window"], "control.window");
    if (mode == "remaining")
      s.control.window = WindowMode::Remaining;
    else if (mode == "rolling")
      s.control.window = WindowMode::Rolling;
    else
      throw SchemaError("control.window: expected \"remaining\" or \"rolling\"");
  }

  if (doc.contains("xgame")) {
    const auto &xg = doc["xgame"];
    expect_object(xg, "xgame", {},
                  {"game_weeks", "boundary_threshold", "max_phase_weeks",
                   "recalibration_threshold", "green_bound", "blue_plan_months"});
    if (xg.contains("game_weeks"))
      s.xgame.game_weeks = static_cast<int>(integer(xg["game_weeks"], "xgame.game_weeks"));
    if (xg.contains("boundary_threshold"))
      s.xgame.boundary_threshold = number(xg["boundary_threshold"], "xgame.boundary_threshold");
    if (xg.contains("max_phase_weeks"))
      s.xgame.max_phase_weeks = static_cast<int>(integer(xg["max_phase_weeks"], "xgame.max_phase_weeks"));
    if (xg.contains("recalibration_threshold"))
      s.xgame.recalibration_threshold =
          number(xg["recalibration_threshold"], "xgame.recalibration_threshold");
    if (xg.contains("green_bound"))
      s.xgame.green_bound = number(xg["green_bound"], "xgame.green_bound");
    if (xg.contains("blue_plan_months"))
      s.xgame.blue_plan_months = static_cast<int>(integer(xg["blue_plan_months"], "xgame.blue_plan_months"));
    if (s.xgame.game_weeks < 1 || s.xgame.max_phase_weeks < 1 || s.xgame.blue_plan_months < 1)
      throw RangeError("xgame: week and month counts must be positive");
    if (s.xgame.boundary_threshold <= 0 || s.xgame.recalibration_threshold < 0 ||
        s.xgame.green_bound < 0)
      throw RangeError("xgame: thresholds must be non-negative (boundary strictly positive)");
  }

  if (doc.contains("nextstate")) {
    const auto &ns = doc["nextstate"];
    expect_object(ns, "nextstate", {"milestones", "assumptions"},
                  {"end_state_months", "plant_perturbation"});
    NextStateSpec spec;
    if (ns.contains("end_state_months"))
      spec.path.horizon_months = static_cast<int>(integer(ns["end_state_months"], "nextstate.end_state_months"));
    if (ns.contains("plant_perturbation")) {
      spec.plant_perturbation = number(ns["plant_perturbation"], "nextstate.plant_perturbation");
      check_range(spec.plant_perturbation, 0.0, 1.0, "nextstate.plant_perturbation");
    }
    const auto &ms = array(ns["milestones"], "nextstate.milestones");
    int last_target = -1;
    for (std::size_t i = 0; i < ms.size(); ++i) {
      const auto p = index_path("nextstate.milestones", i);
      expect_object(ms[i], p, {"id", "terms", "target_month"}, {"description"});
      MilestonePredicate mp;
      mp.id = text(ms[i]["id"], p + ".id");
      if (ms[i].contains("description"))
        mp.description = text(ms[i]["description"], p + ".description");
      mp.target_month = static_cast<int>(integer(ms[i]["target_month"], p + ".target_month"));
      if (mp.target_month <= last_target)
        throw RangeError(p + ".target_month: target months must be strictly increasing");
      last_target = mp.target_month;
      const auto &terms = array(ms[i]["terms"], p + ".terms");
      if (terms.empty())
        throw SchemaError(p + ".terms: at least one term required");
      for (std::size_t t = 0; t < terms.size(); ++t) {
        const auto tp = index_path(p + ".terms", t);
        expect_object(terms[t], tp, {"variable", "op", "bound"});
        MilestoneTerm term;
        term.variable = s.variable_index(text(terms[t]["variable"], tp + ".variable"));
        term.comparison = parse_comparison(terms[t]["op"], tp + ".op");
        term.bound = number(terms[t]["bound"], tp + ".bound");
        check_range(term.bound, 0.0, 1.0, tp + ".bound");
        mp.terms.push_back(term);
      }
      spec.path.milestones.push_back(std::move(mp));
    }
    const auto &as = array(ns["assumptions"], "nextstate.assumptions");
    for (std::size_t i = 0; i < as.size(); ++i) {
      const auto p = index_path("nextstate.assumptions", i);
      expect_object(as[i], p, {"id", "mismatch_seed", "mismatch_level"}, {"weights"});
      AssumptionSet a;
      a.id = text(as[i]["id"], p + ".id");
      const auto aseed = integer(as[i]["mismatch_seed"], p + ".mismatch_seed");
      if (aseed < 0)
        throw RangeError(p + ".mismatch_seed: must be non-negative");
      a.mismatch_seed = static_cast<std::uint64_t>(aseed);
      a.mismatch_level = number(as[i]["mismatch_level"], p + ".mismatch_level");
      check_range(a.mismatch_level, 0.0, 1.0, p + ".mismatch_level");
      if (as[i].contains("weights")) {
        a.weights = vector_of(as[i]["weights"], n, p + ".weights");
        if ((a.weights->array() < 0.0).any() || !(a.weights->array() > 0.0).any())
          throw RangeError(p + ".weights: non-negative with at least one positive entry");
      }
      spec.assumptions.push_back(std::move(a));
    }
    s.nextstate = std::move(spec);
  }
  return s;
}

Scenario validate_scenario_text(std::string_view text, std::vector<std::string> *warnings) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error &e) {
    throw SchemaError(std::string("scenario is not valid JSON: ") + e.what());
  }
  return validate_scenario(doc, warnings);
}

std::string_view demo_scenario_text() { return kDemoScenarioJson; }

Scenario load_scenario(const std::string &path_or_name, std::vector<std::string> *warnings) {
  if (path_or_name == "demo")
    return validate_scenario_text(demo_scenario_text(), warnings);
  std::ifstream in(path_or_name, std::ios::binary);
  if (!in)
    throw SchemaError("cannot read scenario file '" + path_or_name + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return validate_scenario_text(buffer.str(), warnings);
}

json to_json(const Scenario &s) {
  json doc;
  doc["name"] = s.name;
  json vars = json::array();
  for (const auto &v : s.variables)
    vars.push_back({{"id", v.id},
                    {"category", std::string(to_string(v.category))},
                    {"label", v.label},
                    {"initial", v.initial}});
  doc["variables"] = vars;
  doc["plant"] = {{"coupling", to_rows(s.plant.dynamics.coupling)},
                  {"drift", to_array(s.plant.dynamics.drift)},
                  {"shock_std", to_array(s.plant.shock_std)}};
  json acts = json::array();
  for (const auto &a : s.actions) {
    json schedule = json::array();
    for (const auto &r : a.schedule)
      schedule.push_back({r.start, r.end});
    acts.push_back({{"id", a.id},
                    {"actor", std::string(to_string(a.actor))},
                    {"effect", to_array(a.effect)},
                    {"cost", a.cost},
                    {"min_duration_months", a.min_duration_months},
                    {"description", a.description},
                    {"schedule", schedule}});
  }
  doc["actions"] = acts;
  json crises = json::array();
  for (const auto &c : s.plant.crises)
    crises.push_back({{"id", c.id}, {"week", c.week}, {"shock", to_array(c.shock)}});
  doc["crises"] = crises;
  doc["mismatch"] = {{"level", s.mismatch.level},
                     {"seed", s.mismatch.seed},
                     {"prune_threshold", s.mismatch.prune_threshold}};
  json sources = json::array();
  for (const auto &src : s.observation.sources)
    sources.push_back({{"id", src.id},
                       {"bias", src.bias},
                       {"noise_std", src.noise_std},
                       {"delay_weeks", src.delay_weeks},
                       {"missing_prob", src.missing_prob},
                       {"reliability", src.reliability}});
  doc["observation"] = {{"sources", sources}};
  doc["objective"] = {{"goal", to_array(s.objective.goal)},
                      {"weights", to_array(s.objective.weights)},
                      {"action_cost_weight", s.objective.action_cost_weight},
                      {"discount", s.objective.discount}};
  json control = {{"horizon_months", s.control.horizon_months},
                  {"replan_period_months", s.control.replan_period_months},
                  {"concurrency_cap", s.control.concurrency_cap},
                  {"crisis_triggers", s.control.crisis_triggers},
                  {"window", s.control.window == WindowMode::Remaining ? "remaining" : "rolling"}};
  control["deviation_tau"] =
      std::isinf(s.control.deviation_tau) ? json(nullptr) : json(s.control.deviation_tau);
  control["budget"] = std::isinf(s.control.budget) ? json(nullptr) : json(s.control.budget);
  doc["control"] = control;
  doc["xgame"] = {{"game_weeks", s.xgame.game_weeks},
                  {"boundary_threshold", s.xgame.boundary_threshold},
                  {"max_phase_weeks", s.xgame.max_phase_weeks},
                  {"recalibration_threshold", s.xgame.recalibration_threshold},
                  {"green_bound", s.xgame.green_bound},
                  {"blue_plan_months", s.xgame.blue_plan_months}};
  if (s.nextstate) {
    json milestones = json::array();
    for (const auto &m : s.nextstate->path.milestones) {
      json terms = json::array();
      for (const auto &t : m.terms)
        terms.push_back({{"variable", s.variables[static_cast<std::size_t>(t.variable)].id},
                         {"op", t.comparison == Comparison::AtLeast ? ">=" : "<="},
                         {"bound", t.bound}});
      milestones.push_back({{"id", m.id},
                            {"description", m.description},
                            {"target_month", m.target_month},
                            {"terms", terms}});
    }
    json assumptions = json::array();
    for (const auto &a : s.nextstate->assumptions) {
      json item = {{"id", a.id},
                   {"mismatch_seed", a.mismatch_seed},
                   {"mismatch_level", a.mismatch_level}};
      if (a.weights)
        item["weights"] = to_array(*a.weights);
      assumptions.push_back(item);
    }
    doc["nextstate"] = {{"end_state_months", s.nextstate->path.horizon_months},
                        {"plant_perturbation", s.nextstate->plant_perturbation},
                        {"milestones", milestones},
                        {"assumptions", assumptions}};
  }
  return doc;
}

std::string scenario_hash(const Scenario &scenario) { return sha256_hex(to_json(scenario).dump()); }

json to_json(const ActionPlan &plan, const Scenario &scenario) {
  json acts = json::array();
  for (const auto &a : plan.activations)
    acts.push_back({{"action", scenario.actions[static_cast<std::size_t>(a.action)].id},
                    {"start_month", a.start_month},
                    {"end_month", a.end_month}});
  return {{"start_month", plan.start_month},
          {"horizon_months", plan.horizon_months},
          {"activations", acts}};
}

ActionPlan plan_from_json(const json &doc, const Scenario &scenario) {
  expect_object(doc, "plan", {"start_month", "horizon_months", "activations"});
  ActionPlan plan;
  plan.start_month = static_cast<int>(integer(doc["start_month"], "plan.start_month"));
  plan.horizon_months = static_cast<int>(integer(doc["horizon_months"], "plan.horizon_months"));
  const auto &acts = array(doc["activations"], "plan.activations");
  for (std::size_t i = 0; i < acts.size(); ++i) {
    const auto p = index_path("plan.activations", i);
    expect_object(acts[i], p, {"action", "start_month", "end_month"});
    Activation a;
    try {
      a.action = scenario.action_index(text(acts[i]["action"], p + ".action"));
    } catch (const ConstraintError &e) {
      throw ConstraintError(p + ".action: " + e.what());
    }
    a.start_month = static_cast<int>(integer(acts[i]["start_month"], p + ".start_month"));
    a.end_month = static_cast<int>(integer(acts[i]["end_month"], p + ".end_month"));
    plan.activations.push_back(a);
  }
  plan.canonicalize();
  return plan;
}

} // namespace pmesii
