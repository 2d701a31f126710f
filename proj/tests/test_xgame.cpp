#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"

#include "pmesii/errors.hpp"
#include "pmesii/hash.hpp"
#include "pmesii/xgame.hpp"

#include <random>
#include <set>

using namespace pmesii;

namespace {

Trajectory flat(Index n, int weeks, double value = 0.5) {
  return Trajectory{0, Matrix::Constant(n, weeks + 1, value)};
}

// Straight scan of the boundary rules, one week at a time.
Boundary scan_boundary(const Trajectory &a, int from, const BoundaryPolicy &p) {
  for (int w = from + 1;; ++w) {
    if (w > p.game_end || w > a.last_week())
      return {w - 1, w - 1 == from + p.max_phase_weeks ? BoundaryReason::MaxLength : BoundaryReason::GameEnd};
    for (int c : p.crisis_weeks)
      if (c == w)
        return {w, BoundaryReason::Crisis};
    for (Index i = 0; i < a.values.rows(); ++i)
      if (p.weights[i] > 0.0 && std::abs(a.values(i, w) - a.values(i, from)) >= p.threshold)
        return {w, BoundaryReason::Threshold};
    if (w == from + p.max_phase_weeks)
      return {w, BoundaryReason::MaxLength};
  }
}

// Variables reachable from `root` in at most `depth` hops of nonzero coupling,
// by repeated boolean matrix products.
std::set<int> reachable(const Matrix &coupling, int root, int depth) {
  const Index n = coupling.rows();
  Eigen::MatrixXi adj = (coupling.array() != 0.0).cast<int>();
  Eigen::RowVectorXi frontier = Eigen::RowVectorXi::Zero(n);
  frontier[root] = 1;
  Eigen::RowVectorXi seen = frontier;
  for (int d = 0; d < depth; ++d) {
    frontier = ((frontier * adj).array() > 0).cast<int>();
    seen = ((seen + frontier).array() > 0).cast<int>();
  }
  std::set<int> out;
  for (Index i = 0; i < n; ++i)
    if (seen[i])
      out.insert(static_cast<int>(i));
  return out;
}

void collect(const DependencyNode &node, std::vector<int> &out, int level, int &deepest) {
  out.push_back(node.variable);
  deepest = std::max(deepest, level);
  for (const auto &c : node.children)
    collect(c, out, level + 1, deepest);
}

LedgerEntry entry(LedgerKind kind, std::string var, int phase = 0) {
  return LedgerEntry{kind, {std::move(var)}, "note", phase, std::nullopt};
}

void submit_scripted(XGameSession &s) {
  const auto cells = scripted_cells();
  collect_cell_plans(s, s.phase(), cells);
}

} // namespace

TEST_CASE("white assessment") {
  const Scenario s = test::tiny_scenario();
  Trajectory f = flat(2, 10, 0.5);
  f.values(1, 4) = 0.98;

  SUBCASE("no adjustments leaves the forecast untouched") {
    const auto a = white_assess(f, {}, s);
    CHECK(a.values == f);
    CHECK(a.applied.empty());
  }
  SUBCASE("replace and delta touch only their cells") {
    const std::vector<WhiteAdjustment> adj{
        {"gov", 2, 3, WhiteAdjustment::Mode::Replace, 0.8, "local reports"},
        {"mood", 4, 5, WhiteAdjustment::Mode::Delta, 0.05, ""}};
    const auto a = white_assess(f, adj, s);
    Matrix expected = f.values;
    expected(0, 2) = expected(0, 3) = 0.8;
    expected(1, 4) = 1.0;
    expected(1, 5) = 0.55;
    CHECK(a.values.values.isApprox(expected, 1e-15));
    REQUIRE(a.applied.size() == 2);
    CHECK_FALSE(a.applied[0].clamped);
    CHECK(a.applied[1].clamped);
  }
  SUBCASE("later adjustments apply on top of earlier ones") {
    const std::vector<WhiteAdjustment> adj{{"gov", 1, 1, WhiteAdjustment::Mode::Replace, 0.2, ""},
                                           {"gov", 1, 1, WhiteAdjustment::Mode::Delta, 0.1, ""}};
    CHECK(white_assess(f, adj, s).values.values(0, 1) == doctest::Approx(0.3).epsilon(1e-15));
  }
  SUBCASE("rejections") {
    const std::vector<WhiteAdjustment> high{{"gov", 1, 1, WhiteAdjustment::Mode::Replace, 1.2, ""}};
    CHECK_THROWS_AS(white_assess(f, high, s), RangeError);
    const std::vector<WhiteAdjustment> late{{"gov", 9, 11, WhiteAdjustment::Mode::Delta, 0.1, ""}};
    CHECK_THROWS_AS(white_assess(f, late, s), RangeError);
    const std::vector<WhiteAdjustment> unknown{{"nope", 1, 1, WhiteAdjustment::Mode::Delta, 0.1, ""}};
    CHECK_THROWS_AS(white_assess(f, unknown, s), UnknownVariableError);
  }
}

TEST_CASE("phase boundary detection") {
  BoundaryPolicy p;
  p.weights = Vector::Ones(3);
  p.game_end = 520;
  const Trajectory still = flat(3, 520);

  CHECK(detect_phase_boundary(still, 0, p) == Boundary{104, BoundaryReason::MaxLength});
  CHECK(detect_phase_boundary(still, 450, p) == Boundary{520, BoundaryReason::GameEnd});
  p.crisis_weeks = {26};
  CHECK(detect_phase_boundary(still, 0, p) == Boundary{26, BoundaryReason::Crisis});
  CHECK(detect_phase_boundary(still, 26, p) == Boundary{130, BoundaryReason::MaxLength});

  Trajectory moving = still;
  for (int w = 0; w <= 520; ++w)
    moving.values(1, w) = 0.5 + w / 64.0;
  p.crisis_weeks.clear();
  CHECK(detect_phase_boundary(moving, 0, p).week == 13);
  CHECK(detect_phase_boundary(moving, 0, p).reason == BoundaryReason::Threshold);
  p.weights[1] = 0.0;
  CHECK(detect_phase_boundary(moving, 0, p).reason == BoundaryReason::MaxLength);
}

TEST_CASE("phase boundary agrees with a week-by-week scan") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> step(-0.03, 0.03);
  std::uniform_int_distribution<int> week(1, 300);
  for (int trial = 0; trial < 200; ++trial) {
    Trajectory a{0, Matrix(3, 301)};
    a.values.col(0) = test::random_vector(rng, 3, 0.3, 0.7);
    for (int w = 1; w <= 300; ++w)
      for (Index i = 0; i < 3; ++i)
        a.values(i, w) = std::clamp(a.values(i, w - 1) + step(rng), 0.0, 1.0);
    BoundaryPolicy p;
    p.threshold = 0.05 + 0.2 * std::uniform_real_distribution<double>(0, 1)(rng);
    p.max_phase_weeks = 20 + trial % 90;
    p.game_end = 250;
    p.weights = test::random_vector(rng, 3);
    p.weights[trial % 3] = 0.0;
    if (trial % 2)
      p.crisis_weeks = {week(rng), week(rng)};
    const int from = trial % 200;
    CHECK(detect_phase_boundary(a, from, p) == scan_boundary(a, from, p));
  }
}

TEST_CASE("reconciliation ledger") {
  Ledger ledger;
  CHECK(ledger.head() == std::string(64, '0'));
  CHECK(ledger.verify());
  ledger.append(entry(LedgerKind::NovelEffect, "gov"));
  ledger.append(entry(LedgerKind::DetailAccepted, "mood"));
  ledger.append(entry(LedgerKind::NovelEffect, "mood", 1));
  CHECK(ledger.count(LedgerKind::NovelEffect) == 2);
  CHECK(ledger.count(LedgerKind::Counterposition) == 0);
  CHECK(ledger.by_kind(LedgerKind::DetailAccepted).size() == 1);
  CHECK(ledger.by_phase(1).size() == 1);
  CHECK(ledger.verify());

  std::string chain(64, '0');
  for (const auto &e : ledger.entries())
    chain = sha256_hex(chain + to_json(e).dump());
  CHECK(ledger.head() == chain);

  for (auto kind : {LedgerKind::DetailAccepted, LedgerKind::PersuadedByTrace, LedgerKind::NovelEffect,
                    LedgerKind::AssumptionSurfaced, LedgerKind::Counterposition})
    CHECK(parse_ledger_kind(to_string(kind)) == kind);
  CHECK_THROWS_AS(parse_ledger_kind("GOSSIP"), SchemaError);
  const auto e = entry(LedgerKind::Counterposition, "gov", 3);
  CHECK(ledger_entry_from_json(to_json(e)) == e);
}

TEST_CASE("dependency trace") {
  CHECK(trace_dependencies(Matrix::Zero(4, 4), 2, 3).children.empty());
  Matrix one = Matrix::Zero(4, 4);
  one(0, 2) = 0.3;
  const auto t = trace_dependencies(one, 0, 1);
  REQUIRE(t.children.size() == 1);
  CHECK(t.children[0].variable == 2);
  CHECK(t.children[0].coupling == 0.3);
  CHECK(trace_dependencies(one, 2, 5).children.empty());
  CHECK_THROWS_AS(trace_dependencies(one, 4, 1), UnknownVariableError);
  CHECK_THROWS_AS(trace_dependencies(one, 0, 0), PreconditionError);

  Matrix chain = Matrix::Zero(4, 4);
  chain(0, 1) = chain(1, 2) = chain(2, 3) = 0.1;
  for (int depth = 1; depth <= 4; ++depth) {
    std::vector<int> nodes;
    int deepest = 0;
    collect(trace_dependencies(chain, 0, depth), nodes, 0, deepest);
    CHECK(static_cast<int>(nodes.size()) == std::min(depth, 3) + 1);
    CHECK(deepest == std::min(depth, 3));
  }
}

TEST_CASE("dependency trace covers exactly the reachable variables") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Index n = 3 + trial % 8;
    Matrix a = Matrix::Zero(n, n);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j)
        if (u(rng) < 0.2)
          a(i, j) = u(rng) - 0.5;
    const int root = static_cast<int>(trial % n), depth = 1 + trial % 4;
    std::vector<int> nodes;
    int deepest = 0;
    collect(trace_dependencies(a, root, depth), nodes, 0, deepest);
    const std::set<int> unique(nodes.begin(), nodes.end());
    CHECK(unique.size() == nodes.size());
    CHECK(unique == reachable(a, root, depth));
    CHECK(deepest <= depth);
  }
}

TEST_CASE("novel effects") {
  Trajectory f{0, Matrix::Constant(4, 3, 0.5)};
  f.values(0, 2) = 0.9;
  f.values(1, 2) = 0.2;
  f.values(2, 2) = 0.6;
  f.values(3, 2) = 0.1;
  const std::vector<int> watch{3};
  const auto out = novel_effects(f, watch, 0.15);
  REQUIRE(out.size() == 2);
  CHECK(out[0].variable == 0);
  CHECK(out[0].change == doctest::Approx(0.4));
  CHECK(out[1].variable == 1);
  CHECK(out[1].change == doctest::Approx(-0.3));
  CHECK_THROWS_AS(novel_effects(f, watch, 0.0), PreconditionError);

  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    Trajectory g{0, Matrix(6, 5)};
    for (int w = 0; w < 5; ++w)
      g.values.col(w) = test::random_vector(rng, 6);
    const std::vector<int> w{trial % 6};
    const auto r = novel_effects(g, w, 0.2);
    std::size_t expected = 0;
    for (Index i = 0; i < 6; ++i)
      expected += i != trial % 6 && std::abs(g.values(i, 4) - g.values(i, 0)) >= 0.2;
    CHECK(r.size() == expected);
    for (std::size_t k = 1; k < r.size(); ++k)
      CHECK(std::abs(r[k - 1].change) >= std::abs(r[k].change));
  }
}

TEST_CASE("cell submissions") {
  const Scenario s = test::demo();
  XGameSession game(s, 3);
  CHECK(game.phase() == 0);
  CHECK(game.pending_roles().size() == 3);
  CHECK_THROWS_AS(game.forecast(), PreconditionError);

  const int sec = s.action_index("security_ops"), aid = s.action_index("governance_aid");
  const int offensive = s.action_index("insurgent_offensive");
  const int cohesion = s.variable_index("soc_cohesion"), gov = s.variable_index("pol_governance");

  SUBCASE("out of turn") {
    CHECK_THROWS_AS(game.submit_blue(1, ActionPlan{0, 18, {}}), OutOfTurnError);
    CHECK_THROWS_AS(game.submit_green(2, GreenPolicy{}), OutOfTurnError);
  }
  SUBCASE("Blue over budget") {
    const ActionPlan lavish{0, 18, {{sec, 0, 17}, {aid, 0, 17}}};
    CHECK_THROWS_AS(game.submit_blue(0, lavish), ConstraintError);
    CHECK_THROWS_AS(game.submit_blue(0, ActionPlan{0, 18, {{offensive, 0, 2}}}), ConstraintError);
  }
  SUBCASE("Green bounds") {
    CHECK_THROWS_AS(game.submit_green(0, GreenPolicy{{{cohesion, 0.06}}}), ConstraintError);
    CHECK_THROWS_AS(game.submit_green(0, GreenPolicy{{{gov, 0.01}}}), ConstraintError);
    CHECK_THROWS_AS(game.submit_green(0, GreenPolicy{{{cohesion, 0.01}, {cohesion, 0.01}}}),
                    ConstraintError);
    CHECK_NOTHROW(game.submit_green(0, GreenPolicy{{{cohesion, -0.05}}}));
  }
  SUBCASE("forecast spans the game") {
    submit_scripted(game);
    CHECK(game.pending_roles().empty());
    const auto &f = game.forecast();
    CHECK(f.first_week == 0);
    CHECK(f.weeks() == 521);
    CHECK(f.values.minCoeff() >= 0.0);
    CHECK(f.values.maxCoeff() <= 1.0);
    const auto b = game.proposed_boundary();
    CHECK(b.week <= 26);
    CHECK((b.reason == BoundaryReason::Crisis) == (b.week == 26));
  }
  SUBCASE("ledger entries") {
    CHECK_THROWS_AS(game.record(entry(LedgerKind::NovelEffect, "nope")), UnknownVariableError);
    CHECK_THROWS_AS(game.record(entry(LedgerKind::NovelEffect, "pol_governance", 1)), OutOfTurnError);
    CHECK(game.record(entry(LedgerKind::NovelEffect, "pol_governance")) == 0);
    CHECK(game.ledger().verify());
  }
  SUBCASE("waiting for a missing cell times out") {
    CHECK_THROWS_AS(game.wait_for_inputs(std::chrono::milliseconds(5)), TimeoutError);
  }
}

TEST_CASE("scripted game") {
  static const Scenario s = test::demo();
  static const auto result = run_xgame(s, 11);
  const auto &phases = result.phases;
  REQUIRE(!phases.empty());

  SUBCASE("phases partition the game") {
    CHECK(phases.front().start_week == 0);
    CHECK(phases.back().end_week == 520);
    for (std::size_t k = 0; k < phases.size(); ++k) {
      CHECK(phases[k].index == static_cast<int>(k));
      CHECK(phases[k].end_week > phases[k].start_week);
      CHECK(phases[k].end_week - phases[k].start_week <= s.xgame.max_phase_weeks);
      if (k > 0)
        CHECK(phases[k].start_week == phases[k - 1].end_week);
    }
    BoundaryPolicy policy;
    policy.threshold = s.xgame.boundary_threshold;
    policy.max_phase_weeks = s.xgame.max_phase_weeks;
    policy.game_end = 520;
    policy.crisis_weeks = {26};
    policy.weights = s.objective.weights;
    for (const auto &p : phases)
      CHECK(detect_phase_boundary(p.assessment.values, p.start_week, policy) ==
            Boundary{p.end_week, p.boundary_reason});
  }
  SUBCASE("recalibration follows the previous phase's error") {
    CHECK_FALSE(phases.front().recalibrated);
    for (std::size_t k = 1; k < phases.size(); ++k)
      CHECK(phases[k].recalibrated == (phases[k - 1].forecast_error > s.xgame.recalibration_threshold));
  }
  SUBCASE("run log") {
    CHECK(result.log.weeks.size() == 521);
    CHECK(result.log.episodes.size() == phases.size());
    CHECK(result.log.truth().values.minCoeff() >= 0.0);
  }
  SUBCASE("deterministic and replayable") {
    CHECK(run_xgame(s, 11).digest == result.digest);
    CHECK(run_xgame(s, 12).digest != result.digest);
    const auto again = XGameSession::replay(s, 11, {}, result.events);
    CHECK(again->finished());
    CHECK(again->digest() == result.digest);
  }
}

TEST_CASE("a regime shift shows up as forecast error") {
  Scenario s = test::quiet_demo();
  s.xgame.game_weeks = 208;
  const auto calm = run_xgame(s, 2);
  for (const auto &p : calm.phases) {
    CHECK(p.forecast_error < 1e-9);
    CHECK_FALSE(p.recalibrated);
  }
  const int gov = s.variable_index("pol_governance"), sec = s.variable_index("mil_security");
  XGameOptions options;
  options.shift = RegimeShift{1, gov, sec, 0.05};
  const auto shifted = run_xgame(s, 2, scripted_cells(), options);
  REQUIRE(shifted.phases.size() >= 3);
  CHECK(shifted.phases[0].forecast_error < 1e-9);
  CHECK(shifted.phases[1].forecast_error > 1e-6);
  bool recalibrated = false;
  for (const auto &p : shifted.phases)
    recalibrated = recalibrated || p.recalibrated;
  CHECK(recalibrated);
}

TEST_CASE("JSON forms round trip") {
  const Scenario s = test::demo();
  const WhiteAdjustment a{"pol_governance", 3, 9, WhiteAdjustment::Mode::Delta, -0.02, "field report"};
  CHECK(adjustment_from_json(to_json(a)) == a);
  const GreenPolicy g{{{s.variable_index("soc_support"), 0.01}}};
  CHECK(green_from_json(to_json(g, s), s) == g);
  CHECK_THROWS_AS(adjustment_from_json(nlohmann::json::parse(R"({"variable":"x","first_week":1,"last_week":2,"mode":"swap","value":0})")),
                  SchemaError);
  for (auto role : {CellRole::Blue, CellRole::Red, CellRole::Green, CellRole::White, CellRole::ModelingTeam})
    CHECK(parse_role(to_string(role)) == role);
}
