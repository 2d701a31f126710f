#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"

#include "pmesii/errors.hpp"
#include "pmesii/model.hpp"
#include "pmesii/plant.hpp"

#include <algorithm>
#include <random>

using namespace pmesii;

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

Scenario coupled_tiny() {
  auto d = test::tiny_document();
  d["plant"]["coupling"] = nlohmann::json::parse("[[0.05, 0.0], [0.02, -0.03]]");
  d["plant"]["drift"] = nlohmann::json::array({0.001, 0.0});
  d["actions"][0]["effect"] = nlohmann::json::array({0.01, 0.0});
  return validate_scenario(d);
}

} // namespace

TEST_CASE("derive_model") {
  const Scenario s = test::demo();
  const auto &plant = s.plant.dynamics;
  SUBCASE("zero mismatch reproduces the plant") {
    const ModelParams m = derive_model(plant, 0.0, 7, 0.5);
    CHECK(m.dynamics == plant);
  }
  SUBCASE("deterministic") {
    CHECK(derive_model(plant, 0.5, 7, 0.01) == derive_model(plant, 0.5, 7, 0.01));
    CHECK_FALSE(derive_model(plant, 0.5, 7, 0.01) == derive_model(plant, 0.5, 8, 0.01));
  }
  SUBCASE("total pruning") {
    const ModelParams m = derive_model(plant, 0.5, 7, 10.0);
    CHECK(m.dynamics.coupling.isZero(0.0));
  }
  SUBCASE("perturbation stays within the multiplicative band") {
    const ModelParams m = derive_model(plant, 0.25, 3, 0.0);
    for (Index i = 0; i < plant.coupling.size(); ++i) {
      const double a = plant.coupling.data()[i], b = m.dynamics.coupling.data()[i];
      CHECK(std::abs(b - a) <= 0.25 * std::abs(a) + 1e-15);
    }
  }
  SUBCASE("range") {
    CHECK_THROWS_AS(derive_model(plant, -0.1, 1, 0.0), RangeError);
    CHECK_THROWS_AS(derive_model(plant, 1.5, 1, 0.0), RangeError);
  }
}

TEST_CASE("forecast matches the plant at zero mismatch and zero noise") {
  Scenario s = test::quiet_demo();
  const ModelParams m = derive_model(s.plant.dynamics, 0.0, 1, 0.0);
  ActionPlan plan{0, 18, {{s.action_index("security_ops"), 0, 5}, {s.action_index("economic_aid"), 3, 8}}};
  const auto red = scripted_activations(s.actions, 0, 18);
  const ForecastTrajectory f = forecast(m, s.initial_state(), plan, red, s.actions, s.objective, 72);

  std::vector<Activation> all = plan.activations;
  all.insert(all.end(), red.begin(), red.end());
  const Matrix u = expand_controls(all, static_cast<Index>(s.actions.size()), 0, 72);
  const Trajectory truth = simulate_plant(s.plant, s.initial_state(), u, 99, 72);
  CHECK(f.path == truth);
  // Pure: repeated calls agree bit for bit.
  CHECK(forecast(m, s.initial_state(), plan, red, s.actions, s.objective, 72).path == f.path);
}

TEST_CASE("empty plan on zero dynamics is constant") {
  const Scenario s = test::tiny_scenario();
  const ModelParams m = derive_model(s.plant.dynamics, 0.0, 1, 0.0);
  const auto f = forecast(m, s.initial_state(), ActionPlan{0, 6, {}}, {}, s.actions, s.objective, 24);
  for (Index w = 0; w < f.path.weeks(); ++w)
    CHECK(Vector(f.path.values.col(w)) == s.initial_state().values);
}

TEST_CASE("two-variable forecast against a hand iteration") {
  const Scenario s = coupled_tiny();
  const ModelParams m = derive_model(s.plant.dynamics, 0.0, 1, 0.0);
  const ActionPlan plan{0, 6, {{0, 0, 2}}};
  const auto f = forecast(m, s.initial_state(), plan, {}, s.actions, s.objective, 12);
  double a = 0.5, b = 0.7;
  for (int w = 1; w <= 12; ++w) {
    const double u = w - 1 < 12 ? 1.0 : 0.0;
    const double na = a + 0.05 * (a - 0.5) + 0.0 * (b - 0.5) + 0.01 * u + 0.001;
    const double nb = b + 0.02 * (a - 0.5) - 0.03 * (b - 0.5);
    a = std::clamp(na, 0.0, 1.0);
    b = std::clamp(nb, 0.0, 1.0);
    CHECK(f.path.at(w)[0] == doctest::Approx(a).epsilon(1e-13));
    CHECK(f.path.at(w)[1] == doctest::Approx(b).epsilon(1e-13));
  }
}

TEST_CASE("state cost") {
  SUBCASE("goal on a constant path costs nothing") {
    Objective o{Vector::Constant(2, 0.4), Vector::Ones(2), 0.0, 1.0};
    CHECK(state_cost(Trajectory{0, Matrix::Constant(2, 9, 0.4)}, o) == 0.0);
  }
  SUBCASE("drift path summed by hand over eight weeks") {
    auto d = test::tiny_document();
    d["plant"]["drift"] = nlohmann::json::array({0.01, -0.02});
    d["objective"]["weights"] = nlohmann::json::array({2.0, 0.5});
    const Scenario s = validate_scenario(d);
    const ModelParams m = derive_model(s.plant.dynamics, 0.0, 1, 0.0);
    const auto f = forecast(m, s.initial_state(), ActionPlan{0, 6, {}}, {}, s.actions, s.objective, 8);
    double expected = 0.0;
    for (int t = 1; t <= 8; ++t) {
      const double a = 0.5 + 0.01 * t, b = 0.7 - 0.02 * t;
      expected += 2.0 * (a - 0.6) * (a - 0.6) + 0.5 * (b - 0.6) * (b - 0.6);
    }
    CHECK(f.cost == doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("discount weights later weeks less") {
    Objective o{Vector::Zero(1), Vector::Ones(1), 0.0, 0.5};
    const Trajectory t{0, Matrix::Constant(1, 3, 1.0)};
    CHECK(state_cost(t, o) == doctest::Approx(0.5 + 0.25));
  }
}

TEST_CASE("a beneficial action beats the empty plan") {
  const Scenario s = test::tiny_scenario();
  const ModelParams m = derive_model(s.plant.dynamics, 0.0, 1, 0.0);
  const auto empty = forecast(m, s.initial_state(), ActionPlan{0, 6, {}}, {}, s.actions, s.objective, 24);
  const auto acted = forecast(m, s.initial_state(), ActionPlan{0, 6, {{0, 0, 0}}}, {}, s.actions, s.objective, 24);
  CHECK(acted.cost < empty.cost);
}

TEST_CASE("forecast error") {
  const Vector w = Vector::Ones(3);
  Trajectory a{0, Matrix::Constant(3, 10, 0.5)};
  CHECK(forecast_error(a, a, w) == 0.0);
  Trajectory b = a;
  b.values.row(1).array() += 0.1;
  CHECK(forecast_error(a, b, w) == doctest::Approx(0.1).epsilon(1e-14));

  std::mt19937_64 rng(8);
  for (int k = 0; k < 20; ++k) {
    Trajectory p{0, Matrix(4, 15)}, o{0, Matrix(4, 15)};
    for (Index t = 0; t < 15; ++t) {
      p.values.col(t) = test::random_vector(rng, 4);
      o.values.col(t) = test::random_vector(rng, 4);
    }
    const Vector wt = test::random_vector(rng, 4, 0.0, 2.0);
    double sum = 0.0;
    for (Index t = 0; t < 15; ++t) {
      double sq = 0.0;
      for (Index i = 0; i < 4; ++i)
        sq += wt[i] * (p.values(i, t) - o.values(i, t)) * (p.values(i, t) - o.values(i, t));
      sum += std::sqrt(sq);
    }
    CHECK(forecast_error(p, o, wt) == doctest::Approx(sum / 15).epsilon(1e-13));
  }
  CHECK_THROWS_AS(forecast_error(a, Trajectory{0, Matrix::Zero(3, 9)}, w), DimensionError);
}

TEST_CASE("median forecast error grows with mismatch") {
  const Scenario s = test::quiet_demo();
  const Matrix u = Matrix::Zero(static_cast<Index>(s.actions.size()), 72);
  const Trajectory truth = rollout(s.plant.dynamics, s.initial_state(), u);
  double previous = -1.0;
  for (double eps : {0.0, 0.25, 0.5, 1.0}) {
    std::vector<double> errors;
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
      const ModelParams m = derive_model(s.plant.dynamics, eps, seed, s.mismatch.prune_threshold);
      errors.push_back(forecast_error(rollout(m.dynamics, s.initial_state(), u), truth, s.objective.weights));
    }
    const double med = median(errors);
    CHECK(med >= previous);
    previous = med;
  }
}

TEST_CASE("recalibration") {
  SUBCASE("too few transitions") {
    const Scenario s = coupled_tiny();
    const ModelParams m = derive_model(s.plant.dynamics, 0.0, 1, 0.0);
    std::vector<Transition> h(3, Transition{Vector::Constant(2, 0.5), Vector::Zero(1), Vector::Constant(2, 0.5)});
    CHECK_THROWS_AS(recalibrate(m, h), InsufficientDataError);
  }

  SUBCASE("history generated by the model leaves it unchanged") {
    const Scenario s = coupled_tiny();
    const ModelParams m = derive_model(s.plant.dynamics, 0.0, 1, 0.0);
    Matrix u = Matrix::Zero(1, 40);
    u.leftCols(10).setOnes();
    const Trajectory t = rollout(m.dynamics, s.initial_state(), u);
    const ModelParams r = recalibrate(m, transitions_of(t, u));
    CHECK((r.dynamics.coupling - m.dynamics.coupling).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((r.dynamics.effects - m.dynamics.effects).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((r.dynamics.drift - m.dynamics.drift).cwiseAbs().maxCoeff() < 1e-9);
  }

  SUBCASE("injected coupling disparity against a closed-form ridge oracle") {
    // Row 0 has two free parameters: coupling (0,1) and drift. Solve the
    // 2x2 ridge normal equations with Cramer's rule.
    LinearDynamics<double> model{Matrix::Zero(2, 2), Matrix::Zero(2, 1), Vector::Zero(2)};
    model.coupling(0, 1) = 0.03;
    model.drift[0] = 0.002;
    model.coupling(1, 1) = -0.02;
    LinearDynamics<double> plant = model;
    plant.coupling(0, 1) += 0.05;

    std::mt19937_64 rng(4);
    std::vector<Transition> history;
    for (int k = 0; k < 40; ++k) {
      const Vector x = test::random_vector(rng, 2, 0.3, 0.7);
      const Vector u = Vector::Zero(1);
      history.push_back({x, u, propagate(plant, x, u, Vector(Vector::Zero(2)))});
    }
    const double ridge = 1e-3;
    double g11 = 0, g12 = 0, g22 = 0, r1 = 0, r2 = 0;
    for (const auto &tr : history) {
      const double f1 = tr.state[1] - 0.5, f2 = 1.0, y = tr.next[0] - tr.state[0];
      g11 += f1 * f1;
      g12 += f1 * f2;
      g22 += f2 * f2;
      r1 += f1 * y;
      r2 += f2 * y;
    }
    const double N = static_cast<double>(history.size());
    const double a11 = g11 / N + ridge, a12 = g12 / N, a22 = g22 / N + ridge;
    const double b1 = r1 / N + ridge * 0.03, b2 = r2 / N + ridge * 0.002;
    const double det = a11 * a22 - a12 * a12;
    const double coupling = (b1 * a22 - a12 * b2) / det;
    const double drift = (a11 * b2 - a12 * b1) / det;

    const ModelParams before{model, {}};
    const ModelParams after = recalibrate(before, history);
    CHECK(after.dynamics.coupling(0, 1) == doctest::Approx(coupling).epsilon(1e-10));
    CHECK(after.dynamics.drift[0] == doctest::Approx(drift).epsilon(1e-10));
    CHECK(after.dynamics.coupling(0, 0) == 0.0);
    CHECK(std::abs(after.dynamics.coupling(0, 1) - 0.08) < std::abs(0.03 - 0.08));
    CHECK(one_step_error(after.dynamics, history) < one_step_error(model, history));
    CHECK(after.provenance.recalibrations == 1);
  }

  SUBCASE("never worse in sample on perturbed plants") {
    const Scenario s = test::demo();
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const ModelParams m = derive_model(s.plant.dynamics, 0.5, seed, s.mismatch.prune_threshold);
      Matrix u = Matrix::Zero(static_cast<Index>(s.actions.size()), 48);
      u.row(static_cast<Index>(seed % 4)).segment(8, 16).setOnes();
      const Trajectory t = simulate_plant(s.plant, s.initial_state(), u, seed, 48);
      const auto history = transitions_of(t, u);
      const ModelParams r = recalibrate(m, history);
      CHECK(one_step_error(r.dynamics, history) <= one_step_error(m.dynamics, history));
    }
  }
}
