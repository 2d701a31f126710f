#pragma once

#include "pmesii/domain.hpp"
#include "pmesii/scenario_io.hpp"

#include <json.hpp>

#include <random>
#include <string>
#include <vector>

namespace pmesii::test {

using nlohmann::json;

/// Two-variable scenario with one Blue action, zero dynamics, a perfect
/// observation source and no crises. Tests edit the document and validate it.
inline json tiny_document() {
  return json::parse(R"({
    "name": "tiny",
    "variables": [
      {"id": "gov", "category": "Political", "label": "Governance", "initial": 0.5},
      {"id": "mood", "category": "Social", "label": "Public mood", "initial": 0.7}
    ],
    "plant": {"coupling": [[0, 0], [0, 0]], "drift": [0, 0], "shock_std": [0, 0]},
    "crises": [],
    "actions": [
      {"id": "aid", "actor": "Blue", "description": "", "cost": 1.0, "min_duration_months": 1,
       "effect": [0.05, 0.0]}
    ],
    "mismatch": {"level": 0.0, "seed": 1, "prune_threshold": 0.0},
    "observation": {"sources": [
      {"id": "census", "bias": 0.0, "noise_std": 0.0, "delay_weeks": 0, "missing_prob": 0.0,
       "reliability": 1.0}
    ]},
    "objective": {"goal": [0.6, 0.6], "weights": [1.0, 1.0], "action_cost_weight": 0.0,
                  "discount": 1.0},
    "control": {"horizon_months": 6, "replan_period_months": 3, "deviation_tau": null,
                "budget": null, "concurrency_cap": 1}
  })");
}

inline Scenario tiny_scenario() { return validate_scenario(tiny_document()); }

inline Scenario demo() { return load_scenario("demo"); }

/// Demo scenario with every noise and mismatch source switched off.
inline Scenario quiet_demo() {
  Scenario s = demo();
  s.mismatch.level = 0.0;
  s.plant.shock_std.setZero();
  s.plant.crises.clear();
  for (auto &src : s.observation.sources) {
    src.bias = 0.0;
    src.noise_std = 0.0;
    src.missing_prob = 0.0;
    src.delay_weeks = 0;
  }
  return s;
}

inline Vector random_vector(std::mt19937_64 &rng, Index n, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vector v(n);
  for (Index i = 0; i < n; ++i)
    v[i] = u(rng);
  return v;
}

} // namespace pmesii::test
