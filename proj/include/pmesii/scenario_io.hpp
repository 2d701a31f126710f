#pragma once

#include "pmesii/domain.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace pmesii {

using json = nlohmann::json;

/// Parse and fully check a scenario document (strict: unknown keys rejected).
/// Non-fatal findings, such as a coupling matrix outside the recommended
/// stability envelope, are appended to `warnings` when given.
Scenario validate_scenario(const json &document, std::vector<std::string> *warnings = nullptr);
Scenario validate_scenario_text(std::string_view text, std::vector<std::string> *warnings = nullptr);

/// Load from a path, or the builtin "demo" scenario when path == "demo".
Scenario load_scenario(const std::string &path_or_name, std::vector<std::string> *warnings = nullptr);

json to_json(const Scenario &scenario);

/// Canonical scenario JSON text of the builtin desk-scale demo.
std::string_view demo_scenario_text();

/// Hex SHA-256 of the canonical serialization.
std::string scenario_hash(const Scenario &scenario);

json to_json(const ActionPlan &plan, const Scenario &scenario);
/// Plans on the wire name actions by id. Throws SchemaError / ConstraintError.
ActionPlan plan_from_json(const json &document, const Scenario &scenario);

} // namespace pmesii
