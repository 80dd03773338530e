#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "scanplan/sim.hpp"

namespace scanplan {

using ConfigTree = nlohmann::ordered_json;

/// Every tunable with its default. Angles are in degrees, rates in deg/s.
ConfigTree default_config_tree();

/// Overlays `patch` onto `base`. Keys absent from `base` are rejected with a
/// diagnostic naming the dotted key path.
void merge_config(ConfigTree& base, const ConfigTree& patch, const std::string& prefix = "");

/// Applies "a.b.c=value". The value is parsed as JSON when possible and as a
/// plain string otherwise.
void apply_override(ConfigTree& tree, const std::string& assignment);

/// Reads a scenario file and overlays it on the defaults.
ConfigTree load_scenario(const std::string& path);

SimConfig config_from_tree(const ConfigTree& tree);

/// Value at a dotted key path; throws InvalidQuery when absent.
const ConfigTree& config_value(const ConfigTree& tree, const std::string& key);

}  // namespace scanplan
