#include <doctest.h>

#include <filesystem>
#include <functional>
#include <fstream>
#include <numbers>

#include "scanplan/config.hpp"

using namespace scanplan;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const InvalidQuery& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("defaults round-trip into the same SimConfig") {
  const auto tree = default_config_tree();
  const SimConfig c = config_from_tree(tree);
  const SimConfig d;
  CHECK(c.seed == d.seed);
  CHECK(c.controller.fu_mpc);
  CHECK(c.time_limit == d.time_limit);
  CHECK(c.sensor.n_beams == d.sensor.n_beams);
  CHECK(c.mpc.horizon == d.mpc.horizon);
  CHECK(c.mpc.limits.u_max == doctest::Approx(d.mpc.limits.u_max).epsilon(1e-14));
  CHECK(c.table.half_window == doctest::Approx(d.table.half_window).epsilon(1e-14));
  CHECK(c.frontier.max_samples == d.frontier.max_samples);
  CHECK(config_value(tree, "mpc.u_max_deg").get<double>() == doctest::Approx(720.0));
}

TEST_CASE("unknown and mistyped keys are named in the error") {
  auto tree = default_config_tree();
  CHECK(message_of([&] { apply_override(tree, "mpc.horizn=10"); }).find("'mpc.horizn'") !=
        std::string::npos);
  CHECK(message_of([&] { apply_override(tree, "sensor.rate=\"fast\""); }).find("'sensor.rate'") !=
        std::string::npos);
  CHECK(message_of([&] { merge_config(tree, {{"scene", {{"colour", 1}}}}); })
            .find("'scene.colour'") != std::string::npos);
  CHECK_THROWS_AS(config_value(tree, "weights.delta"), InvalidQuery);
  CHECK_THROWS_AS(config_value(tree, "weights..alpha"), InvalidQuery);
}

TEST_CASE("overrides parse numbers, booleans, arrays and bare strings") {
  auto tree = default_config_tree();
  apply_override(tree, "mpc.horizon=12");
  apply_override(tree, "explore=false");
  apply_override(tree, "scene.size=[30,8,4]");
  apply_override(tree, "controller=fixed:30");
  apply_override(tree, "scene.kind=cavern");
  apply_override(tree, "mpc.u_max_deg=360");
  const auto c = config_from_tree(tree);
  CHECK(c.mpc.horizon == 12);
  CHECK_FALSE(c.explore);
  CHECK(c.scene.size == Vec3(30, 8, 4));
  CHECK_FALSE(c.controller.fu_mpc);
  CHECK(c.controller.fixed_omega == doctest::Approx(30 * kDeg).epsilon(1e-14));
  CHECK(c.scene.kind == SceneKind::Cavern);
  CHECK(c.mpc.limits.u_max == doctest::Approx(2 * std::numbers::pi).epsilon(1e-14));

  CHECK_THROWS_AS(apply_override(tree, "horizon"), InvalidQuery);
  CHECK_THROWS_AS(apply_override(tree, "=3"), InvalidQuery);
  CHECK_THROWS_AS(apply_override(tree, "mpc.=3"), InvalidQuery);
  CHECK_THROWS_AS(apply_override(tree, "mpc=3"), InvalidQuery);
}

TEST_CASE("semantic errors surface from config_from_tree") {
  auto tree = default_config_tree();
  apply_override(tree, "completion=1.5");
  CHECK_THROWS_AS(config_from_tree(tree), InvalidQuery);
  tree = default_config_tree();
  apply_override(tree, "controller=pid");
  CHECK_THROWS_AS(config_from_tree(tree), InvalidQuery);
  tree = default_config_tree();
  apply_override(tree, "scene.size=[1,2]");
  CHECK_THROWS_AS(config_from_tree(tree), InvalidQuery);
  tree = default_config_tree();
  apply_override(tree, "mpc.horizon=2.5");
  CHECK_THROWS_AS(config_from_tree(tree), InvalidQuery);
}

TEST_CASE("shipped scenarios load") {
  for (const auto& entry : std::filesystem::directory_iterator(SCANPLAN_SCENARIO_DIR)) {
    if (entry.path().extension() != ".json") continue;
    CAPTURE(entry.path().string());
    const auto tree = load_scenario(entry.path().string());
    CHECK_NOTHROW(config_from_tree(tree));
  }
  const auto tree = load_scenario(std::string(SCANPLAN_SCENARIO_DIR) + "/cavern.json");
  CHECK(config_from_tree(tree).scene.kind == SceneKind::Cavern);
}

TEST_CASE("broken scenario files are rejected") {
  const auto dir = std::filesystem::temp_directory_path();
  const auto bad_json = dir / "scanplan_bad.json";
  const auto bad_key = dir / "scanplan_badkey.json";
  std::ofstream(bad_json) << "{ \"seed\": ";
  std::ofstream(bad_key) << "{ \"planner\": { \"speed\": 2 } }";
  CHECK_THROWS_AS(load_scenario(bad_json.string()), InvalidQuery);
  CHECK(message_of([&] { load_scenario(bad_key.string()); }).find("'planner.speed'") !=
        std::string::npos);
  CHECK_THROWS_AS(load_scenario((dir / "scanplan_missing_scenario.json").string()), InvalidQuery);
  std::filesystem::remove(bad_json);
  std::filesystem::remove(bad_key);
}
